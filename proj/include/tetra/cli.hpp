// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace tetra::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

/// Runs one `tetra` invocation; args exclude the program name. Never throws:
/// failures print a one-line diagnostic to `err` and return an exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// SHA-1 over "blob <size>\0<content>", hex encoded (the git object id).
std::string git_blob_sha1(std::span<const std::uint8_t> content);

/// Applies TETRA_THREADS to the OpenMP runtime. Returns false if it is set but not a positive integer.
bool apply_thread_limit();

}  // namespace tetra::cli
