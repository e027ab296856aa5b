// SPDX-License-Identifier: Apache-2.0
#include "tetra/binary_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "tetra/error.hpp"

namespace tetra::io {

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::uint64_t ByteReader::get(int n) {
  if (remaining() < static_cast<std::size_t>(n)) fail("truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += static_cast<std::size_t>(n);
  return v;
}

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
  if (remaining() < n) fail("truncated");
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::string ByteReader::text(std::size_t n) {
  const auto b = bytes(n);
  return std::string(b.begin(), b.end());
}

void ByteReader::expect_end() const {
  if (remaining() != 0) fail(std::to_string(remaining()) + " trailing bytes");
}

void ByteReader::fail(const std::string& msg) const {
  throw DataError(what_ + ": " + msg + " (at byte " + std::to_string(pos_) + ")");
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

}  // namespace tetra::io
