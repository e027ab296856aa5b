// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tetra/quantize.hpp"

namespace tetra::index {

using quant::BinaryEmbedding;

/// popcount(a XOR b). Throws std::invalid_argument on a dim mismatch.
std::uint32_t hamming(const BinaryEmbedding& a, const BinaryEmbedding& b);
/// Dot product of the ±1 vectors, D - 2 * hamming.
std::int64_t sign_dot(const BinaryEmbedding& a, const BinaryEmbedding& b);

struct Hit {
  std::uint64_t id = 0;
  std::uint32_t distance = 0;
  friend bool operator==(const Hit&, const Hit&) = default;
};
/// Ascending distance, ties by ascending id.
using SearchResult = std::vector<Hit>;

struct Entry {
  std::uint64_t id = 0;
  BinaryEmbedding code;
};

/// Exact linear-scan Hamming index. Built by one writer, then read-only.
class BinaryIndex {
 public:
  explicit BinaryIndex(std::size_t dim);

  /// Throws std::invalid_argument on a duplicate id or wrong dim.
  void add(std::uint64_t id, BinaryEmbedding code, std::optional<std::string> metadata = std::nullopt);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  const std::string* metadata(std::uint64_t id) const;
  bool contains(std::uint64_t id) const { return ids_.count(id) != 0; }
  /// Packed descriptor bytes (ids and metadata excluded).
  std::size_t code_bytes() const noexcept { return entries_.size() * BinaryEmbedding::words_for(dim_) * 8; }

  /// Top-k, scanning the database in parallel chunks.
  SearchResult search(const BinaryEmbedding& query, std::size_t k) const;
  /// Serial scan that sorts every distance; the oracle for search().
  SearchResult search_reference(const BinaryEmbedding& query, std::size_t k) const;

 private:
  void check_query(const BinaryEmbedding& query, std::size_t k) const;

  std::size_t dim_;
  std::vector<Entry> entries_;
  std::set<std::uint64_t> ids_;
  std::map<std::uint64_t, std::string> metadata_;
};

/// Query id to the set of positive database ids.
using GroundTruth = std::map<std::uint64_t, std::set<std::uint64_t>>;

/// Fraction of queries with a positive among their first k hits. Throws
/// std::invalid_argument if a query has no ground-truth entry or no positives.
double recall_at_k(const std::map<std::uint64_t, SearchResult>& results, const GroundTruth& gt, std::size_t k);

/// recall_pct / ((model_bytes + db_bytes) / 2^20). Throws if the total is zero.
double memory_efficiency(double recall_pct, std::size_t model_bytes, std::size_t db_bytes);

struct SearchTiming {
  std::string kernel;  // "hamming" or "float32_cosine"
  std::size_t entries = 0;
  std::size_t dim = 0;
  double median_ns = 0.0;
  double p10_ns = 0.0;
  double p90_ns = 0.0;
  std::size_t bytes_db = 0;
};

/// Per-query latency of exact top-k search over random databases: packed
/// Hamming scan versus float32 cosine brute force at the same logical dim.
/// In-memory only, single thread. Throws on zero repeats or zero sizes.
std::vector<SearchTiming> benchmark_search(const std::vector<std::size_t>& entries,
                                           const std::vector<std::size_t>& dims, std::size_t repeats,
                                           std::size_t k = 10, std::uint64_t seed = 1);
/// `kernel,entries,dim,median_ns,p10_ns,p90_ns,bytes_db`
std::string search_timing_csv(const std::vector<SearchTiming>& records);

// --- embedding file ------------------------------------------------------
//
// "BEMB", u16 version, u32 dim, u64 count, then per entry u64 id followed by
// ceil(dim/64) u64 words. Little-endian.

inline constexpr std::uint16_t kEmbeddingFileVersion = 1;
inline constexpr std::size_t kEmbeddingHeaderBytes = 18;

struct EmbeddingSet {
  std::size_t dim = 0;
  std::vector<Entry> entries;
};

std::vector<std::uint8_t> encode_embeddings(const EmbeddingSet& set);
/// Throws DataError on bad magic, version, truncation, padding bits or trailing bytes.
EmbeddingSet decode_embeddings(std::span<const std::uint8_t> bytes);
void write_embeddings(const std::filesystem::path& path, const EmbeddingSet& set);
EmbeddingSet read_embeddings(const std::filesystem::path& path);
/// Throws std::invalid_argument on duplicate ids.
BinaryIndex build_index(const EmbeddingSet& set);

// --- ground truth text: one "query_id: id id id" line per query ----------

std::string format_ground_truth(const GroundTruth& gt);
/// Throws DataError with the line number on malformed input or duplicate queries.
GroundTruth parse_ground_truth(const std::string& text);
GroundTruth read_ground_truth(const std::filesystem::path& path);

}  // namespace tetra::index
