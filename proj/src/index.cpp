// SPDX-License-Identifier: Apache-2.0
#include "tetra/index.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "tetra/binary_io.hpp"
#include "tetra/error.hpp"
#include "tetra/rng.hpp"
#include "tetra/timing.hpp"

namespace tetra::index {
namespace {

constexpr char kMagic[] = "BEMB";

std::uint32_t hamming_words(const std::uint64_t* a, const std::uint64_t* b, std::size_t words) {
  std::uint32_t d = 0;
  for (std::size_t w = 0; w < words; ++w) d += static_cast<std::uint32_t>(std::popcount(a[w] ^ b[w]));
  return d;
}

bool hit_less(const Hit& a, const Hit& b) {
  return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
}

SearchResult take_top(std::vector<Hit> hits, std::size_t k) {
  k = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), hit_less);
  hits.resize(k);
  return hits;
}

}  // namespace

std::uint32_t hamming(const BinaryEmbedding& a, const BinaryEmbedding& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("hamming: dimension mismatch");
  return hamming_words(a.words().data(), b.words().data(), a.words().size());
}

std::int64_t sign_dot(const BinaryEmbedding& a, const BinaryEmbedding& b) {
  return static_cast<std::int64_t>(a.dim()) - 2 * static_cast<std::int64_t>(hamming(a, b));
}

BinaryIndex::BinaryIndex(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw std::invalid_argument("BinaryIndex: dim must be positive");
}

void BinaryIndex::add(std::uint64_t id, BinaryEmbedding code, std::optional<std::string> metadata) {
  if (code.dim() != dim_) throw std::invalid_argument("BinaryIndex::add: dimension mismatch");
  if (!ids_.insert(id).second) throw std::invalid_argument("BinaryIndex::add: duplicate id " + std::to_string(id));
  entries_.push_back({id, std::move(code)});
  if (metadata) metadata_.emplace(id, std::move(*metadata));
}

const std::string* BinaryIndex::metadata(std::uint64_t id) const {
  const auto it = metadata_.find(id);
  return it == metadata_.end() ? nullptr : &it->second;
}

void BinaryIndex::check_query(const BinaryEmbedding& query, std::size_t k) const {
  if (query.dim() != dim_) throw std::invalid_argument("search: query dimension mismatch");
  if (k == 0) throw std::invalid_argument("search: k must be at least 1");
  if (entries_.empty()) throw std::invalid_argument("search: index is empty");
}

SearchResult BinaryIndex::search(const BinaryEmbedding& query, std::size_t k) const {
  check_query(query, k);
  const std::size_t words = BinaryEmbedding::words_for(dim_);
  const std::uint64_t* q = query.words().data();
  std::vector<Hit> hits(entries_.size());
  const auto n = static_cast<std::ptrdiff_t>(entries_.size());
#pragma omp parallel for schedule(static) if (n > 4096)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const Entry& e = entries_[static_cast<std::size_t>(i)];
    hits[static_cast<std::size_t>(i)] = {e.id, hamming_words(q, e.code.words().data(), words)};
  }
  return take_top(std::move(hits), k);
}

SearchResult BinaryIndex::search_reference(const BinaryEmbedding& query, std::size_t k) const {
  check_query(query, k);
  std::vector<Hit> hits;
  for (const Entry& e : entries_) {
    std::uint32_t d = 0;
    for (std::size_t i = 0; i < dim_; ++i) d += query.bit(i) != e.code.bit(i) ? 1 : 0;
    hits.push_back({e.id, d});
  }
  std::sort(hits.begin(), hits.end(), hit_less);
  hits.resize(std::min(k, hits.size()));
  return hits;
}

double recall_at_k(const std::map<std::uint64_t, SearchResult>& results, const GroundTruth& gt, std::size_t k) {
  if (k == 0) throw std::invalid_argument("recall_at_k: k must be at least 1");
  if (results.empty()) throw std::invalid_argument("recall_at_k: no queries");
  std::size_t hits = 0;
  for (const auto& [query, result] : results) {
    const auto it = gt.find(query);
    if (it == gt.end()) throw std::invalid_argument("recall_at_k: query " + std::to_string(query) + " has no ground truth");
    if (it->second.empty()) throw std::invalid_argument("recall_at_k: query " + std::to_string(query) + " has no positives");
    const std::size_t n = std::min(k, result.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (it->second.count(result[i].id)) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

double memory_efficiency(double recall_pct, std::size_t model_bytes, std::size_t db_bytes) {
  const double total = static_cast<double>(model_bytes) + static_cast<double>(db_bytes);
  if (total <= 0.0) throw std::invalid_argument("memory_efficiency: total bytes must be positive");
  return recall_pct / (total / 1048576.0);
}

std::vector<SearchTiming> benchmark_search(const std::vector<std::size_t>& entries, const std::vector<std::size_t>& dims,
                                           std::size_t repeats, std::size_t k, std::uint64_t seed) {
  if (repeats == 0) throw std::invalid_argument("benchmark_search: repeats must be positive");
  if (entries.empty() || dims.empty()) throw std::invalid_argument("benchmark_search: no sizes given");
  std::vector<SearchTiming> out;
  Rng rng(seed);
  for (const std::size_t n : entries) {
    for (const std::size_t d : dims) {
      if (n == 0 || d == 0) throw std::invalid_argument("benchmark_search: sizes must be positive");
      const std::size_t words = BinaryEmbedding::words_for(d);
      std::vector<std::uint64_t> codes(n * words);
      for (auto& w : codes) w = rng.next();
      if (d % 64) {
        const std::uint64_t mask = (std::uint64_t{1} << (d % 64)) - 1;
        for (std::size_t i = 0; i < n; ++i) codes[i * words + words - 1] &= mask;
      }
      // Float descriptors are the same ±1 vectors, stored unit-normalized.
      std::vector<float> floats(n * d);
      const float unit = 1.0f / std::sqrt(static_cast<float>(d));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
          floats[i * d + j] = ((codes[i * words + j / 64] >> (j % 64)) & 1U) ? unit : -unit;

      std::vector<double> ham_ns;
      std::vector<double> cos_ns;
      std::vector<std::uint64_t> qcode(words);
      std::vector<float> qfloat(d);
      std::size_t sink = 0;
      for (std::size_t r = 0; r < repeats; ++r) {
        const std::size_t src = rng.below(n);
        std::copy_n(codes.begin() + static_cast<std::ptrdiff_t>(src * words), words, qcode.begin());
        std::copy_n(floats.begin() + static_cast<std::ptrdiff_t>(src * d), d, qfloat.begin());

        ham_ns.push_back(time_ns([&] {
          std::vector<Hit> hits(n);
          for (std::size_t i = 0; i < n; ++i) hits[i] = {i, hamming_words(qcode.data(), &codes[i * words], words)};
          sink += take_top(std::move(hits), k).front().id;
        }));
        cos_ns.push_back(time_ns([&] {
          std::vector<std::pair<float, std::uint64_t>> scores(n);
          for (std::size_t i = 0; i < n; ++i) {
            const float* row = &floats[i * d];
            float dot = 0.0f;
            for (std::size_t j = 0; j < d; ++j) dot += qfloat[j] * row[j];
            scores[i] = {-dot, i};
          }
          const std::size_t kk = std::min(k, n);
          std::partial_sort(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(kk), scores.end());
          sink += scores.front().second;
        }));
      }
      if (sink == static_cast<std::size_t>(-1)) std::fputs("", stderr);  // keep the work observable
      const TimingSummary h = summarize(ham_ns);
      const TimingSummary c = summarize(cos_ns);
      out.push_back({"hamming", n, d, h.median_ns, h.p10_ns, h.p90_ns, n * words * 8});
      out.push_back({"float32_cosine", n, d, c.median_ns, c.p10_ns, c.p90_ns, n * d * 4});
    }
  }
  return out;
}

std::string search_timing_csv(const std::vector<SearchTiming>& records) {
  std::ostringstream os;
  os << "kernel,entries,dim,median_ns,p10_ns,p90_ns,bytes_db\n";
  char buf[256];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%s,%zu,%zu,%.0f,%.0f,%.0f,%zu\n", r.kernel.c_str(), r.entries, r.dim, r.median_ns,
                  r.p10_ns, r.p90_ns, r.bytes_db);
    os << buf;
  }
  return os.str();
}

std::vector<std::uint8_t> encode_embeddings(const EmbeddingSet& set) {
  if (set.dim == 0 || set.dim > 0xFFFFFFFFu) throw std::invalid_argument("encode_embeddings: bad dim");
  io::ByteWriter w;
  w.text(std::string_view(kMagic, 4));
  w.u16(kEmbeddingFileVersion);
  w.u32(static_cast<std::uint32_t>(set.dim));
  w.u64(set.entries.size());
  for (const Entry& e : set.entries) {
    if (e.code.dim() != set.dim) throw std::invalid_argument("encode_embeddings: dimension mismatch");
    w.u64(e.id);
    for (const std::uint64_t word : e.code.words()) w.u64(word);
  }
  return w.take();
}

EmbeddingSet decode_embeddings(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "embedding file");
  if (r.text(4) != std::string_view(kMagic, 4)) r.fail("bad magic");
  if (const auto v = r.u16(); v != kEmbeddingFileVersion) r.fail("unsupported version " + std::to_string(v));
  EmbeddingSet set;
  set.dim = r.u32();
  if (set.dim == 0) r.fail("dimension is zero");
  const std::uint64_t count = r.u64();
  const std::size_t words = BinaryEmbedding::words_for(set.dim);
  const std::size_t per_entry = 8 * (1 + words);
  if (count > r.remaining() / per_entry) r.fail("truncated: header promises " + std::to_string(count) + " entries");
  set.entries.reserve(count);
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < count; ++i) {
    Entry e;
    e.id = r.u64();
    if (!seen.insert(e.id).second) r.fail("duplicate id " + std::to_string(e.id));
    std::vector<std::uint64_t> ws(words);
    for (auto& w : ws) w = r.u64();
    try {
      e.code = BinaryEmbedding(set.dim, std::move(ws));
    } catch (const std::invalid_argument& err) {
      r.fail(err.what());
    }
    set.entries.push_back(std::move(e));
  }
  r.expect_end();
  return set;
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingSet& set) {
  io::write_file(path, encode_embeddings(set));
}

EmbeddingSet read_embeddings(const std::filesystem::path& path) { return decode_embeddings(io::read_file(path)); }

BinaryIndex build_index(const EmbeddingSet& set) {
  BinaryIndex index(set.dim);
  for (const Entry& e : set.entries) index.add(e.id, e.code);
  return index;
}

std::string format_ground_truth(const GroundTruth& gt) {
  std::ostringstream os;
  for (const auto& [q, ids] : gt) {
    os << q << ':';
    for (const auto id : ids) os << ' ' << id;
    os << '\n';
  }
  return os.str();
}

namespace {

std::uint64_t parse_id(std::string_view s, std::size_t line) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError("ground truth: line " + std::to_string(line) + ": bad id '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

GroundTruth parse_ground_truth(const std::string& text) {
  GroundTruth gt;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw DataError("ground truth: line " + std::to_string(lineno) + ": missing ':'");
    std::string head = line.substr(0, colon);
    head.erase(0, head.find_first_not_of(" \t"));
    head.erase(head.find_last_not_of(" \t") + 1);
    const std::uint64_t q = parse_id(head, lineno);
    std::set<std::uint64_t> ids;
    std::istringstream rest(line.substr(colon + 1));
    std::string tok;
    while (rest >> tok) ids.insert(parse_id(tok, lineno));
    if (!gt.emplace(q, std::move(ids)).second) {
      throw DataError("ground truth: line " + std::to_string(lineno) + ": duplicate query " + std::to_string(q));
    }
  }
  return gt;
}

GroundTruth read_ground_truth(const std::filesystem::path& path) { return parse_ground_truth(io::read_text(path)); }

}  // namespace tetra::index
