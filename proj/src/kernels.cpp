// SPDX-License-Identifier: Apache-2.0
#include "tetra/kernels.hpp"

#include <array>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "tetra/error.hpp"
#include "tetra/rng.hpp"
#include "tetra/timing.hpp"

namespace tetra::kernels {
namespace {

std::uint8_t encode(std::int8_t code) {
  switch (code) {
    case 0: return kCodeZero;
    case 1: return kCodePlus;
    case -1: return kCodeMinus;
    default: throw std::invalid_argument("pack: code outside {-1, 0, +1}");
  }
}

// Per byte: the four decoded codes, or a flag marking a 0b10 field somewhere in it.
struct ByteLut {
  std::array<std::array<std::int8_t, 4>, 256> codes{};
  std::array<bool, 256> has_invalid{};

  ByteLut() {
    for (int b = 0; b < 256; ++b) {
      for (int f = 0; f < 4; ++f) {
        const int field = (b >> (2 * f)) & 0b11;
        codes[b][f] = field == kCodePlus ? 1 : field == kCodeMinus ? -1 : 0;
        if (field == kCodeInvalid) has_invalid[b] = true;
      }
    }
  }
};

const ByteLut& lut() {
  static const ByteLut table;
  return table;
}

void check_shapes(const PackedTernary& w, const quant::QuantizedActivation& act) {
  if (w.cols != act.cols) {
    throw std::invalid_argument("ternary matmul: inner dimensions differ (" +
                                std::to_string(w.cols) + " vs " + std::to_string(act.cols) + ")");
  }
  if (w.cols > kMaxInnerDim) {
    throw std::invalid_argument("ternary matmul: inner dimension exceeds the int32 accumulator bound");
  }
  if (w.bytes.size() != PackedTernary::bytes_for(w.size())) {
    throw DataError("ternary matmul: packed buffer length does not match shape");
  }
}

// Decodes elements [first, first + count) into out.
void decode_range(const PackedTernary& p, std::size_t first, std::size_t count, std::int8_t* out) {
  const auto& table = lut();
  std::size_t i = first;
  const std::size_t end = first + count;
  // Leading partial byte.
  while (i < end && (i % 4) != 0) {
    *out++ = table.codes[p.bytes[i / 4]][i % 4];
    ++i;
  }
  for (; i + 4 <= end; i += 4) {
    const auto& c = table.codes[p.bytes[i / 4]];
    out[0] = c[0];
    out[1] = c[1];
    out[2] = c[2];
    out[3] = c[3];
    out += 4;
  }
  for (; i < end; ++i) *out++ = table.codes[p.bytes[i / 4]][i % 4];
}

}  // namespace

PackedTernary pack(const quant::TernaryTensor& t) {
  if (t.codes.size() != t.rows * t.cols) throw std::invalid_argument("pack: codes do not match shape");
  PackedTernary p;
  p.rows = t.rows;
  p.cols = t.cols;
  p.gamma = t.gamma;
  p.bytes.assign(PackedTernary::bytes_for(t.codes.size()), 0);
  for (std::size_t i = 0; i < t.codes.size(); ++i) {
    p.bytes[i / 4] |= static_cast<std::uint8_t>(encode(t.codes[i]) << (2 * (i % 4)));
  }
  return p;
}

void validate(const PackedTernary& p) {
  const std::size_t n = p.size();
  if (p.bytes.size() != PackedTernary::bytes_for(n)) {
    throw DataError("packed ternary: buffer length " + std::to_string(p.bytes.size()) +
                    " does not match " + std::to_string(n) + " elements");
  }
  const auto& table = lut();
  for (std::size_t b = 0; b < p.bytes.size(); ++b) {
    if (table.has_invalid[p.bytes[b]]) {
      throw DataError("packed ternary: invalid 0b10 code field in byte " + std::to_string(b));
    }
  }
  if (n % 4 != 0) {
    const std::uint8_t used_mask = static_cast<std::uint8_t>((1U << (2 * (n % 4))) - 1);
    if (p.bytes.back() & ~used_mask) throw DataError("packed ternary: nonzero pad field");
  }
}

quant::TernaryTensor unpack(const PackedTernary& p) {
  validate(p);
  quant::TernaryTensor t;
  t.rows = p.rows;
  t.cols = p.cols;
  t.gamma = p.gamma;
  t.codes.resize(p.size());
  if (!t.codes.empty()) decode_range(p, 0, t.codes.size(), t.codes.data());
  return t;
}

IntAccumulator ternary_accumulate(const PackedTernary& weights, const quant::QuantizedActivation& act) {
  check_shapes(weights, act);
  validate(weights);
  const std::size_t m_rows = weights.rows;
  const std::size_t k_dim = weights.cols;
  const std::size_t n_tokens = act.rows;
  IntAccumulator acc{m_rows, n_tokens, std::vector<std::int32_t>(m_rows * n_tokens, 0)};

#pragma omp parallel
  {
    std::vector<std::int8_t> lane(k_dim);
#pragma omp for schedule(static)
    for (std::ptrdiff_t mi = 0; mi < static_cast<std::ptrdiff_t>(m_rows); ++mi) {
      const auto m = static_cast<std::size_t>(mi);
      decode_range(weights, m * k_dim, k_dim, lane.data());
      const std::int8_t* w = lane.data();
      std::int32_t* out = acc.values.data() + m * n_tokens;
      for (std::size_t n = 0; n < n_tokens; ++n) {
        const std::int8_t* a = act.codes.data() + n * k_dim;
        std::int32_t sum = 0;
        for (std::size_t k = 0; k < k_dim; ++k) {
          sum += static_cast<std::int32_t>(w[k]) * static_cast<std::int32_t>(a[k]);
        }
        out[n] = sum;
      }
    }
  }
  return acc;
}

IntAccumulator ternary_accumulate_reference(const PackedTernary& weights,
                                            const quant::QuantizedActivation& act) {
  check_shapes(weights, act);
  const std::size_t k_dim = weights.cols;
  IntAccumulator acc{weights.rows, act.rows, std::vector<std::int32_t>(weights.rows * act.rows, 0)};
  for (std::size_t m = 0; m < weights.rows; ++m) {
    for (std::size_t n = 0; n < act.rows; ++n) {
      std::int32_t sum = 0;
      for (std::size_t k = 0; k < k_dim; ++k) {
        const std::size_t i = m * k_dim + k;
        const std::uint8_t field = (weights.bytes[i / 4] >> (2 * (i % 4))) & 0b11;
        const std::int32_t a = act.codes[n * k_dim + k];
        if (field == kCodePlus) {
          sum += a;
        } else if (field == kCodeMinus) {
          sum -= a;
        } else if (field == kCodeInvalid) {
          throw DataError("ternary matmul: invalid 0b10 code field");
        }
      }
      acc.values[m * act.rows + n] = sum;
    }
  }
  return acc;
}

Matrix ternary_matmul(const PackedTernary& weights, const quant::QuantizedActivation& act) {
  const IntAccumulator acc = ternary_accumulate(weights, act);
  Matrix out(acc.rows, acc.cols);
  for (std::size_t n = 0; n < acc.cols; ++n) {
    const double scale = weights.gamma * act.scales[n];
    for (std::size_t m = 0; m < acc.rows; ++m) out(m, n) = scale * acc(m, n);
  }
  return out;
}

Matrix ternary_linear(const PackedTernary& weights, const quant::QuantizedActivation& act) {
  const IntAccumulator acc = ternary_accumulate(weights, act);
  Matrix out(acc.cols, acc.rows);
  for (std::size_t n = 0; n < acc.cols; ++n) {
    const double scale = weights.gamma * act.scales[n];
    for (std::size_t m = 0; m < acc.rows; ++m) out(n, m) = scale * acc(m, n);
  }
  return out;
}

std::vector<float> float_matmul(const std::vector<float>& w, const std::vector<float>& x,
                                std::size_t m, std::size_t k, std::size_t n) {
  if (w.size() != m * k || x.size() != n * k) throw std::invalid_argument("float_matmul: shape mismatch");
  std::vector<float> out(m * n, 0.0f);
  for (std::size_t i = 0; i < m; ++i) {
    const float* wr = w.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const float* xr = x.data() + j * k;
      float sum = 0.0f;
      for (std::size_t t = 0; t < k; ++t) sum += wr[t] * xr[t];
      out[i * n + j] = sum;
    }
  }
  return out;
}

std::size_t packed_weight_bytes(std::size_t elements) noexcept {
  return PackedTernary::bytes_for(elements) + sizeof(float);
}

std::vector<TimingRecord> benchmark_matmul(const std::vector<MatmulShape>& shapes,
                                           std::size_t repeats, std::uint64_t seed) {
  if (repeats == 0) throw std::invalid_argument("benchmark_matmul: repeats must be positive");
  Rng rng(seed);
  std::vector<TimingRecord> records;
  for (const auto& s : shapes) {
    if (s.m == 0 || s.k == 0 || s.n == 0) throw std::invalid_argument("benchmark_matmul: sizes must be positive");
    Matrix w(s.m, s.k);
    Matrix x(s.n, s.k);
    for (double& v : w.values()) v = rng.normal();
    for (double& v : x.values()) v = rng.normal();
    const PackedTernary packed = pack(quant::ternary_quantize(w));
    const quant::QuantizedActivation qx = quant::act_quantize(x);
    std::vector<float> wf(w.values().begin(), w.values().end());
    std::vector<float> xf(x.values().begin(), x.values().end());

    const auto run = [&](const std::string& name, std::size_t bytes, auto&& body) {
      std::vector<double> samples;
      samples.reserve(repeats);
      body();  // warm-up
      for (std::size_t r = 0; r < repeats; ++r) samples.push_back(time_ns(body));
      const TimingSummary t = summarize(std::move(samples));
      records.push_back({name, s.m, s.k, s.n, t.median_ns, t.p10_ns, t.p90_ns, bytes});
    };
    volatile std::int32_t sink = 0;
    run("ternary", packed_weight_bytes(s.m * s.k), [&] { sink = sink + ternary_accumulate(packed, qx).values[0]; });
    run("ternary_reference", packed_weight_bytes(s.m * s.k),
        [&] { sink = sink + ternary_accumulate_reference(packed, qx).values[0]; });
    volatile float fsink = 0.0f;
    run("float32", s.m * s.k * sizeof(float), [&] { fsink = fsink + float_matmul(wf, xf, s.m, s.k, s.n)[0]; });
  }
  return records;
}

std::string timing_csv(const std::vector<TimingRecord>& records) {
  std::ostringstream os;
  os << "kernel,m,k,n,median_ns,p10_ns,p90_ns,bytes_weights\n";
  char buf[256];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%s,%zu,%zu,%zu,%.0f,%.0f,%.0f,%zu\n", r.kernel.c_str(), r.m, r.k, r.n,
                  r.median_ns, r.p10_ns, r.p90_ns, r.bytes_weights);
    os << buf;
  }
  return os.str();
}

}  // namespace tetra::kernels
