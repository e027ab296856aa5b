// SPDX-License-Identifier: Apache-2.0
// Serial reference vs OpenMP kernels, plus the float32 baselines.
//
//   bench_kernels [repeats]
//
// Prints CSV: kernel,threads,shape,median_ns,p10_ns,p90_ns

#include <omp.h>

#include <cstdio>
#include <cstdlib>
#include <string>

#include "tetra/index.hpp"
#include "tetra/kernels.hpp"
#include "tetra/quantize.hpp"
#include "tetra/rng.hpp"
#include "tetra/timing.hpp"

namespace {

using namespace tetra;

template <class F>
void report(const char* kernel, int threads, const std::string& shape, std::size_t repeats, F&& f) {
  std::vector<double> ns;
  f();  // warm-up
  for (std::size_t r = 0; r < repeats; ++r) ns.push_back(time_ns(f));
  const TimingSummary s = summarize(ns);
  std::printf("%s,%d,%s,%.0f,%.0f,%.0f\n", kernel, threads, shape.c_str(), s.median_ns, s.p10_ns, s.p90_ns);
}

}  // namespace

int main(int argc, char** argv) {
  const std::size_t repeats = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 10;
  if (repeats == 0) {
    std::fprintf(stderr, "repeats must be positive\n");
    return 2;
  }
  const int max_threads = omp_get_max_threads();
  Rng rng(7);
  std::printf("kernel,threads,shape,median_ns,p10_ns,p90_ns\n");

  for (const std::size_t n : {64, 256, 512}) {
    Matrix w(n, n);
    Matrix x(n, n);
    for (double& v : w.values()) v = rng.normal();
    for (double& v : x.values()) v = rng.normal();
    const auto packed = kernels::pack(quant::ternary_quantize(w));
    const auto act = quant::act_quantize(x);
    const std::string shape = std::to_string(n) + "x" + std::to_string(n) + "x" + std::to_string(n);
    report("ternary_reference", 1, shape, repeats, [&] { (void)kernels::ternary_accumulate_reference(packed, act); });
    for (int t = 1; t <= max_threads; t *= 2) {
      omp_set_num_threads(t);
      report("ternary_lut", t, shape, repeats, [&] { (void)kernels::ternary_accumulate(packed, act); });
    }
    omp_set_num_threads(max_threads);
    std::vector<float> wf(w.values().begin(), w.values().end());
    std::vector<float> xf(x.values().begin(), x.values().end());
    report("float32", 1, shape, repeats, [&] { (void)kernels::float_matmul(wf, xf, n, n, n); });
  }

  for (const std::size_t d : {256, 4096}) {
    const std::size_t entries = 10000;
    index::BinaryIndex idx(d);
    for (std::size_t i = 0; i < entries; ++i) {
      quant::BinaryEmbedding e(d);
      for (std::size_t b = 0; b < d; ++b) e.set_bit(b, rng.bernoulli(0.5));
      idx.add(i, std::move(e));
    }
    const quant::BinaryEmbedding q = idx.entries()[rng.below(entries)].code;
    const std::string shape = std::to_string(entries) + "x" + std::to_string(d);
    report("search_reference", 1, shape, repeats, [&] { (void)idx.search_reference(q, 10); });
    for (int t = 1; t <= max_threads; t *= 2) {
      omp_set_num_threads(t);
      report("search", t, shape, repeats, [&] { (void)idx.search(q, 10); });
    }
    omp_set_num_threads(max_threads);
  }
  return 0;
}
