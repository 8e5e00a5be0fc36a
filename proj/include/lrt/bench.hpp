#pragma once
// Single-threaded end-to-end decode latency benchmark.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lrt/decoding.hpp"
#include "lrt/model.hpp"

namespace lrt {

template <typename T>
struct BenchModel {
  std::string id;
  const LrtModel<T>* model = nullptr;
};

struct BenchOptions {
  std::size_t reps = 10;
  std::size_t warmup = 3;
  BeamConfig beam;
};

struct BenchReport {
  std::string model_id;
  std::size_t rank = 0;
  std::uint64_t params = 0;
  double compression = 0.0;
  std::size_t reps = 0;
  std::size_t warmup = 0;
  std::vector<double> times_ms;  // one per decoded utterance per repetition
  double median_ms = 0.0;
  double mean_ms = 0.0;
  double p95_ms = 0.0;
  double mean_len = 0.0;
  double speedup = 1.0;  // baseline median / this median
};

struct BenchSummary {
  std::vector<BenchReport> reports;
  std::string element_type;
  std::size_t threads = 1;
  std::string config_hash;
  double timer_resolution_ns = 0.0;
  BeamConfig beam;
};

double median(std::vector<double> v);
/// Nearest-rank percentile, p in (0, 100].
double percentile(std::vector<double> v, double p);

/// Smallest observable steady_clock increment, in nanoseconds.
double timer_resolution_ns();

/// Times encode + beam search per utterance; the first model is the
/// baseline. Repetitions are interleaved across models. Kernel threads are
/// forced to 1 for the run. Throws when reps < 10, warmup < 3 or the timer
/// resolution is not at least 100x finer than the fastest measurement.
template <typename T>
BenchSummary bench_inference(std::span<const BenchModel<T>> models,
                             std::span<const Tensor<T>> dataset, const BenchOptions& opt);

std::string bench_csv(const BenchSummary& s);
std::string bench_json(const BenchSummary& s);

}  // namespace lrt
