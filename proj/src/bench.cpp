#include "lrt/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <numeric>
#include <stdexcept>

#include "lrt/accounting.hpp"
#include "lrt/kernels.hpp"

namespace lrt {

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double percentile(std::vector<double> v, double p) {
  if (v.empty()) throw std::invalid_argument("percentile of empty set");
  if (!(p > 0.0 && p <= 100.0)) throw std::invalid_argument("percentile outside (0, 100]");
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(v.size())));
  return v[std::max<std::size_t>(rank, 1) - 1];
}

double timer_resolution_ns() {
  using clock = std::chrono::steady_clock;
  double best = 1e18;
  for (int i = 0; i < 50; ++i) {
    const auto t0 = clock::now();
    auto t1 = clock::now();
    while (t1 == t0) t1 = clock::now();
    best = std::min(best, std::chrono::duration<double, std::nano>(t1 - t0).count());
  }
  return best;
}

namespace {

class ThreadPin {
 public:
  ThreadPin() : saved_(kernels::thread_count()) { kernels::set_thread_count(1); }
  ~ThreadPin() { kernels::set_thread_count(saved_); }

 private:
  std::size_t saved_;
};

}  // namespace

template <typename T>
BenchSummary bench_inference(std::span<const BenchModel<T>> models,
                             std::span<const Tensor<T>> dataset, const BenchOptions& opt) {
  if (models.empty() || dataset.empty()) throw std::invalid_argument("bench: no models or data");
  if (opt.reps < 10) throw std::invalid_argument("bench: reps must be >= 10");
  if (opt.warmup < 3) throw std::invalid_argument("bench: warmup must be >= 3");
  const std::size_t vocab = models[0].model->config.vocab_size;
  for (const auto& m : models) {
    if (m.model->config.vocab_size != vocab) throw std::invalid_argument("bench: vocab sizes differ");
  }
  ThreadPin pin;
  using clock = std::chrono::steady_clock;

  BenchSummary s;
  s.element_type = sizeof(T) == 4 ? "f32" : "f64";
  s.threads = kernels::thread_count();
  s.beam = opt.beam;
  s.timer_resolution_ns = timer_resolution_ns();
  std::string hash_input;
  const ParamReport base = count_params(models[0].model->config);
  for (const auto& m : models) {
    BenchReport r;
    r.model_id = m.id;
    r.rank = m.model->config.rank;
    ParamReport pr = count_params(m.model->config);
    attach_baseline(pr, base);
    r.params = pr.total;
    r.compression = pr.compression;
    r.reps = opt.reps;
    r.warmup = opt.warmup;
    s.reports.push_back(std::move(r));
    hash_input += m.model->config.to_text();
  }
  char beam_text[128];
  std::snprintf(beam_text, sizeof beam_text, "beam=%zu alpha=%.6f gamma=%.6f max_len=%zu min_len=%zu",
                opt.beam.beam_size, opt.beam.alpha, opt.beam.gamma, opt.beam.max_len,
                opt.beam.min_len);
  hash_input += beam_text;
  s.config_hash = hex64(fnv1a64(hash_input));

  for (std::size_t mi = 0; mi < models.size(); ++mi) {
    for (std::size_t w = 0; w < opt.warmup; ++w) {
      beam_search(*models[mi].model, dataset[w % dataset.size()], opt.beam);
    }
  }
  std::vector<double> lengths(models.size(), 0.0);
  for (std::size_t rep = 0; rep < opt.reps; ++rep) {
    for (std::size_t mi = 0; mi < models.size(); ++mi) {
      for (const auto& feats : dataset) {
        const auto t0 = clock::now();
        const Hypothesis h = beam_search(*models[mi].model, feats, opt.beam);
        const auto t1 = clock::now();
        s.reports[mi].times_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        if (rep == 0) lengths[mi] += static_cast<double>(wc(h.tokens));
      }
    }
  }
  for (std::size_t mi = 0; mi < models.size(); ++mi) {
    BenchReport& r = s.reports[mi];
    const double fastest_ns = *std::min_element(r.times_ms.begin(), r.times_ms.end()) * 1e6;
    if (fastest_ns < 100.0 * s.timer_resolution_ns) {
      throw std::runtime_error("bench: timer resolution " + std::to_string(s.timer_resolution_ns) +
                               " ns is too coarse for " + std::to_string(fastest_ns) + " ns runs");
    }
    r.median_ms = median(r.times_ms);
    r.mean_ms = std::accumulate(r.times_ms.begin(), r.times_ms.end(), 0.0) /
                static_cast<double>(r.times_ms.size());
    r.p95_ms = percentile(r.times_ms, 95.0);
    r.mean_len = lengths[mi] / static_cast<double>(dataset.size());
  }
  for (auto& r : s.reports) r.speedup = s.reports[0].median_ms / r.median_ms;
  return s;
}

std::string bench_csv(const BenchSummary& s) {
  std::string out = "model_id,r,params,compression,median_ms,mean_ms,p95_ms,speedup,mean_len\n";
  char buf[512];
  for (const auto& r : s.reports) {
    std::snprintf(buf, sizeof buf, "%s,%s,%llu,%.6f,%.4f,%.4f,%.4f,%.4f,%.3f\n", r.model_id.c_str(),
                  r.rank ? std::to_string(r.rank).c_str() : "full",
                  static_cast<unsigned long long>(r.params), r.compression, r.median_ms, r.mean_ms,
                  r.p95_ms, r.speedup, r.mean_len);
    out += buf;
  }
  return out;
}

std::string bench_json(const BenchSummary& s) {
  nlohmann::ordered_json j;
  j["metadata"] = {{"config_hash", s.config_hash},
                   {"element_type", s.element_type},
                   {"threads", s.threads},
                   {"timer_resolution_ns", s.timer_resolution_ns},
                   {"beam_size", s.beam.beam_size},
                   {"alpha", s.beam.alpha},
                   {"gamma", s.beam.gamma},
                   {"max_len", s.beam.max_len},
                   {"min_len", s.beam.min_len}};
  j["models"] = nlohmann::ordered_json::array();
  for (const auto& r : s.reports) {
    j["models"].push_back({{"model_id", r.model_id},
                           {"r", r.rank ? std::to_string(r.rank) : "full"},
                           {"params", r.params},
                           {"compression", r.compression},
                           {"median_ms", r.median_ms},
                           {"mean_ms", r.mean_ms},
                           {"p95_ms", r.p95_ms},
                           {"speedup", r.speedup},
                           {"mean_len", r.mean_len},
                           {"reps", r.reps},
                           {"warmup", r.warmup}});
  }
  return j.dump(2) + "\n";
}

template BenchSummary bench_inference(std::span<const BenchModel<float>>,
                                      std::span<const Tensor<float>>, const BenchOptions&);
template BenchSummary bench_inference(std::span<const BenchModel<double>>,
                                      std::span<const Tensor<double>>, const BenchOptions&);

}  // namespace lrt
