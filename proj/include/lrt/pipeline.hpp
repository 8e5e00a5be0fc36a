#pragma once
// Corpus-level training and decoding loops shared by the CLI and tests.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lrt/data.hpp"
#include "lrt/decoding.hpp"
#include "lrt/model.hpp"

namespace lrt {

template <typename T>
struct Corpus {
  std::vector<std::string> ids;
  std::vector<std::string> transcripts;
  std::vector<Tensor<T>> features;
  std::vector<std::vector<int>> targets;  // content ids, no specials
  std::size_t size() const { return ids.size(); }
};

template <typename T>
Corpus<T> load_corpus(const Manifest& manifest, const Vocab& vocab);

struct TrainOptions {
  std::size_t steps = 300;
  std::size_t batch_size = 0;  // 0 = whole corpus every step
  std::uint64_t seed = 0;      // batch order
  double lr = 1e-3;
};

/// Runs `steps` Adam updates; returns the per-step loss.
template <typename T>
std::vector<double> train_model(LrtModel<T>& model, const Corpus<T>& corpus,
                                const TrainOptions& opt,
                                const std::function<void(std::size_t, double)>& on_step = {});

/// Beam search (or greedy) over every utterance.
template <typename T>
std::vector<DecodeResult> decode_corpus(const LrtModel<T>& model, const Vocab& vocab,
                                        const Corpus<T>& corpus, const BeamConfig& cfg,
                                        bool greedy);

}  // namespace lrt
