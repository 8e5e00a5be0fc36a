#include "lrt/pipeline.hpp"

#include <numeric>
#include <stdexcept>

#include "lrt/random.hpp"

namespace lrt {

template <typename T>
Corpus<T> load_corpus(const Manifest& manifest, const Vocab& vocab) {
  Corpus<T> c;
  for (const auto& u : manifest.utterances) {
    c.ids.push_back(u.id);
    c.transcripts.push_back(u.transcript);
    c.features.push_back(read_features<T>(u.path));
    c.targets.push_back(vocab.encode(u.transcript));
  }
  return c;
}

template <typename T>
std::vector<double> train_model(LrtModel<T>& model, const Corpus<T>& corpus,
                                const TrainOptions& opt,
                                const std::function<void(std::size_t, double)>& on_step) {
  if (corpus.size() == 0) throw std::invalid_argument("train: empty corpus");
  const std::size_t bs =
      opt.batch_size == 0 ? corpus.size() : std::min(opt.batch_size, corpus.size());
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(opt.seed);
  std::size_t cursor = order.size();
  AdamState<T> adam;
  adam.lr = opt.lr;
  std::vector<double> losses;
  for (std::size_t step = 0; step < opt.steps; ++step) {
    std::vector<Tensor<T>> feats;
    std::vector<std::vector<int>> text;
    if (bs == corpus.size()) {
      feats = corpus.features;
      text = corpus.targets;
    } else {
      for (std::size_t k = 0; k < bs; ++k) {
        if (cursor == order.size()) {
          for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
          cursor = 0;
        }
        feats.push_back(corpus.features[order[cursor]]);
        text.push_back(corpus.targets[order[cursor]]);
        ++cursor;
      }
    }
    const Batch<T> batch = make_batch<T>(feats, text);
    const double loss = train_step(model, batch, adam);
    losses.push_back(loss);
    if (on_step) on_step(step + 1, loss);
  }
  return losses;
}

template <typename T>
std::vector<DecodeResult> decode_corpus(const LrtModel<T>& model, const Vocab& vocab,
                                        const Corpus<T>& corpus, const BeamConfig& cfg,
                                        bool greedy) {
  std::vector<DecodeResult> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Hypothesis h = greedy ? greedy_decode(model, corpus.features[i], cfg)
                                : beam_search(model, corpus.features[i], cfg);
    DecodeResult r;
    r.id = corpus.ids[i];
    r.text = vocab.decode(h.tokens);
    r.reference = corpus.transcripts[i];
    r.score = h.score;
    r.length = wc(h.tokens);
    r.finished = h.finished;
    out.push_back(std::move(r));
  }
  return out;
}

#define LRT_INSTANTIATE(T)                                                                 \
  template Corpus<T> load_corpus(const Manifest&, const Vocab&);                           \
  template std::vector<double> train_model(LrtModel<T>&, const Corpus<T>&,                 \
                                           const TrainOptions&,                            \
                                           const std::function<void(std::size_t, double)>&); \
  template std::vector<DecodeResult> decode_corpus(const LrtModel<T>&, const Vocab&,       \
                                                   const Corpus<T>&, const BeamConfig&, bool);

LRT_INSTANTIATE(float)
LRT_INSTANTIATE(double)

#undef LRT_INSTANTIATE

}  // namespace lrt
