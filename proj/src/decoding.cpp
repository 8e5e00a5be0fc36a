#include "lrt/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "lrt/tensor_ops.hpp"

namespace lrt {

std::size_t wc(std::span<const int> tokens) {
  return static_cast<std::size_t>(
      std::count_if(tokens.begin(), tokens.end(), [](int t) { return t > kEosId; }));
}

double sentence_score(double log_prob, std::size_t word_count, double alpha, double gamma) {
  return alpha * log_prob + gamma * std::sqrt(static_cast<double>(word_count));
}

bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

namespace {

template <typename T>
void validate(const LrtModel<T>& model, const BeamConfig& cfg) {
  if (cfg.beam_size < 1) throw std::invalid_argument("beam_size must be >= 1");
  if (cfg.max_len < 1) throw std::invalid_argument("max_len must be >= 1");
  if (cfg.min_len > cfg.max_len) throw std::invalid_argument("min_len exceeds max_len");
  if (cfg.max_len > model.config.max_tgt_len) {
    throw std::invalid_argument("max_len " + std::to_string(cfg.max_len) +
                                " exceeds the model's max_tgt_len " +
                                std::to_string(model.config.max_tgt_len));
  }
}

bool emissible(int token, std::size_t step, const BeamConfig& cfg) {
  if (token == kEosId) return step >= cfg.min_len;
  return !(cfg.force_eos && step == cfg.max_len);
}

Hypothesis finish(std::vector<int> tokens, double log_prob, bool finished, const BeamConfig& cfg) {
  Hypothesis h;
  h.score = sentence_score(log_prob, wc(tokens), cfg.alpha, cfg.gamma);
  h.tokens = std::move(tokens);
  h.log_prob = log_prob;
  h.finished = finished;
  return h;
}

struct Candidate {
  double log_prob;
  std::size_t lex_rank;  // parent position in lexicographic order
  int token;
  std::size_t parent;
};

}  // namespace

template <typename T>
std::pair<Tensor<T>, std::size_t> encode_utterance(const LrtModel<T>& model,
                                                   const Tensor<T>& features) {
  NoGradGuard guard;
  const std::size_t frames = features.rows();
  return {encode(model, features, frames).value(), encoder_frames(frames)};
}

template <typename T>
Hypothesis beam_search(const LrtModel<T>& model, const Tensor<T>& memory, std::size_t valid_memory,
                       const BeamConfig& cfg) {
  validate(model, cfg);
  const std::size_t beam = cfg.beam_size;
  const std::size_t vocab = model.config.vocab_size;
  IncrementalDecoder<T> dec(model, memory, valid_memory);
  struct Live {
    std::vector<int> tokens;
    double log_prob;
  };
  std::vector<Live> live{{{kSosId}, 0.0}};
  const int sos = kSosId;
  Tensor<T> lp = dec.step({}, std::span<const int>(&sos, 1));
  std::vector<Hypothesis> pool;
  std::vector<Candidate> cands;
  for (std::size_t step = 1; step <= cfg.max_len; ++step) {
    std::vector<std::size_t> order(live.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return live[a].tokens < live[b].tokens; });
    std::vector<std::size_t> lex_rank(live.size());
    for (std::size_t r = 0; r < order.size(); ++r) lex_rank[order[r]] = r;

    cands.clear();
    for (std::size_t i = 0; i < live.size(); ++i) {
      for (std::size_t v = kEosId; v < vocab; ++v) {
        const int tok = static_cast<int>(v);
        if (!emissible(tok, step, cfg)) continue;
        cands.push_back({live[i].log_prob + static_cast<double>(lp.at(i, v)), lex_rank[i], tok, i});
      }
    }
    const auto cmp = [](const Candidate& a, const Candidate& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      if (a.lex_rank != b.lex_rank) return a.lex_rank < b.lex_rank;
      return a.token < b.token;
    };
    const std::size_t keep = std::min(cands.size(), beam);
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      cmp);

    std::vector<Live> next;
    std::vector<std::size_t> parents;
    std::vector<int> tokens;
    for (std::size_t r = 0; r < keep; ++r) {
      const Candidate& c = cands[r];
      std::vector<int> seq = live[c.parent].tokens;
      seq.push_back(c.token);
      if (c.token == kEosId) {
        pool.push_back(finish(std::move(seq), c.log_prob, true, cfg));
      } else {
        next.push_back({std::move(seq), c.log_prob});
        parents.push_back(c.parent);
        tokens.push_back(c.token);
      }
    }
    live = std::move(next);
    if (live.empty() || step == cfg.max_len) break;
    if (!pool.empty() && cfg.alpha >= 0.0) {
      const double best = std::min_element(pool.begin(), pool.end(), better)->score;
      double bound = -std::numeric_limits<double>::infinity();
      for (const auto& l : live) {
        const std::size_t w = wc(l.tokens);
        const double bonus = std::max(cfg.gamma * std::sqrt(static_cast<double>(w)),
                                      cfg.gamma * std::sqrt(static_cast<double>(w + cfg.max_len - step)));
        bound = std::max(bound, cfg.alpha * l.log_prob + bonus);
      }
      if (best > bound) break;
    }
    lp = dec.step(parents, tokens);
  }

  std::vector<Hypothesis> finals = std::move(pool);
  const bool finished = !finals.empty();
  if (!finished) {
    for (auto& l : live) finals.push_back(finish(std::move(l.tokens), l.log_prob, false, cfg));
  }
  if (finals.empty()) throw std::runtime_error("beam_search: no hypotheses survived");
  return *std::min_element(finals.begin(), finals.end(), better);
}

template <typename T>
Hypothesis beam_search(const LrtModel<T>& model, const Tensor<T>& features, const BeamConfig& cfg) {
  const auto [memory, valid] = encode_utterance(model, features);
  return beam_search(model, memory, valid, cfg);
}

template <typename T>
Hypothesis greedy_decode(const LrtModel<T>& model, const Tensor<T>& memory,
                         std::size_t valid_memory, const BeamConfig& cfg) {
  validate(model, cfg);
  IncrementalDecoder<T> dec(model, memory, valid_memory);
  std::vector<int> seq{kSosId};
  double total = 0.0;
  const std::size_t parent = 0;
  Tensor<T> lp = dec.step({}, std::span<const int>(seq.data(), 1));
  for (std::size_t step = 1; step <= cfg.max_len; ++step) {
    int best = -1;
    for (std::size_t v = kEosId; v < model.config.vocab_size; ++v) {
      const int tok = static_cast<int>(v);
      if (!emissible(tok, step, cfg)) continue;
      if (best < 0 || lp.at(0, v) > lp.at(0, static_cast<std::size_t>(best))) best = tok;
    }
    total += static_cast<double>(lp.at(0, static_cast<std::size_t>(best)));
    seq.push_back(best);
    if (best == kEosId) return finish(std::move(seq), total, true, cfg);
    if (step == cfg.max_len) break;
    lp = dec.step(std::span<const std::size_t>(&parent, 1), std::span<const int>(&seq.back(), 1));
  }
  return finish(std::move(seq), total, false, cfg);
}

template <typename T>
Hypothesis greedy_decode(const LrtModel<T>& model, const Tensor<T>& features,
                         const BeamConfig& cfg) {
  const auto [memory, valid] = encode_utterance(model, features);
  return greedy_decode(model, memory, valid, cfg);
}

template <typename T>
Hypothesis exhaustive_decode(const LrtModel<T>& model, const Tensor<T>& memory,
                             std::size_t valid_memory, const BeamConfig& cfg) {
  validate(model, cfg);
  const std::size_t content = model.config.vocab_size - 3;
  double count = 0.0;
  for (std::size_t len = std::max<std::size_t>(cfg.min_len, 1); len <= cfg.max_len; ++len) {
    count += std::pow(static_cast<double>(content), static_cast<double>(len - 1));
  }
  if (count > 1e6) throw std::invalid_argument("exhaustive_decode: search space exceeds 1e6");

  NoGradGuard guard;
  const Var<T> mem = Var<T>::constant(memory);
  Hypothesis best;
  bool have = false;
  std::vector<int> body;  // content tokens
  auto score_seq = [&]() {
    std::vector<int> seq{kSosId};
    seq.insert(seq.end(), body.begin(), body.end());
    const Tensor<T> lsm =
        log_softmax_lastdim(decode_teacher_forced(model, mem, valid_memory, seq).value());
    seq.push_back(kEosId);
    double total = 0.0;
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      total += static_cast<double>(lsm.at(t, static_cast<std::size_t>(seq[t + 1])));
    }
    Hypothesis h = finish(std::move(seq), total, true, cfg);
    if (!have || better(h, best)) {
      best = std::move(h);
      have = true;
    }
  };
  auto rec = [&](auto&& self) -> void {
    const std::size_t len = body.size() + 1;
    if (len >= std::max<std::size_t>(cfg.min_len, 1)) score_seq();
    if (len == cfg.max_len) return;
    for (std::size_t c = 0; c < content; ++c) {
      body.push_back(static_cast<int>(c + 3));
      self(self);
      body.pop_back();
    }
  };
  rec(rec);
  return best;
}

std::size_t edit_distance(std::u32string_view hyp, std::u32string_view ref) {
  std::vector<std::size_t> prev(ref.size() + 1), cur(ref.size() + 1);
  for (std::size_t j = 0; j <= ref.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= hyp.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= ref.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[ref.size()];
}

double cer(std::string_view hyp_utf8, std::string_view ref_utf8) {
  const std::u32string ref = utf8_decode(ref_utf8);
  if (ref.empty()) throw std::invalid_argument("cer: empty reference");
  return static_cast<double>(edit_distance(utf8_decode(hyp_utf8), ref)) /
         static_cast<double>(ref.size());
}

std::string format_decode_line(const DecodeResult& r) {
  char score[64];
  std::snprintf(score, sizeof score, "%.6f", r.score);
  return r.id + "\t" + r.text + "\t" + score + "\t" + std::to_string(r.length);
}

void write_decode_file(const std::filesystem::path& path, std::span<const DecodeResult> results) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : results) out << format_decode_line(r) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

double corpus_cer(std::span<const DecodeResult> results) {
  std::size_t errors = 0, total = 0;
  for (const auto& r : results) {
    const std::u32string ref = utf8_decode(r.reference);
    errors += edit_distance(utf8_decode(r.text), ref);
    total += ref.size();
  }
  if (total == 0) throw std::invalid_argument("corpus_cer: empty references");
  return static_cast<double>(errors) / static_cast<double>(total);
}

#define LRT_INSTANTIATE(T)                                                                    \
  template std::pair<Tensor<T>, std::size_t> encode_utterance(const LrtModel<T>&,             \
                                                              const Tensor<T>&);              \
  template Hypothesis beam_search(const LrtModel<T>&, const Tensor<T>&, std::size_t,          \
                                  const BeamConfig&);                                         \
  template Hypothesis beam_search(const LrtModel<T>&, const Tensor<T>&, const BeamConfig&);   \
  template Hypothesis greedy_decode(const LrtModel<T>&, const Tensor<T>&, std::size_t,        \
                                    const BeamConfig&);                                       \
  template Hypothesis greedy_decode(const LrtModel<T>&, const Tensor<T>&, const BeamConfig&); \
  template Hypothesis exhaustive_decode(const LrtModel<T>&, const Tensor<T>&, std::size_t,    \
                                        const BeamConfig&);

LRT_INSTANTIATE(float)
LRT_INSTANTIATE(double)

#undef LRT_INSTANTIATE

}  // namespace lrt
