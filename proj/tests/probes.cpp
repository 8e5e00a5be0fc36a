#include "probes.hpp"

#include <cmath>
#include <vector>

#include "lrt/accounting.hpp"
#include "lrt/decoding.hpp"
#include "lrt/kernels.hpp"
#include "oracles.hpp"

namespace probe {

using namespace lrt;
using V = Var<double>;

ModelConfig micro_config(std::size_t content_symbols, std::size_t max_tgt_len) {
  ModelConfig c;
  c.enc_layers = 1;
  c.dec_layers = 2;
  c.d_model = 8;
  c.d_emb = 8;
  c.d_inner = 16;
  c.heads = 2;
  c.rank = 3;
  c.vocab_size = content_symbols + 3;
  c.freq_bins = 8;
  c.conv_channels = {2, 2, 2};
  c.max_src_frames = 64;
  c.max_tgt_len = max_tgt_len;
  return c;
}

ModelConfig random_config(std::uint64_t seed) {
  Rng rng(seed);
  ModelConfig c;
  c.enc_layers = rng.below(3);
  c.dec_layers = 1 + rng.below(3);
  c.heads = 1 + rng.below(4);
  c.d_model = c.heads * (2 + rng.below(4));
  c.d_emb = c.d_model;
  c.d_inner = 4 + rng.below(29);
  c.vocab_size = 4 + rng.below(30);
  c.freq_bins = 4 * (1 + rng.below(5));
  c.conv_channels = {1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4)};
  c.factorize_output = rng.below(2) == 1;
  std::size_t limit = std::min(c.d_model, c.d_inner);
  if (c.factorize_output) limit = std::min(limit, c.vocab_size);
  c.rank = rng.below(3) == 0 ? 0 : 1 + rng.below(limit);
  c.max_src_frames = 128;
  c.max_tgt_len = 16;
  return c;
}

void Outcome::record(bool pass, const std::string& what) {
  ++total;
  if (pass) {
    ++passed;
  } else if (detail.empty()) {
    detail = what;
  }
}

namespace {

std::vector<int> random_tokens(std::size_t n, std::size_t vocab, Rng& rng) {
  std::vector<int> ids{kSosId};
  for (std::size_t i = 1; i < n; ++i) ids.push_back(3 + static_cast<int>(rng.below(vocab - 3)));
  return ids;
}

Tensor<double> logits(const LrtModel<double>& m, const Tensor<double>& feats, std::size_t valid,
                      std::span<const int> ids) {
  NoGradGuard guard;
  const V mem = encode(m, feats, valid);
  return decode_teacher_forced(m, mem, encoder_frames(valid), ids).value();
}

}  // namespace

Outcome decoder_causality(std::size_t seeds) {
  Outcome out;
  for (std::size_t s = 0; s < seeds; ++s) {
    Rng rng(100 + s);
    const ModelConfig cfg = micro_config(6, 10);
    const LrtModel<double> m(cfg, rng.next_u64());
    const auto feats = oracle::random<double>({24, cfg.freq_bins}, rng);
    const auto ids = random_tokens(10, cfg.vocab_size, rng);
    NoGradGuard guard;
    const V mem = encode(m, feats, 24);
    const auto base = decode_teacher_forced(m, mem, 6, ids).value();
    for (std::size_t t = 1; t < ids.size(); ++t) {
      auto changed = ids;
      changed[t] = 3 + (changed[t] - 3 + 1 + static_cast<int>(rng.below(cfg.vocab_size - 4))) %
                           static_cast<int>(cfg.vocab_size - 3);
      const auto y = decode_teacher_forced(m, mem, 6, changed).value();
      bool same = true, later_changed = false;
      for (std::size_t r = 0; r < ids.size(); ++r) {
        for (std::size_t c = 0; c < cfg.vocab_size; ++c) {
          if (r < t) same = same && y.at(r, c) == base.at(r, c);
          if (r >= t) later_changed = later_changed || y.at(r, c) != base.at(r, c);
        }
      }
      out.record(same && later_changed,
                 "seed " + std::to_string(s) + " position " + std::to_string(t));
    }
  }
  return out;
}

Outcome padding_invariance(std::size_t seeds) {
  Outcome out;
  for (std::size_t s = 0; s < seeds; ++s) {
    Rng rng(200 + s);
    const ModelConfig cfg = micro_config(6, 10);
    const LrtModel<double> m(cfg, rng.next_u64());
    const std::size_t frames = 32, valid = 13 + rng.below(12);
    auto feats = oracle::random<double>({frames, cfg.freq_bins}, rng);
    const auto ids = random_tokens(7, cfg.vocab_size, rng);
    const auto base = logits(m, feats, valid, ids);
    for (std::size_t t = valid; t < frames; ++t) {
      for (std::size_t b = 0; b < cfg.freq_bins; ++b) feats.at(t, b) = rng.uniform(-50.0, 50.0);
    }
    out.record(logits(m, feats, valid, ids) == base, "seed " + std::to_string(s));
  }
  return out;
}

Outcome incremental_matches_teacher_forced(std::size_t seeds) {
  Outcome out;
  for (std::size_t s = 0; s < seeds; ++s) {
    Rng rng(300 + s);
    const ModelConfig cfg = micro_config(5, 9);
    const LrtModel<double> m(cfg, rng.next_u64());
    const auto feats = oracle::random<double>({20, cfg.freq_bins}, rng);
    const auto [mem, valid] = encode_utterance(m, feats);
    // Two hypotheses with different prefixes, reordered every step.
    const auto a = random_tokens(9, cfg.vocab_size, rng);
    const auto b = random_tokens(9, cfg.vocab_size, rng);
    IncrementalDecoder<double> dec(m, mem, valid);
    std::vector<int> first{kSosId, kSosId};
    Tensor<double> lp = dec.step({}, first);
    bool swapped = false;
    double worst = 0.0;
    for (std::size_t t = 0; t < a.size(); ++t) {
      const auto ref_a = log_softmax_lastdim(
          logits(m, feats, 20, std::span<const int>(a.data(), t + 1)));
      const auto ref_b = log_softmax_lastdim(
          logits(m, feats, 20, std::span<const int>(b.data(), t + 1)));
      for (std::size_t c = 0; c < cfg.vocab_size; ++c) {
        const double la = lp.at(swapped ? 1 : 0, c), lb = lp.at(swapped ? 0 : 1, c);
        worst = std::max({worst, std::abs(la - ref_a.at(t, c)), std::abs(lb - ref_b.at(t, c))});
      }
      if (t + 1 == a.size()) break;
      const std::vector<std::size_t> parents{1, 0};
      swapped = !swapped;
      const std::vector<int> next = swapped ? std::vector<int>{b[t + 1], a[t + 1]}
                                            : std::vector<int>{a[t + 1], b[t + 1]};
      lp = dec.step(parents, next);
    }
    out.record(worst < 1e-12, "seed " + std::to_string(s) + " max diff " + std::to_string(worst));
  }
  return out;
}

namespace {

struct Instance {
  LrtModel<double> model;
  Tensor<double> memory;
  std::size_t valid;
};

Instance make_instance(std::size_t i) {
  Rng rng(400 + i);
  const ModelConfig cfg = micro_config(4, 8);
  LrtModel<double> m(cfg, rng.next_u64());
  // Sharpen the output distribution so instances differ in difficulty.
  std::visit(
      [&](auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, FullLinear<double>>) {
          for (auto& v : p.weight.mutable_value().data()) v *= 1.0 + 3.0 * rng.uniform();
          for (auto& v : p.bias.mutable_value().data()) v = rng.uniform(-1.0, 1.0);
        }
      },
      m.output);
  const auto feats = oracle::random<double>({16 + rng.below(16), cfg.freq_bins}, rng);
  auto [mem, valid] = encode_utterance(m, feats);
  return {std::move(m), std::move(mem), valid};
}

}  // namespace

Outcome beam_matches_exhaustive(std::size_t instances) {
  Outcome out;
  for (std::size_t i = 0; i < instances; ++i) {
    const Instance in = make_instance(i);
    BeamConfig cfg;
    cfg.beam_size = 64;
    cfg.max_len = 4;
    const Hypothesis b = beam_search(in.model, in.memory, in.valid, cfg);
    const Hypothesis e = exhaustive_decode(in.model, in.memory, in.valid, cfg);
    out.record(b.tokens == e.tokens && std::abs(b.score - e.score) < 1e-9,
               "instance " + std::to_string(i));
  }
  return out;
}

Outcome beam_one_matches_greedy(std::size_t instances) {
  Outcome out;
  for (std::size_t i = 0; i < instances; ++i) {
    const Instance in = make_instance(i);
    BeamConfig cfg;
    cfg.beam_size = 1;
    cfg.max_len = 4;
    const Hypothesis b = beam_search(in.model, in.memory, in.valid, cfg);
    const Hypothesis g = greedy_decode(in.model, in.memory, in.valid, cfg);
    out.record(b.tokens == g.tokens && b.log_prob == g.log_prob, "instance " + std::to_string(i));
  }
  return out;
}

Outcome params_match_enumeration(std::size_t configs) {
  Outcome out;
  for (std::size_t i = 0; i < configs; ++i) {
    const ModelConfig cfg = random_config(500 + i);
    const LrtModel<float> m(cfg, 1);
    std::uint64_t enumerated = 0;
    for (const auto& v : m.params.vars()) enumerated += v.value().size();
    out.record(count_params(cfg).total == enumerated,
               cfg.describe() + ": " + std::to_string(count_params(cfg).total) + " vs " +
                   std::to_string(enumerated));
  }
  return out;
}

Outcome flops_match_instrumented(std::size_t configs) {
  Outcome out;
  for (std::size_t i = 0; i < configs; ++i) {
    const ModelConfig cfg = random_config(600 + i);
    Rng rng(700 + i);
    const LrtModel<float> m(cfg, 2);
    const std::size_t frames = kMinFrames + rng.below(40);
    const std::size_t tgt = 1 + rng.below(cfg.max_tgt_len);
    const auto feats = oracle::random<float>({frames, cfg.freq_bins}, rng);
    std::vector<int> ids{kSosId};
    while (ids.size() < tgt) ids.push_back(3 + static_cast<int>(rng.below(cfg.vocab_size - 3)));
    NoGradGuard guard;
    kernels::reset_mac_count();
    const auto mem = encode(m, feats, frames);
    decode_teacher_forced(m, mem, encoder_frames(frames), ids);
    const std::uint64_t counted = kernels::mac_count();
    const std::uint64_t analytic = flops_forward(cfg, frames, tgt);
    out.record(counted == analytic, cfg.describe() + ": analytic " + std::to_string(analytic) +
                                        " counted " + std::to_string(counted));
  }
  return out;
}

}  // namespace probe
