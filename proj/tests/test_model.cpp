#include <doctest.h>

#include <cmath>

#include "lrt/model.hpp"
#include "oracles.hpp"
#include "probes.hpp"

using namespace lrt;
using V = Var<double>;

TEST_SUITE("model") {
  TEST_CASE("config text round trip and validation") {
    ModelConfig c = probe::micro_config();
    c.factorize_output = true;
    const ModelConfig back = ModelConfig::from_key_values(c.to_key_values());
    CHECK(back.to_text() == c.to_text());
    CHECK(back.hash() == c.hash());
    ModelConfig r = c;
    r.set("rank", "full");
    CHECK(r.rank == 0);
    CHECK(r.hash() != c.hash());
    CHECK_THROWS(r.set("no_such_key", "1"));
    CHECK_THROWS(r.set("d_model", "abc"));
    ModelConfig bad = c;
    bad.heads = 3;
    CHECK_THROWS(bad.validate());
    bad = c;
    bad.rank = 100;
    CHECK_THROWS(bad.validate());
    bad = c;
    bad.vocab_size = 3;
    CHECK_THROWS(bad.validate());
  }

  TEST_CASE("positional encoding values") {
    const auto pe = positional_encoding<double>(50, 16);
    for (std::size_t pos : {0, 1, 7, 49}) {
      for (std::size_t i = 0; i < 8; ++i) {
        const double w = std::pow(10000.0, -2.0 * static_cast<double>(i) / 16.0);
        CHECK(pe.at(pos, 2 * i) == doctest::Approx(std::sin(pos * w)).epsilon(1e-14));
        CHECK(pe.at(pos, 2 * i + 1) == doctest::Approx(std::cos(pos * w)).epsilon(1e-14));
      }
    }
  }

  TEST_CASE("parameter names follow the architecture") {
    ModelConfig c = probe::micro_config();
    const LrtModel<double> m(c, 3);
    const auto& names = m.params.names();
    CHECK(names.front() == "frontend.conv0.kernel");
    CHECK(std::find(names.begin(), names.end(), "enc0.self.q.E") != names.end());
    CHECK(std::find(names.begin(), names.end(), "dec1.cross.v.D") != names.end());
    CHECK(std::find(names.begin(), names.end(), "dec0.ff.ff2.E") != names.end());
    CHECK(std::find(names.begin(), names.end(), "output.W") != names.end());
    CHECK(m.embedding.shape() == Shape{c.vocab_size, c.d_emb});
    const LrtModel<double> again(c, 3);
    for (std::size_t i = 0; i < m.params.size(); ++i) {
      CHECK(m.params.vars()[i].value() == again.params.vars()[i].value());
    }
  }

  TEST_CASE("frontend output shape and length checks") {
    const ModelConfig c = probe::micro_config();
    const LrtModel<double> m(c, 4);
    Rng rng(4);
    const auto feats = oracle::random<double>({23, c.freq_bins}, rng);
    CHECK(vgg_frontend(m, feats, 23).shape() == Shape{5, c.d_model});
    CHECK(encode(m, feats, 17).shape() == Shape{5, c.d_model});
    CHECK_THROWS(vgg_frontend(m, feats, 3));
    CHECK_THROWS_AS(vgg_frontend(m, feats, 24), ShapeError);
    CHECK_THROWS_AS(vgg_frontend(m, oracle::random<double>({23, 9}, rng), 23), ShapeError);
    CHECK_THROWS(vgg_frontend(m, oracle::random<double>({65, c.freq_bins}, rng), 65));
    CHECK(encoder_frames(23) == 5);
    CHECK(encoder_frames(4) == 1);
  }

  TEST_CASE("decoder is causal at every position") {
    const auto r = probe::decoder_causality(10);
    INFO(r.detail);
    CHECK(r.ok());
  }

  TEST_CASE("padded frames do not affect logits") {
    const auto r = probe::padding_invariance(10);
    INFO(r.detail);
    CHECK(r.ok());
  }

  TEST_CASE("incremental decoding equals teacher forcing") {
    const auto r = probe::incremental_matches_teacher_forced(5);
    INFO(r.detail);
    CHECK(r.ok());
  }

  TEST_CASE("teacher forcing input checks") {
    const ModelConfig c = probe::micro_config(4, 4);
    const LrtModel<double> m(c, 5);
    Rng rng(5);
    const V mem = encode(m, oracle::random<double>({16, c.freq_bins}, rng), 16);
    const std::vector<int> no_sos{3, 4};
    CHECK_THROWS(decode_teacher_forced(m, mem, 4, no_sos));
    const std::vector<int> too_long{1, 3, 4, 5, 6};
    CHECK_THROWS(decode_teacher_forced(m, mem, 4, too_long));
  }

  TEST_CASE("batches pad features and targets") {
    Rng rng(6);
    const std::vector<Tensor<double>> feats{oracle::random<double>({10, 8}, rng),
                                            oracle::random<double>({6, 8}, rng)};
    const std::vector<std::vector<int>> text{{3, 4}, {5, 6, 7, 3}};
    const auto b = make_batch<double>(feats, text);
    CHECK(b.features.shape() == Shape{2, 10, 8});
    CHECK(b.feature_lengths == std::vector<std::size_t>{10, 6});
    CHECK(b.targets[0] == std::vector<int>{kSosId, 3, 4, kEosId, kPadId, kPadId});
    CHECK(b.targets[1] == std::vector<int>{kSosId, 5, 6, 7, 3, kEosId});
    CHECK(b.target_lengths == std::vector<std::size_t>{4, 6});
    CHECK(b.features[(10 + 6) * 8] == 0.0);  // frame 6 of utterance 1 is padding
  }

  TEST_CASE("cross entropy against a direct computation") {
    const Tensor<double> x({2, 3}, {1.0, 2.0, 0.5, -1.0, 0.0, 3.0});
    const std::vector<int> t{1, kPadId};
    const double ref = -(2.0 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(0.5)));
    CHECK(cross_entropy_loss(V::constant(x), t).value().item() == doctest::Approx(ref).epsilon(1e-14));
    const std::vector<int> all_pad{kPadId, kPadId};
    CHECK_THROWS(cross_entropy_loss(V::constant(x), all_pad));
  }

  TEST_CASE("training steps reduce the loss") {
    ModelConfig c = probe::micro_config(4, 8);
    LrtModel<double> m(c, 7);
    Rng rng(7);
    const std::vector<Tensor<double>> feats{oracle::random<double>({16, 8}, rng),
                                            oracle::random<double>({12, 8}, rng)};
    const std::vector<std::vector<int>> text{{3, 4, 5}, {6, 3}};
    const auto batch = make_batch<double>(feats, text);
    AdamState<double> opt;
    opt.lr = 1e-2;
    const double first = train_step(m, batch, opt);
    double last = first;
    for (int i = 0; i < 40; ++i) last = train_step(m, batch, opt);
    CHECK(last < 0.5 * first);
    CHECK(opt.step == 41);
  }
}
