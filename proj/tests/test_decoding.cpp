#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lrt/decoding.hpp"
#include "oracles.hpp"
#include "probes.hpp"

using namespace lrt;

TEST_SUITE("decoding") {
  TEST_CASE("sentence score and word count") {
    const std::vector<int> toks{kSosId, 3, 4, 5, kEosId};
    CHECK(wc(toks) == 3);
    CHECK(sentence_score(-2.0, 4, 1.0, 0.5) == doctest::Approx(-1.0));
    CHECK(sentence_score(-2.0, 0, 0.5, 0.5) == doctest::Approx(-1.0));
    Hypothesis a{{1, 3, 2}, -1.0, true, 0.5}, b{{1, 4, 2}, -1.0, true, 0.5};
    CHECK(better(a, b));
    CHECK(!better(b, a));
    b.score = 0.6;
    CHECK(better(b, a));
  }

  TEST_CASE("edit distance against the backtrace oracle") {
    Rng rng(1);
    for (int i = 0; i < 300; ++i) {
      std::u32string h, r;
      const std::size_t hn = rng.below(9), rn = rng.below(9);
      for (std::size_t k = 0; k < hn; ++k) h.push_back(U'a' + static_cast<char32_t>(rng.below(4)));
      for (std::size_t k = 0; k < rn; ++k) r.push_back(U'a' + static_cast<char32_t>(rng.below(4)));
      CHECK(edit_distance(h, r) == oracle::align(h, r).errors());
    }
    CHECK(edit_distance(U"kitten", U"sitting") == 3);
    CHECK(edit_distance(U"", U"abc") == 3);
  }

  TEST_CASE("character error rate") {
    CHECK(cer("abc", "abc") == 0.0);
    CHECK(cer("", "abcd") == 1.0);
    CHECK(cer("abxd", "abcd") == doctest::Approx(0.25));
    CHECK(cer("aabcd", "abcd") == doctest::Approx(0.25));
    CHECK(cer("\xe4\xb8\x80\xe4\xb8\x81", "\xe4\xb8\x80") == doctest::Approx(1.0));
    CHECK(cer("abcdefgh", "ab") == doctest::Approx(3.0));
    CHECK_THROWS(cer("a", ""));
    const std::vector<DecodeResult> rs{{"u1", "abc", "abd", 0, 3, true},
                                       {"u2", "x", "xyz", 0, 1, true}};
    CHECK(corpus_cer(rs) == doctest::Approx(3.0 / 6.0));
  }

  TEST_CASE("decode file format") {
    const DecodeResult r{"utt7", "abc", "abc", -1.25, 3, true};
    CHECK(format_decode_line(r) == "utt7\tabc\t-1.250000\t3");
    const auto path = std::filesystem::temp_directory_path() / "lrt_decode_test.txt";
    const std::vector<DecodeResult> rs{r, r};
    write_decode_file(path, rs);
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(ss.str() == "utt7\tabc\t-1.250000\t3\nutt7\tabc\t-1.250000\t3\n");
    std::filesystem::remove(path);
  }

  TEST_CASE("beam 64 finds the exhaustive optimum") {
    const auto r = probe::beam_matches_exhaustive(20);
    INFO(r.detail);
    CHECK(r.ok());
  }

  TEST_CASE("beam 1 is greedy") {
    const auto r = probe::beam_one_matches_greedy(20);
    INFO(r.detail);
    CHECK(r.ok());
  }

  TEST_CASE("length limits") {
    const ModelConfig c = probe::micro_config(4, 8);
    const LrtModel<double> m(c, 9);
    Rng rng(9);
    const auto feats = oracle::random<double>({20, c.freq_bins}, rng);
    BeamConfig cfg;
    cfg.beam_size = 4;
    cfg.max_len = 6;
    cfg.min_len = 6;
    for (const auto& h : {beam_search(m, feats, cfg), greedy_decode(m, feats, cfg)}) {
      CHECK(h.tokens.size() == 7);
      CHECK(h.tokens.front() == kSosId);
      CHECK(h.tokens.back() == kEosId);
      CHECK(h.finished);
      CHECK(wc(h.tokens) == 5);
    }
    cfg.min_len = 0;
    cfg.max_len = 3;
    const auto h = beam_search(m, feats, cfg);
    CHECK(h.tokens.size() <= 4);
    CHECK(h.finished);
    cfg.force_eos = false;
    cfg.min_len = 3;
    const auto open = greedy_decode(m, feats, cfg);
    CHECK(open.tokens.size() == 4);
    cfg.max_len = 9;
    CHECK_THROWS(beam_search(m, feats, cfg));
    cfg.max_len = 4;
    cfg.min_len = 5;
    CHECK_THROWS(greedy_decode(m, feats, cfg));
    cfg.min_len = 0;
    cfg.beam_size = 0;
    CHECK_THROWS(beam_search(m, feats, cfg));
  }

  TEST_CASE("beam scores are consistent with their tokens") {
    const ModelConfig c = probe::micro_config(5, 8);
    const LrtModel<double> m(c, 10);
    Rng rng(10);
    const auto feats = oracle::random<double>({24, c.freq_bins}, rng);
    BeamConfig cfg;
    cfg.max_len = 7;
    const auto h = beam_search(m, feats, cfg);
    CHECK(h.score == doctest::Approx(sentence_score(h.log_prob, wc(h.tokens), cfg.alpha, cfg.gamma)));
    const auto [mem, valid] = encode_utterance(m, feats);
    NoGradGuard guard;
    const std::vector<int> input(h.tokens.begin(), h.tokens.end() - 1);
    const auto lsm = log_softmax_lastdim(
        decode_teacher_forced(m, Var<double>::constant(mem), valid, input).value());
    double total = 0.0;
    for (std::size_t t = 0; t + 1 < h.tokens.size(); ++t) total += lsm.at(t, h.tokens[t + 1]);
    CHECK(h.log_prob == doctest::Approx(total).epsilon(1e-10));
  }
}
