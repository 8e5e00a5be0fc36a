// lrt: synthetic data, training, decoding, accounting, benchmarking and
// gradient checks for the low-rank transformer recognizer.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "lrt/accounting.hpp"
#include "lrt/bench.hpp"
#include "lrt/checkpoint.hpp"
#include "lrt/config.hpp"
#include "lrt/data.hpp"
#include "lrt/decoding.hpp"
#include "lrt/gradcheck.hpp"
#include "lrt/kernels.hpp"
#include "lrt/pipeline.hpp"

namespace fs = std::filesystem;
using namespace lrt;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string rank;
  std::uint64_t seed = 0;
  std::string dtype = "f32";
  std::string out;
};

void add_common(CLI::App* app, Common& c, bool with_config) {
  if (with_config) {
    app->add_option("--config", c.config, "model config file (key=value)");
    app->add_option("--set", c.sets, "config override key=value (repeatable)");
    app->add_option("--rank", c.rank, "rank override: full or an integer; report-params/bench accept a comma list");
  }
  app->add_option("--seed", c.seed, "random seed")->capture_default_str();
  app->add_option("--dtype", c.dtype, "element type: f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();
}

KeyValues override_pairs(const std::vector<std::string>& sets) {
  KeyValues kv;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw std::invalid_argument("--set expects key=value: " + s);
    kv.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return kv;
}

KeyValues config_pairs(const Common& c) {
  KeyValues kv = c.config.empty() ? KeyValues{} : load_key_values(c.config);
  merge_key_values(kv, override_pairs(c.sets));
  return kv;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- synth-data -----------------------------------------------------------

struct SynthArgs {
  Common c;
  SynthOptions opt;
};

int run_synth(SynthArgs& a) {
  if (a.c.out.empty()) throw std::invalid_argument("synth-data: --out is required");
  a.opt.seed = a.c.seed;
  const Manifest m = synth_dataset(a.c.out, a.opt);
  const Vocab v = build_vocab(m.transcripts());
  v.save(fs::path(a.c.out) / "vocab.txt");
  std::printf("wrote %zu utterances, %zu symbols to %s\n", m.utterances.size(), v.symbols().size(),
              a.c.out.c_str());
  return 0;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  Common c;
  std::string manifest;
  std::size_t steps = 300;
  std::size_t batch = 0;
  double lr = 1e-3;
  std::string log;
};

template <typename T>
int run_train_t(TrainArgs& a) {
  const Manifest m = load_manifest(a.manifest);
  const Vocab vocab = build_vocab(m.transcripts());
  KeyValues kv = config_pairs(a.c);
  merge_key_values(kv, {{"vocab_size", std::to_string(vocab.size())}});
  if (!a.c.rank.empty()) merge_key_values(kv, {{"rank", a.c.rank}});
  const ModelConfig cfg = ModelConfig::from_key_values(kv);
  const Corpus<T> corpus = load_corpus<T>(m, vocab);
  LrtModel<T> model(cfg, a.c.seed);
  TrainOptions opt;
  opt.steps = a.steps;
  opt.batch_size = a.batch;
  opt.seed = a.c.seed;
  opt.lr = a.lr;
  std::ofstream log;
  if (!a.log.empty()) {
    log.open(a.log, std::ios::binary);
    if (!log) throw std::runtime_error("cannot write " + a.log);
  }
  std::printf("training %s on %zu utterances, %zu parameters\n", cfg.describe().c_str(),
              corpus.size(), model.params.numel());
  train_model(model, corpus, opt, [&](std::size_t step, double loss) {
    const std::string line = "step " + std::to_string(step) + " loss " + fmt("%.6f", loss);
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    if (log) log << line << '\n';
  });
  save_checkpoint(a.c.out, model,
                  {{"vocab.symbols", vocab.to_text()},
                   {"train.seed", std::to_string(a.c.seed)},
                   {"train.steps", std::to_string(a.steps)}});
  std::printf("saved %s\n", a.c.out.c_str());
  return 0;
}

int run_train(TrainArgs& a) {
  if (a.c.out.empty()) throw std::invalid_argument("train: --out checkpoint path is required");
  return a.c.dtype == "f64" ? run_train_t<double>(a) : run_train_t<float>(a);
}

// ---- decode -----------------------------------------------------------------

struct DecodeArgs {
  Common c;
  std::string checkpoint;
  std::string manifest;
  BeamConfig beam;
  bool greedy = false;
};

Vocab checkpoint_vocab(const CheckpointInfo& info) {
  const std::string* syms = find_value(info.extra, "vocab.symbols");
  if (!syms) throw std::runtime_error("checkpoint has no vocab.symbols entry");
  return Vocab::from_text(*syms);
}

template <typename T>
int run_decode_t(DecodeArgs& a) {
  CheckpointInfo info;
  const LrtModel<T> model = load_checkpoint<T>(a.checkpoint, &info);
  const Vocab vocab = checkpoint_vocab(info);
  const Corpus<T> corpus = load_corpus<T>(load_manifest(a.manifest), vocab);
  a.beam.max_len = std::min(a.beam.max_len, model.config.max_tgt_len);
  const auto results = decode_corpus(model, vocab, corpus, a.beam, a.greedy);
  write_decode_file(a.c.out, results);
  double len = 0.0;
  for (const auto& r : results) len += static_cast<double>(r.length);
  std::printf("decoded %zu utterances (%s) -> %s\n", results.size(),
              a.greedy ? "greedy" : ("beam " + std::to_string(a.beam.beam_size)).c_str(),
              a.c.out.c_str());
  std::printf("CER %s%%  mean length %s\n", fmt("%.2f", 100.0 * corpus_cer(results)).c_str(),
              fmt("%.3f", len / static_cast<double>(results.size())).c_str());
  return 0;
}

int run_decode(DecodeArgs& a) {
  if (a.c.out.empty()) throw std::invalid_argument("decode: --out path is required");
  return a.c.dtype == "f64" ? run_decode_t<double>(a) : run_decode_t<float>(a);
}

// ---- report-params ------------------------------------------------------------

struct ReportArgs {
  Common c;
  std::string baseline;
  std::size_t src_frames = 400;
  std::size_t tgt_len = 24;
};

int run_report(ReportArgs& a) {
  const KeyValues kv = config_pairs(a.c);
  ModelConfig base_cfg;
  if (!a.baseline.empty()) {
    base_cfg = ModelConfig::from_key_values(load_key_values(a.baseline));
  } else {
    KeyValues b = kv;
    merge_key_values(b, {{"rank", "full"}});
    base_cfg = ModelConfig::from_key_values(b);
  }
  const ParamReport base = count_params(base_cfg, a.src_frames, a.tgt_len);
  std::vector<std::string> ranks = split_list(a.c.rank);
  if (ranks.empty()) ranks.push_back("");
  std::string csv, json = "[\n";
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    KeyValues m = kv;
    if (!ranks[i].empty()) merge_key_values(m, {{"rank", ranks[i]}});
    ParamReport r = count_params(ModelConfig::from_key_values(m), a.src_frames, a.tgt_len);
    attach_baseline(r, base);
    std::printf("%s\n", report_table(r).c_str());
    const std::string c = report_csv(r);
    csv += i == 0 ? c : c.substr(c.find('\n') + 1);
    std::string j = report_json(r);
    j.pop_back();
    json += j + (i + 1 < ranks.size() ? ",\n" : "\n");
  }
  json += "]\n";
  std::printf("%-10s %12s %12s %12s\n", "model", "params", "tied", "compression");
  for (const auto& rk : ranks) {
    KeyValues m = kv;
    if (!rk.empty()) merge_key_values(m, {{"rank", rk}});
    ParamReport r = count_params(ModelConfig::from_key_values(m), a.src_frames, a.tgt_len);
    attach_baseline(r, base);
    std::printf("%-10s %12llu %12llu %11.2f%%\n", r.model_id.c_str(),
                static_cast<unsigned long long>(r.total),
                static_cast<unsigned long long>(r.tied_total), 100.0 * r.compression);
  }
  if (!a.c.out.empty()) {
    write_text(fs::path(a.c.out) / "params.csv", csv);
    write_text(fs::path(a.c.out) / "params.json", json);
  }
  return 0;
}

// ---- bench --------------------------------------------------------------------

struct BenchArgs {
  Common c;
  std::vector<std::string> checkpoints;
  std::string manifest;
  std::size_t utts = 20;
  std::size_t frames = 200;
  BenchOptions opt;
};

template <typename T>
int run_bench_t(BenchArgs& a) {
  std::vector<LrtModel<T>> models;
  std::vector<std::string> ids;
  if (!a.checkpoints.empty()) {
    for (const auto& p : a.checkpoints) {
      models.push_back(load_checkpoint<T>(p));
      ids.push_back(fs::path(p).stem().string());
    }
  } else {
    const KeyValues kv = config_pairs(a.c);
    std::vector<std::string> ranks = split_list(a.c.rank);
    if (ranks.empty()) ranks = {"full"};
    for (const auto& rk : ranks) {
      KeyValues m = kv;
      merge_key_values(m, {{"rank", rk}});
      models.emplace_back(ModelConfig::from_key_values(m), a.c.seed);
      ids.push_back(rk == "full" ? "full" : "r" + rk);
    }
  }
  std::vector<Tensor<T>> data;
  if (!a.manifest.empty()) {
    for (const auto& u : load_manifest(a.manifest).utterances) data.push_back(read_features<T>(u.path));
  } else {
    SynthOptions so;
    so.seed = a.c.seed;
    so.n_utts = a.utts;
    so.frames = a.frames;
    so.bins = models[0].config.freq_bins;
    so.vocab_size = std::min<std::size_t>(26, models[0].config.vocab_size - 3);
    const fs::path dir = a.c.out.empty() ? fs::temp_directory_path() / "lrt_bench_data"
                                         : fs::path(a.c.out) / "bench_data";
    for (const auto& u : synth_dataset(dir, so).utterances) data.push_back(read_features<T>(u.path));
  }
  std::vector<BenchModel<T>> bm;
  for (std::size_t i = 0; i < models.size(); ++i) bm.push_back({ids[i], &models[i]});
  std::printf("benchmarking %zu models on %zu utterances, %zu reps\n", bm.size(), data.size(),
              a.opt.reps);
  const BenchSummary s = bench_inference<T>(bm, data, a.opt);
  const std::string csv = bench_csv(s);
  std::printf("%s", csv.c_str());
  if (!a.c.out.empty()) {
    write_text(fs::path(a.c.out) / "bench.csv", csv);
    write_text(fs::path(a.c.out) / "bench.json", bench_json(s));
  }
  return 0;
}

int run_bench(BenchArgs& a) {
  return a.c.dtype == "f64" ? run_bench_t<double>(a) : run_bench_t<float>(a);
}

// ---- gradcheck ------------------------------------------------------------------

struct GradArgs {
  Common c;
  double eps = 1e-5;
  double tol = 0.0;
};

int run_gradcheck(GradArgs& a) {
  const auto results = run_gradcheck_suite(a.c.seed, a.eps);
  bool ok = true;
  for (const auto& r : results) {
    const double tol = a.tol > 0.0 ? a.tol : r.tolerance;
    const bool pass = r.fd.max_rel_error < tol;
    ok = ok && pass;
    std::printf("%-10s coords %6zu  max rel error %.3e < %.0e  (raw %.3e, %zu at rounding level, %zu kinks)  %s\n",
                r.family.c_str(), r.fd.coordinates, r.fd.max_rel_error, tol, r.fd.raw_max_rel_error,
                r.fd.within_rounding, r.fd.kinks, pass ? "ok" : "FAIL");
    if (!pass) {
      std::printf("           worst: %s index %zu analytic %.9e numeric %.9e\n",
                  r.worst_name().c_str(), r.fd.worst_index, r.fd.analytic, r.fd.numeric);
    }
  }
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-rank transformer speech recognizer"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth-data", "write a synthetic corpus");
  add_common(s, synth.c, false);
  s->add_option("--out", synth.c.out, "output directory")->required();
  s->add_option("--n", synth.opt.n_utts, "utterances")->capture_default_str();
  s->add_option("--vocab", synth.opt.vocab_size, "content symbols")->capture_default_str();
  s->add_option("--frames", synth.opt.frames, "frames per utterance")->capture_default_str();
  s->add_option("--bins", synth.opt.bins, "frequency bins")->capture_default_str();
  s->add_option("--min-len", synth.opt.min_len, "shortest transcript")->capture_default_str();
  s->add_option("--max-len", synth.opt.max_len, "longest transcript")->capture_default_str();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train a model with teacher forcing");
  add_common(t, train.c, true);
  t->add_option("--manifest", train.manifest, "training manifest")->required();
  t->add_option("--steps", train.steps, "optimizer steps")->capture_default_str();
  t->add_option("--batch", train.batch, "utterances per step (0 = all)")->capture_default_str();
  t->add_option("--lr", train.lr, "learning rate")->capture_default_str();
  t->add_option("--log", train.log, "also write the loss log here");
  t->add_option("--out", train.c.out, "checkpoint path")->required();

  DecodeArgs dec;
  auto* d = app.add_subcommand("decode", "decode a manifest and score CER");
  add_common(d, dec.c, false);
  d->add_option("--checkpoint", dec.checkpoint, "model checkpoint")->required();
  d->add_option("--manifest", dec.manifest, "manifest to decode")->required();
  d->add_option("--beam", dec.beam.beam_size, "beam size")->capture_default_str();
  d->add_option("--alpha", dec.beam.alpha, "log-probability weight")->capture_default_str();
  d->add_option("--gamma", dec.beam.gamma, "length bonus weight")->capture_default_str();
  d->add_option("--max-len", dec.beam.max_len, "max emitted tokens")->capture_default_str();
  d->add_flag("--greedy", dec.greedy, "greedy decoding");
  d->add_option("--out", dec.c.out, "decode output file")->required();

  ReportArgs rep;
  auto* r = app.add_subcommand("report-params", "parameter and MAC accounting");
  add_common(r, rep.c, true);
  r->add_option("--baseline", rep.baseline, "baseline config (default: --config at full rank)");
  r->add_option("--src-frames", rep.src_frames, "reference input frames")->capture_default_str();
  r->add_option("--tgt-len", rep.tgt_len, "reference decoder length")->capture_default_str();
  r->add_option("--out", rep.c.out, "directory for params.csv / params.json");

  BenchArgs bench;
  bench.opt.beam.max_len = 24;
  bench.opt.beam.min_len = 24;
  auto* b = app.add_subcommand("bench", "single-threaded decode latency");
  add_common(b, bench.c, true);
  b->add_option("--checkpoint", bench.checkpoints, "checkpoints (first is the baseline)");
  b->add_option("--manifest", bench.manifest, "features to decode (default: synthetic)");
  b->add_option("--utts", bench.utts, "synthetic utterances")->capture_default_str();
  b->add_option("--frames", bench.frames, "synthetic frames per utterance")->capture_default_str();
  b->add_option("--reps", bench.opt.reps, "timed passes over the data")->capture_default_str();
  b->add_option("--warmup", bench.opt.warmup, "untimed decodes per model")->capture_default_str();
  b->add_option("--beam", bench.opt.beam.beam_size, "beam size")->capture_default_str();
  b->add_option("--alpha", bench.opt.beam.alpha, "log-probability weight")->capture_default_str();
  b->add_option("--gamma", bench.opt.beam.gamma, "length bonus weight")->capture_default_str();
  b->add_option("--max-len", bench.opt.beam.max_len, "max emitted tokens")->capture_default_str();
  b->add_option("--min-len", bench.opt.beam.min_len, "min emitted tokens")->capture_default_str();
  b->add_option("--out", bench.c.out, "directory for bench.csv / bench.json");

  GradArgs grad;
  auto* g = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  add_common(g, grad.c, false);
  g->add_option("--eps", grad.eps, "central difference step")->capture_default_str();
  g->add_option("--tol", grad.tol, "max relative error (0: per-family default)")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*s) return run_synth(synth);
    if (*t) return run_train(train);
    if (*d) return run_decode(dec);
    if (*r) return run_report(rep);
    if (*b) return run_bench(bench);
    if (*g) return run_gradcheck(grad);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "lrt: error: %s\n", e.what());
    return 1;
  }
  return 1;
}
