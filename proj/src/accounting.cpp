#include "lrt/accounting.hpp"

#include <cstdio>
#include <json.hpp>
#include <stdexcept>

namespace lrt {

std::uint64_t linear_macs(const LinearShape& s, std::size_t rows) {
  return layer_flop_count(s, rows);
}

namespace {

std::string linear_spec(const LinearShape& s) {
  std::string spec = std::to_string(s.in) + "x" + std::to_string(s.out);
  if (s.factorized()) spec += " r=" + std::to_string(s.rank);
  return spec;
}

using u64 = std::uint64_t;

// Self- or cross-attention sublayer: projections, per-head score and
// context products, layer norm.
ParamRow attention_row(const std::string& name, const ModelConfig& c, std::size_t q_rows,
                       std::size_t kv_rows) {
  const LinearShape s{c.d_model, c.d_model, c.rank};
  ParamRow row;
  row.name = name;
  row.spec = "4 x " + linear_spec(s) + " H=" + std::to_string(c.heads) + " + LN";
  row.params = 4 * layer_param_count(s) + 2 * c.d_model;
  row.flops = 2 * linear_macs(s, q_rows) + 2 * linear_macs(s, kv_rows) +
              2 * static_cast<u64>(q_rows) * kv_rows * c.d_model;
  return row;
}

ParamRow ff_row(const std::string& name, const ModelConfig& c, std::size_t rows) {
  const LinearShape s1{c.d_model, c.d_inner, c.rank};
  const LinearShape s2{c.d_inner, c.d_model, c.rank};
  ParamRow row;
  row.name = name;
  row.spec = linear_spec(s1) + " -> " + linear_spec(s2) + " + LN";
  row.params = layer_param_count(s1) + layer_param_count(s2) + 2 * c.d_model;
  row.flops = linear_macs(s1, rows) + linear_macs(s2, rows);
  return row;
}

}  // namespace

ParamReport count_params(const ModelConfig& cfg, std::size_t src_frames, std::size_t tgt_len) {
  cfg.validate();
  ParamReport r;
  r.model_id = cfg.low_rank() ? "r" + std::to_string(cfg.rank) : "full";
  r.config = cfg;
  r.ref_src_frames = src_frames;
  r.ref_tgt_len = tgt_len;

  std::size_t h = src_frames, w = cfg.freq_bins, in_ch = 1;
  for (std::size_t i = 0; i < 6; ++i) {
    const std::size_t out_ch = cfg.conv_channels[i / 2];
    ParamRow row;
    row.name = "frontend.conv" + std::to_string(i);
    row.spec = std::to_string(out_ch) + "x" + std::to_string(in_ch) + "x3x3";
    row.params = static_cast<u64>(out_ch) * in_ch * 9 + out_ch;
    row.flops = static_cast<u64>(out_ch) * in_ch * 9 * h * w;
    r.rows.push_back(row);
    in_ch = out_ch;
    if (i == 1 || i == 3) {
      h /= 2;
      w /= 2;
    }
  }
  const std::size_t mem = encoder_frames(src_frames);
  const LinearShape proj{cfg.frontend_width(), cfg.d_model, 0};
  r.rows.push_back({"frontend.proj", linear_spec(proj), layer_param_count(proj),
                    linear_macs(proj, mem)});
  r.rows.push_back({"embedding", std::to_string(cfg.vocab_size) + "x" + std::to_string(cfg.d_emb),
                    static_cast<u64>(cfg.vocab_size) * cfg.d_emb, 0});
  for (std::size_t l = 0; l < cfg.enc_layers; ++l) {
    const std::string p = "enc" + std::to_string(l);
    r.rows.push_back(attention_row(p + ".self", cfg, mem, mem));
    r.rows.push_back(ff_row(p + ".ff", cfg, mem));
  }
  for (std::size_t l = 0; l < cfg.dec_layers; ++l) {
    const std::string p = "dec" + std::to_string(l);
    r.rows.push_back(attention_row(p + ".self", cfg, tgt_len, tgt_len));
    r.rows.push_back(attention_row(p + ".cross", cfg, tgt_len, mem));
    r.rows.push_back(ff_row(p + ".ff", cfg, tgt_len));
  }
  const LinearShape out{cfg.d_model, cfg.vocab_size, cfg.output_rank()};
  r.rows.push_back({"output", linear_spec(out), layer_param_count(out), linear_macs(out, tgt_len)});

  for (const auto& row : r.rows) {
    r.total += row.params;
    r.flops_total += row.flops;
  }
  r.tied_total = r.total - static_cast<u64>(cfg.vocab_size) * cfg.d_emb;
  return r;
}

double compression_rate(const ModelConfig& model, const ModelConfig& baseline) {
  const double m = static_cast<double>(count_params(model).total);
  const double b = static_cast<double>(count_params(baseline).total);
  return 1.0 - m / b;
}

void attach_baseline(ParamReport& report, const ParamReport& baseline) {
  report.baseline_id = baseline.model_id;
  report.baseline_total = baseline.total;
  report.compression =
      1.0 - static_cast<double>(report.total) / static_cast<double>(baseline.total);
}

std::uint64_t flops_forward(const ModelConfig& cfg, std::size_t src_frames, std::size_t tgt_len) {
  if (src_frames < kMinFrames) throw std::invalid_argument("flops_forward: too few frames");
  if (tgt_len == 0) throw std::invalid_argument("flops_forward: empty target");
  return count_params(cfg, src_frames, tgt_len).flops_total;
}

std::string report_table(const ParamReport& r) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "model %s (%s)\n", r.model_id.c_str(), r.config.describe().c_str());
  out += buf;
  std::snprintf(buf, sizeof buf, "%-16s %-36s %14s %16s\n", "layer", "shape", "params", "macs");
  out += buf;
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%-16s %-36s %14llu %16llu\n", row.name.c_str(),
                  row.spec.c_str(), static_cast<unsigned long long>(row.params),
                  static_cast<unsigned long long>(row.flops));
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "%-16s %-36s %14llu %16llu\n", "TOTAL", "",
                static_cast<unsigned long long>(r.total),
                static_cast<unsigned long long>(r.flops_total));
  out += buf;
  std::snprintf(buf, sizeof buf, "total %.2fM (tied embedding %.2fM), macs at %zu frames / %zu tokens\n",
                static_cast<double>(r.total) / 1e6, static_cast<double>(r.tied_total) / 1e6,
                r.ref_src_frames, r.ref_tgt_len);
  out += buf;
  if (!r.baseline_id.empty()) {
    std::snprintf(buf, sizeof buf, "compression vs %s (%.2fM): %.2f%%\n", r.baseline_id.c_str(),
                  static_cast<double>(r.baseline_total) / 1e6, 100.0 * r.compression);
    out += buf;
  }
  return out;
}

std::string report_csv(const ParamReport& r) {
  std::string out = "model_id,layer,shape,params,macs\n";
  for (const auto& row : r.rows) {
    out += r.model_id + "," + row.name + ",\"" + row.spec + "\"," + std::to_string(row.params) +
           "," + std::to_string(row.flops) + "\n";
  }
  out += r.model_id + ",TOTAL,," + std::to_string(r.total) + "," + std::to_string(r.flops_total) +
         "\n";
  return out;
}

std::string report_json(const ParamReport& r) {
  nlohmann::ordered_json j;
  j["model_id"] = r.model_id;
  j["config"] = r.config.to_text();
  j["config_hash"] = hex64(r.config.hash());
  j["ref_src_frames"] = r.ref_src_frames;
  j["ref_tgt_len"] = r.ref_tgt_len;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    j["rows"].push_back({{"name", row.name}, {"shape", row.spec}, {"params", row.params},
                         {"macs", row.flops}});
  }
  j["total"] = r.total;
  j["tied_total"] = r.tied_total;
  j["macs_total"] = r.flops_total;
  if (!r.baseline_id.empty()) {
    j["baseline_id"] = r.baseline_id;
    j["baseline_total"] = r.baseline_total;
    j["compression"] = r.compression;
  }
  return j.dump(2) + "\n";
}

}  // namespace lrt
