#pragma once
// Closed-form parameter and multiply-accumulate accounting.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lrt/model.hpp"

namespace lrt {

struct ParamRow {
  std::string name;
  std::string spec;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;  // multiply-accumulates at the report's reference lengths
};

struct ParamReport {
  std::string model_id;
  ModelConfig config;
  std::size_t ref_src_frames = 0;
  std::size_t ref_tgt_len = 0;
  std::vector<ParamRow> rows;
  std::uint64_t total = 0;
  /// total minus the embedding table, as if it shared the output weight.
  std::uint64_t tied_total = 0;
  std::uint64_t flops_total = 0;
  std::string baseline_id;
  std::uint64_t baseline_total = 0;
  double compression = 0.0;
};

/// Multiply-accumulates of a linear map over `rows` inputs.
std::uint64_t linear_macs(const LinearShape& s, std::size_t rows);

/// Walks the architecture without instantiating it. Flops are those of one
/// teacher-forced forward pass with `src_frames` input frames and `tgt_len`
/// decoder inputs.
ParamReport count_params(const ModelConfig& cfg, std::size_t src_frames = 400,
                         std::size_t tgt_len = 24);

/// 1 - params(model) / params(baseline).
double compression_rate(const ModelConfig& model, const ModelConfig& baseline);

/// Fills baseline fields and compression of `report`.
void attach_baseline(ParamReport& report, const ParamReport& baseline);

/// Multiply-accumulates of encode + decode_teacher_forced for one utterance.
std::uint64_t flops_forward(const ModelConfig& cfg, std::size_t src_frames, std::size_t tgt_len);

std::string report_table(const ParamReport& r);
/// Header plus one line per row and a TOTAL line.
std::string report_csv(const ParamReport& r);
std::string report_json(const ParamReport& r);

}  // namespace lrt
