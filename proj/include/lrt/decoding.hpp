#pragma once
// Beam search with length-bonus sentence scoring, greedy and exhaustive
// decoders, and character error rate.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lrt/data.hpp"
#include "lrt/model.hpp"

namespace lrt {

struct Hypothesis {
  std::vector<int> tokens;  // starts with <SOS>; ends with <EOS> when finished
  double log_prob = 0.0;
  bool finished = false;
  double score = 0.0;
};

struct BeamConfig {
  std::size_t beam_size = 8;
  double alpha = 1.0;
  double gamma = 0.1;
  /// Emitted tokens per hypothesis, <EOS> included.
  std::size_t max_len = 100;
  /// <EOS> is not emissible before this many tokens.
  std::size_t min_len = 0;
  /// At step max_len only <EOS> is emissible, so every search finishes.
  bool force_eos = true;
};

/// Emitted non-special tokens.
std::size_t wc(std::span<const int> tokens);

/// alpha * log_prob + gamma * sqrt(wc).
double sentence_score(double log_prob, std::size_t word_count, double alpha, double gamma);

/// Orders by score descending, then token sequence ascending.
bool better(const Hypothesis& a, const Hypothesis& b);

/// Each step ranks every extension of the live set by cumulative
/// log-probability (ties: parent sequence, then token id) and keeps the top
/// beam_size: <EOS> extensions join the finished pool, the rest form the next
/// live set. Search ends when nothing is live, max_len is reached, or
/// (alpha >= 0) the best pooled score exceeds what any live hypothesis could
/// still reach, its log-probability being non-increasing and its length bonus
/// capped at max_len. The result maximizes the sentence score over the pool;
/// with an empty pool the best live hypothesis is returned with
/// finished == false. With beam_size 1 this is greedy decoding.
template <typename T>
Hypothesis beam_search(const LrtModel<T>& model, const Tensor<T>& memory, std::size_t valid_memory,
                       const BeamConfig& cfg);
template <typename T>
Hypothesis beam_search(const LrtModel<T>& model, const Tensor<T>& features, const BeamConfig& cfg);

/// Argmax each step (lowest id on ties) until <EOS> or max_len. Honors
/// min_len and force_eos; beam_size is ignored.
template <typename T>
Hypothesis greedy_decode(const LrtModel<T>& model, const Tensor<T>& memory,
                         std::size_t valid_memory, const BeamConfig& cfg);
template <typename T>
Hypothesis greedy_decode(const LrtModel<T>& model, const Tensor<T>& features, const BeamConfig& cfg);

/// Scores every <EOS>-terminated sequence of length min_len..max_len with a
/// teacher-forced pass and returns the best. Requires at most 1e6 sequences.
template <typename T>
Hypothesis exhaustive_decode(const LrtModel<T>& model, const Tensor<T>& memory,
                             std::size_t valid_memory, const BeamConfig& cfg);

/// Encoder memory value and its valid length for one utterance.
template <typename T>
std::pair<Tensor<T>, std::size_t> encode_utterance(const LrtModel<T>& model,
                                                   const Tensor<T>& features);

/// Levenshtein distance with unit costs.
std::size_t edit_distance(std::u32string_view hyp, std::u32string_view ref);
/// edit_distance / |ref| on Unicode scalar values; throws on an empty reference.
double cer(std::string_view hyp_utf8, std::string_view ref_utf8);

struct DecodeResult {
  std::string id;
  std::string text;
  std::string reference;
  double score = 0.0;
  std::size_t length = 0;
  bool finished = true;
};

/// "id<TAB>text<TAB>score<TAB>length" per line, score with six decimals.
void write_decode_file(const std::filesystem::path& path, std::span<const DecodeResult> results);
std::string format_decode_line(const DecodeResult& r);

/// Total edit distance over total reference length.
double corpus_cer(std::span<const DecodeResult> results);

}  // namespace lrt
