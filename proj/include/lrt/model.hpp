#pragma once
// Encoder-decoder speech recognizer: convolutional frontend, self-attention
// encoder, causal decoder with cross-attention, vocabulary projection.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lrt/autograd.hpp"
#include "lrt/config.hpp"
#include "lrt/layers.hpp"
#include "lrt/tensor.hpp"

namespace lrt {

inline constexpr int kPadId = 0;
inline constexpr int kSosId = 1;
inline constexpr int kEosId = 2;

struct ModelConfig {
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 4;
  std::size_t d_model = 512;
  std::size_t d_inner = 2048;
  std::size_t d_emb = 512;
  std::size_t heads = 8;
  std::size_t rank = 0;  // 0 = full rank
  std::size_t vocab_size = 4233;
  std::size_t max_src_frames = 3000;
  std::size_t max_tgt_len = 200;
  std::size_t freq_bins = 64;
  std::vector<std::size_t> conv_channels{32, 64, 128};
  bool factorize_output = false;

  bool low_rank() const { return rank != 0; }
  /// Rank used for the vocabulary projection (0 when unfactorized).
  std::size_t output_rank() const { return factorize_output ? rank : 0; }
  /// Frequency width after the two pooling stages.
  std::size_t pooled_bins() const { return freq_bins / 4; }
  /// Flattened per-frame width entering the frontend projection.
  std::size_t frontend_width() const { return conv_channels.back() * pooled_bins(); }

  /// Throws std::invalid_argument naming the key on an unknown key or bad value.
  void set(const std::string& key, const std::string& value);
  static ModelConfig from_key_values(const KeyValues& kv);
  KeyValues to_key_values() const;
  std::string to_text() const;
  std::uint64_t hash() const;
  void validate() const;
  std::string describe() const;
};

/// Encoder frames after the 4x time reduction of the frontend.
inline std::size_t encoder_frames(std::size_t frames) { return frames / 2 / 2; }

/// Smallest input length the frontend accepts.
inline constexpr std::size_t kMinFrames = 4;

template <typename T>
struct EncoderLayer {
  LrmhaParams<T> self_attn;
  LrffParams<T> ff;
};

template <typename T>
struct DecoderLayer {
  LrmhaParams<T> self_attn;
  LrmhaParams<T> cross_attn;
  LrffParams<T> ff;
};

template <typename T>
struct LrtModel {
  ModelConfig config;
  ParameterSet<T> params;
  std::vector<Var<T>> conv_kernels;  // 6 x [Co x C x 3 x 3]
  std::vector<Var<T>> conv_biases;   // 6 x [Co]
  FullLinear<T> frontend_proj;       // frontend_width -> d_model
  Var<T> embedding;                  // vocab x d_emb
  std::vector<EncoderLayer<T>> encoder;
  std::vector<DecoderLayer<T>> decoder;
  Projection<T> output;              // d_model -> vocab

  /// Builds and initializes every parameter from `seed`.
  LrtModel(ModelConfig cfg, std::uint64_t seed);
};

/// Sinusoidal table [length x d]: sin on even columns, cos on odd.
template <typename T>
Tensor<T> positional_encoding(std::size_t length, std::size_t d);

/// features [frames x freq_bins] -> [frames/4 x d_model] before positional
/// encoding. Frames at or past `valid_frames` are zeroed at every stage.
template <typename T>
Var<T> vgg_frontend(const LrtModel<T>& model, const Tensor<T>& features,
                    std::size_t valid_frames);

/// Encoder memory [frames/4 x d_model] for one utterance.
template <typename T>
Var<T> encode(const LrtModel<T>& model, const Tensor<T>& features, std::size_t valid_frames);

/// Logits [T x vocab] for inputs beginning with <SOS>; row t predicts token t+1.
template <typename T>
Var<T> decode_teacher_forced(const LrtModel<T>& model, const Var<T>& memory,
                             std::size_t valid_memory, std::span<const int> input_ids);

/// Mean NLL over rows whose target is not <PAD>.
template <typename T>
Var<T> cross_entropy_loss(const Var<T>& logits, std::span<const int> targets);

/// Padded mini-batch: features [B x frames x freq_bins]; targets include the
/// <SOS> prefix and <EOS> suffix and are right-padded with <PAD>.
template <typename T>
struct Batch {
  Tensor<T> features;
  std::vector<std::size_t> feature_lengths;
  std::vector<std::vector<int>> targets;
  std::vector<std::size_t> target_lengths;
  std::size_t size() const { return feature_lengths.size(); }
};

/// Pads per-utterance features and transcripts (content ids, no specials).
template <typename T>
Batch<T> make_batch(std::span<const Tensor<T>> features,
                    std::span<const std::vector<int>> transcripts);

/// Sum over utterances of teacher-forced NLL, divided by the number of
/// predicted tokens.
template <typename T>
Var<T> batch_loss(const LrtModel<T>& model, const Batch<T>& batch);

template <typename T>
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m, v;
};

/// Forward, backward, clipped Adam update. Returns the pre-update loss and
/// throws std::runtime_error on a non-finite loss.
template <typename T>
double train_step(LrtModel<T>& model, const Batch<T>& batch, AdamState<T>& opt);

/// Step-by-step decoder for a set of hypotheses sharing one encoder memory.
/// Self-attention keys and values are cached per hypothesis; cross-attention
/// keys and values are computed once.
template <typename T>
class IncrementalDecoder {
 public:
  IncrementalDecoder(const LrtModel<T>& model, const Tensor<T>& memory, std::size_t valid_memory);

  /// Extends hypothesis parents[i] by tokens[i] for every i and returns the
  /// next-token log-probabilities [n x vocab]. The first call must pass no
  /// parents (empty span) and the <SOS> token for each new hypothesis.
  Tensor<T> step(std::span<const std::size_t> parents, std::span<const int> tokens);

  std::size_t position() const { return position_; }

 private:
  const LrtModel<T>& model_;
  Var<T> memory_;
  std::vector<Var<T>> cross_k_, cross_v_;
  std::size_t valid_memory_;
  std::size_t position_ = 0;
  // caches_[layer][hyp] holds position_ rows of width d_model.
  std::vector<std::vector<std::vector<T>>> k_cache_, v_cache_;
};

}  // namespace lrt
