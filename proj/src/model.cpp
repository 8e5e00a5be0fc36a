#include "lrt/model.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "lrt/random.hpp"
#include "lrt/tensor_ops.hpp"

namespace lrt {

namespace {

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != value.size() || value.front() == '-') {
    throw std::invalid_argument(key + ": expected a non-negative integer, got '" + value + "'");
  }
  return static_cast<std::size_t>(v);
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

void ModelConfig::set(const std::string& key, const std::string& value) {
  if (key == "enc_layers") enc_layers = parse_size(key, value);
  else if (key == "dec_layers") dec_layers = parse_size(key, value);
  else if (key == "d_model") d_model = parse_size(key, value);
  else if (key == "d_inner") d_inner = parse_size(key, value);
  else if (key == "d_emb") d_emb = parse_size(key, value);
  else if (key == "heads") heads = parse_size(key, value);
  else if (key == "rank") rank = value == "full" ? 0 : parse_size(key, value);
  else if (key == "vocab_size") vocab_size = parse_size(key, value);
  else if (key == "max_src_frames") max_src_frames = parse_size(key, value);
  else if (key == "max_tgt_len") max_tgt_len = parse_size(key, value);
  else if (key == "freq_bins") freq_bins = parse_size(key, value);
  else if (key == "conv_channels") {
    std::vector<std::size_t> ch;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) ch.push_back(parse_size(key, item));
    conv_channels = std::move(ch);
  } else if (key == "factorize_output") {
    if (value == "true" || value == "1") factorize_output = true;
    else if (value == "false" || value == "0") factorize_output = false;
    else throw std::invalid_argument(key + ": expected true or false, got '" + value + "'");
  } else {
    throw std::invalid_argument("unknown model config key: " + key);
  }
}

ModelConfig ModelConfig::from_key_values(const KeyValues& kv) {
  ModelConfig c;
  for (const auto& [k, v] : kv) c.set(k, v);
  c.validate();
  return c;
}

KeyValues ModelConfig::to_key_values() const {
  return {
      {"enc_layers", std::to_string(enc_layers)},
      {"dec_layers", std::to_string(dec_layers)},
      {"d_model", std::to_string(d_model)},
      {"d_inner", std::to_string(d_inner)},
      {"d_emb", std::to_string(d_emb)},
      {"heads", std::to_string(heads)},
      {"rank", rank == 0 ? std::string("full") : std::to_string(rank)},
      {"vocab_size", std::to_string(vocab_size)},
      {"max_src_frames", std::to_string(max_src_frames)},
      {"max_tgt_len", std::to_string(max_tgt_len)},
      {"freq_bins", std::to_string(freq_bins)},
      {"conv_channels", join_sizes(conv_channels)},
      {"factorize_output", factorize_output ? "true" : "false"},
  };
}

std::string ModelConfig::to_text() const { return format_key_values(to_key_values()); }

std::uint64_t ModelConfig::hash() const { return fnv1a64(to_text()); }

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (d_model == 0 || d_inner == 0 || heads == 0) fail("d_model, d_inner and heads must be positive");
  if (d_model % heads != 0) {
    fail("d_model " + std::to_string(d_model) + " not divisible by heads " + std::to_string(heads));
  }
  if (d_emb != d_model) fail("d_emb must equal d_model");
  if (vocab_size < 4) fail("vocab_size must cover the three reserved tokens plus one symbol");
  if (freq_bins < 4) fail("freq_bins must be at least 4");
  if (conv_channels.size() != 3) fail("conv_channels needs three entries");
  for (const auto c : conv_channels) {
    if (c == 0) fail("conv_channels entries must be positive");
  }
  if (max_src_frames < kMinFrames) fail("max_src_frames below frontend minimum");
  if (max_tgt_len < 2) fail("max_tgt_len must be at least 2");
  if (low_rank()) {
    std::size_t limit = std::min(d_model, d_inner);
    if (factorize_output) limit = std::min(limit, vocab_size);
    if (rank > limit) {
      fail("rank " + std::to_string(rank) + " exceeds " + std::to_string(limit));
    }
  }
}

std::string ModelConfig::describe() const {
  return "M=" + std::to_string(enc_layers) + " N=" + std::to_string(dec_layers) +
         " d_model=" + std::to_string(d_model) + " d_inner=" + std::to_string(d_inner) +
         " H=" + std::to_string(heads) + " rank=" + (rank ? std::to_string(rank) : "full") +
         " vocab=" + std::to_string(vocab_size);
}

template <typename T>
LrtModel<T>::LrtModel(ModelConfig cfg, std::uint64_t seed) : config(std::move(cfg)) {
  config.validate();
  Rng rng(seed);
  const auto& ch = config.conv_channels;
  std::size_t in_ch = 1;
  for (std::size_t i = 0; i < 6; ++i) {
    const std::size_t out_ch = ch[i / 2];
    const double limit = std::sqrt(6.0 / static_cast<double>(9 * (in_ch + out_ch)));
    Tensor<T> k({out_ch, in_ch, 3, 3});
    for (auto& v : k.data()) v = static_cast<T>(rng.uniform(-limit, limit));
    const std::string name = "frontend.conv" + std::to_string(i);
    conv_kernels.push_back(params.add(name + ".kernel", std::move(k)));
    conv_biases.push_back(params.add(name + ".bias", Tensor<T>({out_ch})));
    in_ch = out_ch;
  }
  frontend_proj =
      make_full_linear(params, "frontend.proj", config.frontend_width(), config.d_model, rng);
  embedding = params.add("embedding", glorot_uniform<T>(config.vocab_size, config.d_emb, rng));
  const std::size_t d = config.d_model;
  for (std::size_t l = 0; l < config.enc_layers; ++l) {
    const std::string p = "enc" + std::to_string(l);
    EncoderLayer<T> layer;
    layer.self_attn = make_lrmha(params, p + ".self", d, config.heads, config.rank, rng);
    layer.ff = make_lrff(params, p + ".ff", d, config.d_inner, config.rank, rng);
    encoder.push_back(std::move(layer));
  }
  for (std::size_t l = 0; l < config.dec_layers; ++l) {
    const std::string p = "dec" + std::to_string(l);
    DecoderLayer<T> layer;
    layer.self_attn = make_lrmha(params, p + ".self", d, config.heads, config.rank, rng);
    layer.cross_attn = make_lrmha(params, p + ".cross", d, config.heads, config.rank, rng);
    layer.ff = make_lrff(params, p + ".ff", d, config.d_inner, config.rank, rng);
    decoder.push_back(std::move(layer));
  }
  output = make_projection(params, "output", LinearShape{d, config.vocab_size, config.output_rank()},
                           rng);
}

template <typename T>
Tensor<T> positional_encoding(std::size_t length, std::size_t d) {
  Tensor<T> pe({length, d});
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t j = 0; j < d; ++j) {
      const double expo = static_cast<double>(j - j % 2) / static_cast<double>(d);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, expo);
      pe.at(pos, j) = static_cast<T>(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

namespace {

template <typename T>
Var<T> mask_time(const Var<T>& x, std::size_t valid) {
  const Shape& s = x.shape();
  if (valid >= s[1]) return x;
  Tensor<T> m(s);
  for (std::size_t c = 0; c < s[0]; ++c) {
    T* row = m.ptr() + c * s[1] * s[2];
    std::fill(row, row + valid * s[2], T{1});
  }
  return ag::mul(x, Var<T>::constant(std::move(m)));
}

std::optional<AttentionMask> padding_mask(std::size_t rows, std::size_t cols, std::size_t valid) {
  if (valid >= cols) return std::nullopt;
  return AttentionMask::key_padding(rows, cols, valid);
}

// Row i sits at position first_pos + i, or at first_pos for every row when
// `same_position` is set.
template <typename T>
Var<T> embed_tokens(const LrtModel<T>& model, std::span<const int> ids, std::size_t first_pos,
                    bool same_position = false) {
  const std::size_t d = model.config.d_model;
  const Var<T> e = ag::scale(ag::embedding(model.embedding, ids),
                             static_cast<T>(std::sqrt(static_cast<double>(d))));
  const std::size_t span = same_position ? 1 : ids.size();
  const Tensor<T> table = positional_encoding<T>(first_pos + span, d);
  Tensor<T> pe({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(table.ptr() + (first_pos + (same_position ? 0 : i)) * d, d, pe.ptr() + i * d);
  }
  return ag::add(e, Var<T>::constant(std::move(pe)));
}

}  // namespace

template <typename T>
Var<T> vgg_frontend(const LrtModel<T>& model, const Tensor<T>& features,
                    std::size_t valid_frames) {
  const ModelConfig& cfg = model.config;
  if (features.rank() != 2 || features.cols() != cfg.freq_bins) {
    throw ShapeError("vgg_frontend: features " + shape_str(features.shape()) + ", expected [T x " +
                     std::to_string(cfg.freq_bins) + "]");
  }
  const std::size_t frames = features.rows();
  if (valid_frames > frames) throw ShapeError("vgg_frontend: valid length exceeds frame count");
  if (frames > cfg.max_src_frames) {
    throw std::invalid_argument("vgg_frontend: " + std::to_string(frames) +
                                " frames exceed max_src_frames " +
                                std::to_string(cfg.max_src_frames));
  }
  if (valid_frames < kMinFrames) {
    throw std::invalid_argument("vgg_frontend: " + std::to_string(valid_frames) +
                                " frames is shorter than the frontend receptive field (" +
                                std::to_string(kMinFrames) + ")");
  }
  std::size_t valid = valid_frames;
  Var<T> x = mask_time(Var<T>::constant(features.reshaped({1, frames, cfg.freq_bins})), valid);
  for (std::size_t block = 0; block < 3; ++block) {
    for (std::size_t j = 0; j < 2; ++j) {
      const std::size_t i = 2 * block + j;
      x = mask_time(ag::relu(ag::conv2d(x, model.conv_kernels[i], model.conv_biases[i], 1, 1)),
                    valid);
    }
    if (block < 2) {
      x = ag::max_pool2d(x, 2);
      valid /= 2;
      x = mask_time(x, valid);
    }
  }
  return full_forward(ag::frames_to_rows(x), model.frontend_proj);
}

template <typename T>
Var<T> encode(const LrtModel<T>& model, const Tensor<T>& features, std::size_t valid_frames) {
  const Var<T> front = vgg_frontend(model, features, valid_frames);
  const std::size_t len = front.shape()[0];
  Var<T> x = ag::add(front, Var<T>::constant(positional_encoding<T>(len, model.config.d_model)));
  const auto mask = padding_mask(len, len, encoder_frames(valid_frames));
  const AttentionMask* mp = mask ? &*mask : nullptr;
  for (const auto& layer : model.encoder) {
    x = lrmha_forward(x, x, x, mp, layer.self_attn);
    x = lrff_forward(x, layer.ff);
  }
  return x;
}

template <typename T>
Var<T> decode_teacher_forced(const LrtModel<T>& model, const Var<T>& memory,
                             std::size_t valid_memory, std::span<const int> input_ids) {
  if (input_ids.empty() || input_ids.front() != kSosId) {
    throw std::invalid_argument("decode_teacher_forced: inputs must begin with <SOS>");
  }
  if (input_ids.size() > model.config.max_tgt_len) {
    throw std::invalid_argument("decode_teacher_forced: target length " +
                                std::to_string(input_ids.size()) + " exceeds max_tgt_len " +
                                std::to_string(model.config.max_tgt_len));
  }
  const std::size_t len = input_ids.size();
  const std::size_t mem_len = memory.shape()[0];
  const AttentionMask causal = AttentionMask::causal(len);
  const auto cross_mask = padding_mask(len, mem_len, valid_memory);
  const AttentionMask* cp = cross_mask ? &*cross_mask : nullptr;
  Var<T> y = embed_tokens(model, input_ids, 0);
  for (const auto& layer : model.decoder) {
    y = lrmha_forward(y, y, y, &causal, layer.self_attn);
    y = lrmha_forward(y, memory, memory, cp, layer.cross_attn);
    y = lrff_forward(y, layer.ff);
  }
  return project(y, model.output);
}

template <typename T>
Var<T> cross_entropy_loss(const Var<T>& logits, std::span<const int> targets) {
  std::size_t count = 0;
  for (const int t : targets) count += t != kPadId;
  if (count == 0) throw std::invalid_argument("cross_entropy_loss: every target is <PAD>");
  return ag::scale(ag::nll_sum(logits, targets, kPadId), static_cast<T>(1.0 / count));
}

template <typename T>
Batch<T> make_batch(std::span<const Tensor<T>> features,
                    std::span<const std::vector<int>> transcripts) {
  if (features.size() != transcripts.size() || features.empty()) {
    throw std::invalid_argument("make_batch: need equal, non-zero feature and transcript counts");
  }
  const std::size_t bins = features[0].cols();
  std::size_t max_frames = 0, max_tgt = 0;
  for (std::size_t b = 0; b < features.size(); ++b) {
    if (features[b].cols() != bins) throw ShapeError("make_batch: bin counts differ");
    max_frames = std::max(max_frames, features[b].rows());
    max_tgt = std::max(max_tgt, transcripts[b].size() + 2);
  }
  Batch<T> batch;
  batch.features = Tensor<T>({features.size(), max_frames, bins});
  for (std::size_t b = 0; b < features.size(); ++b) {
    std::copy(features[b].data().begin(), features[b].data().end(),
              batch.features.ptr() + b * max_frames * bins);
    batch.feature_lengths.push_back(features[b].rows());
    std::vector<int> ids{kSosId};
    ids.insert(ids.end(), transcripts[b].begin(), transcripts[b].end());
    ids.push_back(kEosId);
    batch.target_lengths.push_back(ids.size());
    ids.resize(max_tgt, kPadId);
    batch.targets.push_back(std::move(ids));
  }
  return batch;
}

template <typename T>
Var<T> batch_loss(const LrtModel<T>& model, const Batch<T>& batch) {
  const std::size_t frames = batch.features.dim(1), bins = batch.features.dim(2);
  Var<T> total;
  std::size_t count = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Tensor<T> feats({frames, bins});
    std::copy_n(batch.features.ptr() + b * frames * bins, frames * bins, feats.ptr());
    const std::size_t valid = batch.feature_lengths[b];
    const Var<T> memory = encode(model, feats, valid);
    const std::size_t len = batch.target_lengths[b];
    const std::span<const int> ids(batch.targets[b].data(), len);
    const Var<T> logits =
        decode_teacher_forced(model, memory, encoder_frames(valid), ids.first(len - 1));
    const Var<T> nll = ag::nll_sum(logits, ids.subspan(1), kPadId);
    total = total.defined() ? ag::add(total, nll) : nll;
    for (const int t : ids.subspan(1)) count += t != kPadId;
  }
  if (count == 0) throw std::invalid_argument("batch_loss: no target tokens");
  return ag::scale(total, static_cast<T>(1.0 / count));
}

template <typename T>
double train_step(LrtModel<T>& model, const Batch<T>& batch, AdamState<T>& opt) {
  const Var<T> loss = batch_loss(model, batch);
  const double value = static_cast<double>(loss.value().item());
  if (!std::isfinite(value)) {
    throw std::runtime_error("train_step: non-finite loss (training diverged)");
  }
  const auto params = model.params.vars();
  std::vector<Tensor<T>> grads =
      dense_gradients(backward(loss), std::span<const Var<T>>(params.data(), params.size()));
  double sq = 0.0;
  for (const auto& g : grads) {
    for (const T v : g.data()) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  const double norm = std::sqrt(sq);
  const double clip = norm > opt.clip_norm ? opt.clip_norm / norm : 1.0;
  if (opt.m.empty()) {
    for (const auto& p : params) {
      opt.m.emplace_back(p.shape());
      opt.v.emplace_back(p.shape());
    }
  }
  ++opt.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& w = params[i].mutable_value();
    Tensor<T>& m = opt.m[i];
    Tensor<T>& v = opt.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = static_cast<double>(grads[i][j]) * clip;
      const double mj = opt.beta1 * static_cast<double>(m[j]) + (1.0 - opt.beta1) * g;
      const double vj = opt.beta2 * static_cast<double>(v[j]) + (1.0 - opt.beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = opt.lr * (mj / c1) / (std::sqrt(vj / c2) + opt.eps);
      w[j] = static_cast<T>(static_cast<double>(w[j]) - update);
    }
  }
  return value;
}

template <typename T>
IncrementalDecoder<T>::IncrementalDecoder(const LrtModel<T>& model, const Tensor<T>& memory,
                                          std::size_t valid_memory)
    : model_(model), memory_(Var<T>::constant(memory)), valid_memory_(valid_memory) {
  NoGradGuard guard;
  for (const auto& layer : model.decoder) {
    cross_k_.push_back(project(memory_, layer.cross_attn.k));
    cross_v_.push_back(project(memory_, layer.cross_attn.v));
  }
  k_cache_.resize(model.decoder.size());
  v_cache_.resize(model.decoder.size());
}

template <typename T>
Tensor<T> IncrementalDecoder<T>::step(std::span<const std::size_t> parents,
                                      std::span<const int> tokens) {
  NoGradGuard guard;
  const std::size_t n = tokens.size();
  const std::size_t d = model_.config.d_model;
  if (n == 0) throw std::invalid_argument("IncrementalDecoder::step: no hypotheses");
  if (position_ >= model_.config.max_tgt_len) {
    throw std::invalid_argument("IncrementalDecoder::step: max_tgt_len reached");
  }
  if (position_ == 0) {
    if (!parents.empty()) throw std::invalid_argument("IncrementalDecoder: first step has no parents");
    for (std::size_t l = 0; l < k_cache_.size(); ++l) {
      k_cache_[l].assign(n, {});
      v_cache_[l].assign(n, {});
    }
  } else {
    if (parents.size() != n) throw std::invalid_argument("IncrementalDecoder: parents/tokens size");
    for (std::size_t l = 0; l < k_cache_.size(); ++l) {
      std::vector<std::vector<T>> k, v;
      k.reserve(n);
      v.reserve(n);
      for (const std::size_t p : parents) {
        if (p >= k_cache_[l].size()) throw std::out_of_range("IncrementalDecoder: bad parent index");
        k.push_back(k_cache_[l][p]);
        v.push_back(v_cache_[l][p]);
      }
      k_cache_[l] = std::move(k);
      v_cache_[l] = std::move(v);
    }
  }
  const std::size_t mem_len = memory_.shape()[0];
  const auto cross_mask = padding_mask(n, mem_len, valid_memory_);
  const AttentionMask* cp = cross_mask ? &*cross_mask : nullptr;
  const std::size_t rows = position_ + 1;

  Var<T> y = embed_tokens(model_, tokens, position_, true);
  for (std::size_t l = 0; l < model_.decoder.size(); ++l) {
    const auto& layer = model_.decoder[l];
    const auto& sa = layer.self_attn;
    const Var<T> qp = project(y, sa.q);
    const Var<T> kp = project(y, sa.k);
    const Var<T> vp = project(y, sa.v);
    std::vector<Var<T>> ctx;
    ctx.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto& kc = k_cache_[l][i];
      auto& vc = v_cache_[l][i];
      kc.insert(kc.end(), kp.value().ptr() + i * d, kp.value().ptr() + (i + 1) * d);
      vc.insert(vc.end(), vp.value().ptr() + i * d, vp.value().ptr() + (i + 1) * d);
      ctx.push_back(attend_heads(ag::slice_rows(qp, i, 1), Var<T>::constant(Tensor<T>({rows, d}, kc)),
                                 Var<T>::constant(Tensor<T>({rows, d}, vc)), nullptr, sa.heads));
    }
    y = lrmha_output(ag::concat_rows<T>(ctx), y, sa);
    const auto& ca = layer.cross_attn;
    y = lrmha_output(attend_heads(project(y, ca.q), cross_k_[l], cross_v_[l], cp, ca.heads), y, ca);
    y = lrff_forward(y, layer.ff);
  }
  ++position_;
  return log_softmax_lastdim(project(y, model_.output).value());
}

#define LRT_INSTANTIATE(T)                                                                    \
  template struct LrtModel<T>;                                                                \
  template class IncrementalDecoder<T>;                                                       \
  template Tensor<T> positional_encoding(std::size_t, std::size_t);                           \
  template Var<T> vgg_frontend(const LrtModel<T>&, const Tensor<T>&, std::size_t);            \
  template Var<T> encode(const LrtModel<T>&, const Tensor<T>&, std::size_t);                  \
  template Var<T> decode_teacher_forced(const LrtModel<T>&, const Var<T>&, std::size_t,       \
                                        std::span<const int>);                                \
  template Var<T> cross_entropy_loss(const Var<T>&, std::span<const int>);                    \
  template Batch<T> make_batch(std::span<const Tensor<T>>, std::span<const std::vector<int>>); \
  template Var<T> batch_loss(const LrtModel<T>&, const Batch<T>&);                            \
  template double train_step(LrtModel<T>&, const Batch<T>&, AdamState<T>&);

LRT_INSTANTIATE(float)
LRT_INSTANTIATE(double)

#undef LRT_INSTANTIATE

}  // namespace lrt
