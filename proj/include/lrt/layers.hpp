#pragma once
// Factorized building blocks: the linear encoder-decoder (LED) unit, low-rank
// multi-head attention (LRMHA) and low-rank feed-forward (LRFF), plus the
// full-rank linear layer they replace.

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "lrt/autograd.hpp"
#include "lrt/random.hpp"
#include "lrt/tensor.hpp"

namespace lrt {

inline constexpr double kLayerNormEps = 1e-5;

/// Owns the trainable leaves of a model in registration order.
template <typename T>
class ParameterSet {
 public:
  Var<T> add(std::string name, Tensor<T> value);

  std::span<const Var<T>> vars() const { return vars_; }
  std::span<Var<T>> vars() { return vars_; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return vars_.size(); }
  /// Total scalar count over every registered tensor.
  std::size_t numel() const;
  /// nullptr when absent.
  Var<T>* find(const std::string& name);

 private:
  std::vector<Var<T>> vars_;
  std::vector<std::string> names_;
};

/// Shape of one linear map: in x out, rank 0 meaning an unfactorized weight.
struct LinearShape {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t rank = 0;
  bool factorized() const { return rank != 0; }
};

/// Parameters of a linear map: m*n (+n) full, r*(m+n) (+n) factorized.
std::uint64_t layer_param_count(const LinearShape& s, bool with_bias = true);
/// Multiply-adds for `rows` input rows: rows*m*n full, rows*r*(m+n) factorized.
std::uint64_t layer_flop_count(const LinearShape& s, std::size_t rows);

template <typename T>
struct FullLinear {
  Var<T> weight;  // m x n
  Var<T> bias;    // n
  LinearShape shape() const { return {weight.shape()[0], weight.shape()[1], 0}; }
};

/// W ~= E * D with E: m x r and D: r x n, plus a bias of length n.
template <typename T>
struct LedLayer {
  Var<T> enc;   // E, m x r
  Var<T> dec;   // D, r x n
  Var<T> bias;  // n
  std::size_t m() const { return enc.shape()[0]; }
  std::size_t r() const { return enc.shape()[1]; }
  std::size_t n() const { return dec.shape()[1]; }
  LinearShape shape() const { return {m(), n(), r()}; }
};

template <typename T>
using Projection = std::variant<FullLinear<T>, LedLayer<T>>;

template <typename T>
LinearShape projection_shape(const Projection<T>& p);

/// Uniform(+-sqrt(6 / (rows + cols))) on the tensor's own shape.
template <typename T>
Tensor<T> glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng);

template <typename T>
FullLinear<T> make_full_linear(ParameterSet<T>& ps, const std::string& name,
                               std::size_t m, std::size_t n, Rng& rng);
template <typename T>
LedLayer<T> make_led(ParameterSet<T>& ps, const std::string& name, std::size_t m,
                     std::size_t n, std::size_t r, Rng& rng);
/// Full linear for rank 0, LED otherwise.
template <typename T>
Projection<T> make_projection(ParameterSet<T>& ps, const std::string& name,
                              const LinearShape& shape, Rng& rng);

/// (x * E) * D + bias; the m x n product is never formed.
template <typename T>
Var<T> led_forward(const Var<T>& x, const LedLayer<T>& layer);
template <typename T>
Var<T> full_forward(const Var<T>& x, const FullLinear<T>& layer);
template <typename T>
Var<T> project(const Var<T>& x, const Projection<T>& p);

/// Rank-r truncated SVD factors E = U_r S_r, D = V_r^T, zero bias. The result
/// is the Frobenius-optimal rank-r approximation of W. Leaves are constants.
template <typename T>
LedLayer<T> led_from_full(const Tensor<T>& w, std::size_t r);

/// Softmax(Q K^T / sqrt(d_k)) V for one head.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 const AttentionMask* mask);

template <typename T>
struct LrmhaParams {
  Projection<T> q, k, v, o;
  Var<T> ln_gain, ln_shift;
  std::size_t heads = 1;
  std::size_t d_model() const { return projection_shape(q).in; }
  std::size_t d_head() const { return d_model() / heads; }
};

template <typename T>
struct LrffParams {
  Projection<T> ff1, ff2;  // d_model -> d_inner -> d_model
  Var<T> ln_gain, ln_shift;
};

template <typename T>
LrmhaParams<T> make_lrmha(ParameterSet<T>& ps, const std::string& prefix,
                          std::size_t d_model, std::size_t heads, std::size_t rank, Rng& rng);
template <typename T>
LrffParams<T> make_lrff(ParameterSet<T>& ps, const std::string& prefix, std::size_t d_model,
                        std::size_t d_inner, std::size_t rank, Rng& rng);

/// Splits already-projected queries/keys/values into heads, attends per head
/// and concatenates: Concat(h_1..h_H).
template <typename T>
Var<T> attend_heads(const Var<T>& qp, const Var<T>& kp, const Var<T>& vp,
                    const AttentionMask* mask, std::size_t heads);

/// LayerNorm(context * (E^O D^O) + residual).
template <typename T>
Var<T> lrmha_output(const Var<T>& context, const Var<T>& residual, const LrmhaParams<T>& p);

/// Full low-rank multi-head attention block with query residual and post-norm.
template <typename T>
Var<T> lrmha_forward(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                     const AttentionMask* mask, const LrmhaParams<T>& p);

/// LayerNorm(max(0, x E1 D1 + b1) E2 D2 + b2 + x).
template <typename T>
Var<T> lrff_forward(const Var<T>& x, const LrffParams<T>& p);

}  // namespace lrt
