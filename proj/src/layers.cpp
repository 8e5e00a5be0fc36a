#include "lrt/layers.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

#include "lrt/tensor_ops.hpp"

namespace lrt {

template <typename T>
Var<T> ParameterSet<T>::add(std::string name, Tensor<T> value) {
  for (const auto& n : names_) {
    if (n == name) throw std::invalid_argument("duplicate parameter name: " + name);
  }
  vars_.push_back(Var<T>::parameter(std::move(value), static_cast<int>(vars_.size())));
  names_.push_back(std::move(name));
  return vars_.back();
}

template <typename T>
std::size_t ParameterSet<T>::numel() const {
  std::size_t n = 0;
  for (const auto& v : vars_) n += v.value().size();
  return n;
}

template <typename T>
Var<T>* ParameterSet<T>::find(const std::string& name) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return &vars_[i];
  }
  return nullptr;
}

std::uint64_t layer_param_count(const LinearShape& s, bool with_bias) {
  const std::uint64_t weights = s.factorized()
                                    ? static_cast<std::uint64_t>(s.rank) * (s.in + s.out)
                                    : static_cast<std::uint64_t>(s.in) * s.out;
  return weights + (with_bias ? s.out : 0);
}

std::uint64_t layer_flop_count(const LinearShape& s, std::size_t rows) {
  return static_cast<std::uint64_t>(rows) * layer_param_count(s, false);
}

template <typename T>
LinearShape projection_shape(const Projection<T>& p) {
  return std::visit([](const auto& layer) { return layer.shape(); }, p);
}

template <typename T>
Tensor<T> glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor<T> t({rows, cols});
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-limit, limit));
  return t;
}

template <typename T>
FullLinear<T> make_full_linear(ParameterSet<T>& ps, const std::string& name,
                               std::size_t m, std::size_t n, Rng& rng) {
  FullLinear<T> l;
  l.weight = ps.add(name + ".W", glorot_uniform<T>(m, n, rng));
  l.bias = ps.add(name + ".bias", Tensor<T>({n}));
  return l;
}

template <typename T>
LedLayer<T> make_led(ParameterSet<T>& ps, const std::string& name, std::size_t m,
                     std::size_t n, std::size_t r, Rng& rng) {
  if (r < 1 || r > std::min(m, n)) {
    throw std::invalid_argument("LED rank " + std::to_string(r) + " outside [1, " +
                                std::to_string(std::min(m, n)) + "] for " + name);
  }
  LedLayer<T> l;
  l.enc = ps.add(name + ".E", glorot_uniform<T>(m, r, rng));
  l.dec = ps.add(name + ".D", glorot_uniform<T>(r, n, rng));
  l.bias = ps.add(name + ".bias", Tensor<T>({n}));
  return l;
}

template <typename T>
Projection<T> make_projection(ParameterSet<T>& ps, const std::string& name,
                              const LinearShape& shape, Rng& rng) {
  if (shape.factorized()) return make_led(ps, name, shape.in, shape.out, shape.rank, rng);
  return make_full_linear(ps, name, shape.in, shape.out, rng);
}

template <typename T>
Var<T> led_forward(const Var<T>& x, const LedLayer<T>& layer) {
  if (x.shape().back() != layer.m()) {
    throw ShapeError("led_forward: input width " + std::to_string(x.shape().back()) +
                     " vs m=" + std::to_string(layer.m()));
  }
  return ag::add_bias(ag::matmul(ag::matmul(x, layer.enc), layer.dec), layer.bias);
}

template <typename T>
Var<T> full_forward(const Var<T>& x, const FullLinear<T>& layer) {
  return ag::add_bias(ag::matmul(x, layer.weight), layer.bias);
}

template <typename T>
Var<T> project(const Var<T>& x, const Projection<T>& p) {
  if (const auto* led = std::get_if<LedLayer<T>>(&p)) return led_forward(x, *led);
  return full_forward(x, std::get<FullLinear<T>>(p));
}

template <typename T>
LedLayer<T> led_from_full(const Tensor<T>& w, std::size_t r) {
  const std::size_t m = w.rows(), n = w.cols();
  if (r < 1 || r > std::min(m, n)) {
    throw std::invalid_argument("led_from_full: rank " + std::to_string(r) +
                                " outside [1, " + std::to_string(std::min(m, n)) + "]");
  }
  Eigen::MatrixXd mat(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) mat(i, j) = static_cast<double>(w.at(i, j));
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(mat, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& u = svd.matrixU();
  const auto& v = svd.matrixV();
  const auto& s = svd.singularValues();
  Tensor<T> e({m, r}), d({r, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < r; ++k) e.at(i, k) = static_cast<T>(u(i, k) * s(k));
  }
  for (std::size_t k = 0; k < r; ++k) {
    for (std::size_t j = 0; j < n; ++j) d.at(k, j) = static_cast<T>(v(j, k));
  }
  LedLayer<T> l;
  l.enc = Var<T>::constant(std::move(e));
  l.dec = Var<T>::constant(std::move(d));
  l.bias = Var<T>::constant(Tensor<T>({n}));
  return l;
}

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 const AttentionMask* mask) {
  const auto& qs = q.shape();
  const auto& ks = k.shape();
  const auto& vs = v.shape();
  if (qs.size() != 2 || ks.size() != 2 || vs.size() != 2 || qs[1] != ks[1] || ks[0] != vs[0]) {
    throw ShapeError("attention: Q " + shape_str(qs) + ", K " + shape_str(ks) + ", V " +
                     shape_str(vs) + " are incompatible");
  }
  const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(qs[1])));
  const Var<T> logits = ag::scale(ag::matmul(q, ag::transpose(k)), inv);
  return ag::matmul(ag::softmax(logits, mask), v);
}

template <typename T>
LrmhaParams<T> make_lrmha(ParameterSet<T>& ps, const std::string& prefix,
                          std::size_t d_model, std::size_t heads, std::size_t rank, Rng& rng) {
  if (heads == 0 || d_model % heads != 0) {
    throw std::invalid_argument("d_model " + std::to_string(d_model) +
                                " not divisible by heads " + std::to_string(heads));
  }
  const LinearShape s{d_model, d_model, rank};
  LrmhaParams<T> p;
  p.q = make_projection(ps, prefix + ".q", s, rng);
  p.k = make_projection(ps, prefix + ".k", s, rng);
  p.v = make_projection(ps, prefix + ".v", s, rng);
  p.o = make_projection(ps, prefix + ".o", s, rng);
  p.ln_gain = ps.add(prefix + ".ln.gain", Tensor<T>::filled({d_model}, T{1}));
  p.ln_shift = ps.add(prefix + ".ln.shift", Tensor<T>({d_model}));
  p.heads = heads;
  return p;
}

template <typename T>
LrffParams<T> make_lrff(ParameterSet<T>& ps, const std::string& prefix, std::size_t d_model,
                        std::size_t d_inner, std::size_t rank, Rng& rng) {
  LrffParams<T> p;
  p.ff1 = make_projection(ps, prefix + ".ff1", LinearShape{d_model, d_inner, rank}, rng);
  p.ff2 = make_projection(ps, prefix + ".ff2", LinearShape{d_inner, d_model, rank}, rng);
  p.ln_gain = ps.add(prefix + ".ln.gain", Tensor<T>::filled({d_model}, T{1}));
  p.ln_shift = ps.add(prefix + ".ln.shift", Tensor<T>({d_model}));
  return p;
}

template <typename T>
Var<T> attend_heads(const Var<T>& qp, const Var<T>& kp, const Var<T>& vp,
                    const AttentionMask* mask, std::size_t heads) {
  const std::size_t d = qp.shape().back();
  if (heads == 0 || d % heads != 0 || kp.shape().back() != d || vp.shape().back() != d) {
    throw ShapeError("attend_heads: widths " + shape_str(qp.shape()) + ", " +
                     shape_str(kp.shape()) + ", " + shape_str(vp.shape()) + " with " +
                     std::to_string(heads) + " heads");
  }
  if (heads == 1) return attention(qp, kp, vp, mask);
  const std::size_t dh = d / heads;
  std::vector<Var<T>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    outs.push_back(attention(ag::slice_lastdim(qp, h * dh, dh), ag::slice_lastdim(kp, h * dh, dh),
                             ag::slice_lastdim(vp, h * dh, dh), mask));
  }
  return ag::concat_lastdim<T>(outs);
}

template <typename T>
Var<T> lrmha_output(const Var<T>& context, const Var<T>& residual, const LrmhaParams<T>& p) {
  return ag::layer_norm(ag::add(project(context, p.o), residual), p.ln_gain, p.ln_shift,
                        static_cast<T>(kLayerNormEps));
}

template <typename T>
Var<T> lrmha_forward(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                     const AttentionMask* mask, const LrmhaParams<T>& p) {
  const std::size_t d = p.d_model();
  if (q.shape().size() != 2 || q.shape()[1] != d || k.shape().size() != 2 ||
      k.shape()[1] != d || v.shape().size() != 2 || v.shape()[1] != d) {
    throw ShapeError("lrmha_forward: inputs must be [L x " + std::to_string(d) + "]");
  }
  const Var<T> ctx = attend_heads(project(q, p.q), project(k, p.k), project(v, p.v), mask, p.heads);
  return lrmha_output(ctx, q, p);
}

template <typename T>
Var<T> lrff_forward(const Var<T>& x, const LrffParams<T>& p) {
  const std::size_t d = projection_shape(p.ff1).in;
  if (x.shape().back() != d) {
    throw ShapeError("lrff_forward: input width " + std::to_string(x.shape().back()) +
                     " vs d_model " + std::to_string(d));
  }
  const Var<T> inner = ag::relu(project(x, p.ff1));
  return ag::layer_norm(ag::add(project(inner, p.ff2), x), p.ln_gain, p.ln_shift,
                        static_cast<T>(kLayerNormEps));
}

#define LRT_INSTANTIATE(T)                                                                     \
  template class ParameterSet<T>;                                                              \
  template LinearShape projection_shape(const Projection<T>&);                                 \
  template Tensor<T> glorot_uniform(std::size_t, std::size_t, Rng&);                           \
  template FullLinear<T> make_full_linear(ParameterSet<T>&, const std::string&, std::size_t,   \
                                          std::size_t, Rng&);                                  \
  template LedLayer<T> make_led(ParameterSet<T>&, const std::string&, std::size_t,             \
                                std::size_t, std::size_t, Rng&);                               \
  template Projection<T> make_projection(ParameterSet<T>&, const std::string&,                 \
                                         const LinearShape&, Rng&);                            \
  template Var<T> led_forward(const Var<T>&, const LedLayer<T>&);                              \
  template Var<T> full_forward(const Var<T>&, const FullLinear<T>&);                           \
  template Var<T> project(const Var<T>&, const Projection<T>&);                                \
  template LedLayer<T> led_from_full(const Tensor<T>&, std::size_t);                           \
  template Var<T> attention(const Var<T>&, const Var<T>&, const Var<T>&,                       \
                            const AttentionMask*);                                             \
  template LrmhaParams<T> make_lrmha(ParameterSet<T>&, const std::string&, std::size_t,        \
                                     std::size_t, std::size_t, Rng&);                          \
  template LrffParams<T> make_lrff(ParameterSet<T>&, const std::string&, std::size_t,          \
                                   std::size_t, std::size_t, Rng&);                            \
  template Var<T> attend_heads(const Var<T>&, const Var<T>&, const Var<T>&,                    \
                               const AttentionMask*, std::size_t);                             \
  template Var<T> lrmha_output(const Var<T>&, const Var<T>&, const LrmhaParams<T>&);           \
  template Var<T> lrmha_forward(const Var<T>&, const Var<T>&, const Var<T>&,                   \
                                const AttentionMask*, const LrmhaParams<T>&);                  \
  template Var<T> lrff_forward(const Var<T>&, const LrffParams<T>&);

LRT_INSTANTIATE(float)
LRT_INSTANTIATE(double)

#undef LRT_INSTANTIATE

}  // namespace lrt
