#include "lrt/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "lrt/kernels.hpp"

namespace lrt {

namespace {
thread_local bool t_grad_enabled = true;
}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = saved_; }

template <typename T>
Var<T> Var<T>::constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return Var(std::move(n));
}

template <typename T>
Var<T> Var<T>::parameter(Tensor<T> value, int id) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->param_id = id;
  return Var(std::move(n));
}

namespace {

template <typename T>
using BackwardFn = std::function<std::vector<Tensor<T>>(const Node<T>&, const Tensor<T>&)>;

template <typename T>
Var<T> record(const char* op, Tensor<T> value, std::initializer_list<Var<T>> inputs,
              BackwardFn<T> rule) {
  auto n = std::make_shared<Node<T>>();
  n->op = op;
  n->value = std::move(value);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& v : inputs) needs = needs || v.requires_grad();
  }
  if (needs) {
    n->requires_grad = true;
    for (const auto& v : inputs) n->inputs.push_back(v.node());
    n->backward = [rule = std::move(rule), raw = n.get()](const Tensor<T>& g) {
      return rule(*raw, g);
    };
  }
  return Var<T>(std::move(n));
}

template <typename T>
Var<T> record_many(const char* op, Tensor<T> value, std::span<const Var<T>> inputs,
                   BackwardFn<T> rule) {
  auto n = std::make_shared<Node<T>>();
  n->op = op;
  n->value = std::move(value);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& v : inputs) needs = needs || v.requires_grad();
  }
  if (needs) {
    n->requires_grad = true;
    for (const auto& v : inputs) n->inputs.push_back(v.node());
    n->backward = [rule = std::move(rule), raw = n.get()](const Tensor<T>& g) {
      return rule(*raw, g);
    };
  }
  return Var<T>(std::move(n));
}

template <typename T>
bool wants(const Node<T>& self, std::size_t i) {
  return self.inputs[i]->requires_grad;
}

template <typename T>
const Tensor<T>& in(const Node<T>& self, std::size_t i) {
  return self.inputs[i]->value;
}

}  // namespace

template <typename T>
GradientMap<T> backward(const Var<T>& loss) {
  if (!loss.defined() || loss.value().size() != 1) {
    throw ShapeError("backward: loss must be a scalar");
  }
  GradientMap<T> out;
  if (!loss.requires_grad()) return out;

  // Iterative post-order DFS: inputs precede their consumers.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<Node<T>*, Tensor<T>> grads;
  grads.emplace(loss.node().get(), Tensor<T>::filled(loss.shape(), T{1}));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    auto g = grads.find(node);
    if (g == grads.end()) continue;
    if (node->backward) {
      std::vector<Tensor<T>> partials = node->backward(g->second);
      for (std::size_t i = 0; i < node->inputs.size(); ++i) {
        Node<T>* child = node->inputs[i].get();
        if (!child->requires_grad || i >= partials.size() || partials[i].empty()) continue;
        auto [slot, fresh] = grads.try_emplace(child, std::move(partials[i]));
        if (!fresh) slot->second = add(slot->second, partials[i]);
      }
    }
    if (node->param_id >= 0) {
      auto [slot, fresh] = out.try_emplace(node->param_id, g->second);
      if (!fresh) slot->second = add(slot->second, g->second);
    }
    grads.erase(g);
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> dense_gradients(const GradientMap<T>& grads,
                                       std::span<const Var<T>> params) {
  std::vector<Tensor<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    auto it = grads.find(p.param_id());
    out.push_back(it != grads.end() ? it->second : Tensor<T>(p.shape()));
  }
  return out;
}

double relative_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

template <typename T>
FiniteDiffResult finite_diff_check(const std::function<Var<T>()>& loss_fn,
                                   std::span<Var<T>> params, T eps) {
  if (!(eps > 0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  const Var<T> loss = loss_fn();
  const GradientMap<T> grads = backward(loss);
  std::vector<Var<T>> const_params(params.begin(), params.end());
  const std::vector<Tensor<T>> analytic =
      dense_gradients<T>(grads, std::span<const Var<T>>(const_params));

  FiniteDiffResult result;
  NoGradGuard no_grad;
  const double f0 = static_cast<double>(loss.value().item());
  const double h = static_cast<double>(eps);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<T>& value = params[p].mutable_value();
    const auto eval = [&](std::size_t i, double delta) {
      const T orig = value[i];
      value[i] = static_cast<T>(orig + delta);
      const double f = static_cast<double>(loss_fn().value().item());
      value[i] = orig;
      return f;
    };
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double up = eval(i, h);
      const double down = eval(i, -h);
      const double numeric = (up - down) / (2.0 * h);
      const double a = static_cast<double>(analytic[p][i]);
      const double raw = relative_error(a, numeric);
      const double rounding = 4.0 * std::numeric_limits<T>::epsilon() *
                              std::max({std::abs(up), std::abs(down), std::abs(f0), 1e-300}) /
                              (2.0 * h);
      const bool resolved = std::abs(a) <= rounding && std::abs(numeric) <= rounding;
      const double half = (eval(i, h / 2) - eval(i, -h / 2)) / h;
      const bool kink = !resolved && std::abs(numeric - half) >
                                         1e-3 * std::max(std::abs(numeric), std::abs(half)) +
                                             3.0 * rounding;
      const double err = resolved || kink ? 0.0 : raw;
      result.within_rounding += resolved;
      result.kinks += kink;
      result.raw_max_rel_error = std::max(result.raw_max_rel_error, raw);
      ++result.coordinates;
      if (err > result.max_rel_error || result.coordinates == 1) {
        result.max_rel_error = err;
        result.worst_param = p;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

namespace ag {

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  return record<T>("matmul", lrt::matmul(a.value(), b.value()), {a, b},
                   [](const Node<T>& self, const Tensor<T>& g) {
                     std::vector<Tensor<T>> r(2);
                     if (wants(self, 0)) r[0] = lrt::matmul(g, lrt::transpose(in(self, 1)));
                     if (wants(self, 1)) r[1] = lrt::matmul(lrt::transpose(in(self, 0)), g);
                     return r;
                   });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  return record<T>("transpose", lrt::transpose(a.value()), {a},
                   [](const Node<T>&, const Tensor<T>& g) {
                     return std::vector<Tensor<T>>{lrt::transpose(g)};
                   });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return record<T>("add", lrt::add(a.value(), b.value()), {a, b},
                   [](const Node<T>&, const Tensor<T>& g) {
                     return std::vector<Tensor<T>>{g, g};
                   });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return record<T>("mul", lrt::mul(a.value(), b.value()), {a, b},
                   [](const Node<T>& self, const Tensor<T>& g) {
                     std::vector<Tensor<T>> r(2);
                     if (wants(self, 0)) r[0] = lrt::mul(g, in(self, 1));
                     if (wants(self, 1)) r[1] = lrt::mul(g, in(self, 0));
                     return r;
                   });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return record<T>("scale", lrt::scale(a.value(), s), {a},
                   [s](const Node<T>&, const Tensor<T>& g) {
                     return std::vector<Tensor<T>>{lrt::scale(g, s)};
                   });
}

template <typename T>
Var<T> add_bias(const Var<T>& a, const Var<T>& bias) {
  return record<T>("add_bias", lrt::add_row_vector(a.value(), bias.value()), {a, bias},
                   [](const Node<T>& self, const Tensor<T>& g) {
                     std::vector<Tensor<T>> r(2);
                     if (wants(self, 0)) r[0] = g;
                     if (wants(self, 1)) r[1] = lrt::sum_rows(g).reshaped(in(self, 1).shape());
                     return r;
                   });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return record<T>("relu", lrt::relu(x.value()), {x},
                   [](const Node<T>& self, const Tensor<T>& g) {
                     Tensor<T> dx(g.shape());
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       dx[i] = self.value[i] > T{0} ? g[i] : T{0};
                     }
                     return std::vector<Tensor<T>>{std::move(dx)};
                   });
}

template <typename T>
Var<T> softmax(const Var<T>& x, const AttentionMask* mask) {
  return record<T>("softmax", lrt::softmax_lastdim(x.value(), mask), {x},
                   [](const Node<T>& self, const Tensor<T>& g) {
                     const Tensor<T>& y = self.value;
                     const std::size_t n = y.shape().back();
                     Tensor<T> dx(y.shape());
                     for (std::size_t off = 0; off < y.size(); off += n) {
                       T dot = 0;
                       for (std::size_t j = 0; j < n; ++j) dot += y[off + j] * g[off + j];
                       for (std::size_t j = 0; j < n; ++j) {
                         dx[off + j] = y[off + j] * (g[off + j] - dot);
                       }
                     }
                     return std::vector<Tensor<T>>{std::move(dx)};
                   });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& shift, T eps) {
  return record<T>(
      "layer_norm", lrt::layer_norm(x.value(), gain.value(), shift.value(), eps),
      {x, gain, shift}, [eps](const Node<T>& self, const Tensor<T>& g) {
        const Tensor<T>& xv = in(self, 0);
        const Tensor<T>& gv = in(self, 1);
        const std::size_t n = xv.shape().back();
        Tensor<T> dx(xv.shape()), dgain({n}), dshift({n});
        std::vector<T> xhat(n), dxhat(n);
        for (std::size_t off = 0; off < xv.size(); off += n) {
          T mean = 0;
          for (std::size_t j = 0; j < n; ++j) mean += xv[off + j];
          mean /= static_cast<T>(n);
          T var = 0;
          for (std::size_t j = 0; j < n; ++j) var += (xv[off + j] - mean) * (xv[off + j] - mean);
          var /= static_cast<T>(n);
          const T rstd = T{1} / std::sqrt(var + eps);
          T mean_d = 0, mean_dx = 0;
          for (std::size_t j = 0; j < n; ++j) {
            xhat[j] = (xv[off + j] - mean) * rstd;
            dxhat[j] = g[off + j] * gv[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xhat[j];
            dgain[j] += g[off + j] * xhat[j];
            dshift[j] += g[off + j];
          }
          mean_d /= static_cast<T>(n);
          mean_dx /= static_cast<T>(n);
          for (std::size_t j = 0; j < n; ++j) {
            dx[off + j] = rstd * (dxhat[j] - mean_d - xhat[j] * mean_dx);
          }
        }
        return std::vector<Tensor<T>>{std::move(dx),
                                      std::move(dgain).reshaped(in(self, 1).shape()),
                                      std::move(dshift).reshaped(in(self, 2).shape())};
      });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernels, const Var<T>& bias,
              std::size_t stride, std::size_t pad) {
  return record<T>(
      "conv2d", lrt::conv2d(x.value(), kernels.value(), bias.value(), stride, pad),
      {x, kernels, bias}, [stride, pad](const Node<T>& self, const Tensor<T>& g) {
        const Tensor<T>& xv = in(self, 0);
        const Tensor<T>& kv = in(self, 1);
        const Conv2dGeometry geo{xv.dim(0), xv.dim(1), xv.dim(2), kv.dim(2), kv.dim(3), stride, pad};
        const std::size_t co = kv.dim(0);
        const std::size_t ck = geo.channels * geo.kernel_h * geo.kernel_w;
        const std::size_t hw = geo.out_h() * geo.out_w();
        const Tensor<T> g2 = g.reshaped({co, hw});
        std::vector<Tensor<T>> r(3);
        if (wants(self, 1)) {
          const Tensor<T> cols = lrt::im2col(xv, geo);
          r[1] = lrt::matmul(g2, lrt::transpose(cols)).reshaped(kv.shape());
        }
        if (wants(self, 0)) {
          const Tensor<T> kmat = kv.reshaped({co, ck});
          r[0] = lrt::col2im(lrt::matmul(lrt::transpose(kmat), g2), geo);
        }
        if (wants(self, 2)) {
          Tensor<T> db({co});
          for (std::size_t c = 0; c < co; ++c) {
            for (std::size_t p = 0; p < hw; ++p) db[c] += g2[c * hw + p];
          }
          r[2] = std::move(db);
        }
        return r;
      });
}

template <typename T>
Var<T> max_pool2d(const Var<T>& x, std::size_t window) {
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  Tensor<T> y = lrt::max_pool2d(x.value(), window, argmax.get());
  return record<T>("max_pool2d", std::move(y), {x},
                   [argmax](const Node<T>& self, const Tensor<T>& g) {
                     Tensor<T> dx(in(self, 0).shape());
                     for (std::size_t o = 0; o < g.size(); ++o) dx[(*argmax)[o]] += g[o];
                     return std::vector<Tensor<T>>{std::move(dx)};
                   });
}

template <typename T>
Var<T> concat_lastdim(std::span<const Var<T>> parts) {
  std::vector<Tensor<T>> values;
  values.reserve(parts.size());
  for (const auto& p : parts) values.push_back(p.value());
  return record_many<T>("concat_lastdim",
                        lrt::concat_lastdim(std::span<const Tensor<T>>(values)), parts,
                        [](const Node<T>& self, const Tensor<T>& g) {
                          std::vector<Tensor<T>> r(self.inputs.size());
                          std::size_t off = 0;
                          for (std::size_t i = 0; i < self.inputs.size(); ++i) {
                            const std::size_t w = in(self, i).shape().back();
                            if (wants(self, i)) r[i] = lrt::slice_lastdim(g, off, w);
                            off += w;
                          }
                          return r;
                        });
}

template <typename T>
Var<T> slice_lastdim(const Var<T>& x, std::size_t start, std::size_t width) {
  return record<T>("slice_lastdim", lrt::slice_lastdim(x.value(), start, width), {x},
                   [start, width](const Node<T>& self, const Tensor<T>& g) {
                     const Tensor<T>& xv = in(self, 0);
                     const std::size_t n = xv.shape().back();
                     Tensor<T> dx(xv.shape());
                     const std::size_t rows = xv.size() / n;
                     for (std::size_t r = 0; r < rows; ++r) {
                       std::copy_n(g.ptr() + r * width, width, dx.ptr() + r * n + start);
                     }
                     return std::vector<Tensor<T>>{std::move(dx)};
                   });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  std::vector<Tensor<T>> values;
  values.reserve(parts.size());
  for (const auto& p : parts) values.push_back(p.value());
  return record_many<T>("concat_rows", lrt::concat_rows(std::span<const Tensor<T>>(values)),
                        parts, [](const Node<T>& self, const Tensor<T>& g) {
                          std::vector<Tensor<T>> r(self.inputs.size());
                          std::size_t row = 0;
                          for (std::size_t i = 0; i < self.inputs.size(); ++i) {
                            const std::size_t h = in(self, i).rows();
                            if (wants(self, i)) r[i] = lrt::slice_rows(g, row, h);
                            row += h;
                          }
                          return r;
                        });
}

template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t start, std::size_t count) {
  return record<T>("slice_rows", lrt::slice_rows(x.value(), start, count), {x},
                   [start](const Node<T>& self, const Tensor<T>& g) {
                     Tensor<T> dx(in(self, 0).shape());
                     std::copy(g.data().begin(), g.data().end(), dx.ptr() + start * dx.cols());
                     return std::vector<Tensor<T>>{std::move(dx)};
                   });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  return record<T>("reshape", x.value().reshaped(std::move(shape)), {x},
                   [](const Node<T>& self, const Tensor<T>& g) {
                     return std::vector<Tensor<T>>{g.reshaped(in(self, 0).shape())};
                   });
}

template <typename T>
Var<T> frames_to_rows(const Var<T>& x) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 3) throw ShapeError("frames_to_rows: expected [C x H x W]");
  const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  Tensor<T> y({h, c * w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t t = 0; t < h; ++t) {
      std::copy_n(xv.ptr() + (ch * h + t) * w, w, y.ptr() + t * c * w + ch * w);
    }
  }
  return record<T>("frames_to_rows", std::move(y), {x},
                   [c, h, w](const Node<T>&, const Tensor<T>& g) {
                     Tensor<T> dx({c, h, w});
                     for (std::size_t ch = 0; ch < c; ++ch) {
                       for (std::size_t t = 0; t < h; ++t) {
                         std::copy_n(g.ptr() + t * c * w + ch * w, w, dx.ptr() + (ch * h + t) * w);
                       }
                     }
                     return std::vector<Tensor<T>>{std::move(dx)};
                   });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  return record<T>("sum", Tensor<T>::scalar(lrt::sum(x.value())), {x},
                   [](const Node<T>& self, const Tensor<T>& g) {
                     return std::vector<Tensor<T>>{Tensor<T>::filled(in(self, 0).shape(), g[0])};
                   });
}

template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const int> ids) {
  const Tensor<T>& tv = table.value();
  const std::size_t rows = tv.rows(), d = tv.cols();
  if (ids.empty()) throw ShapeError("embedding: no ids");
  Tensor<T> y({ids.size(), d});
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= rows) {
      throw ShapeError("embedding: id " + std::to_string(ids[t]) + " outside table of " +
                       std::to_string(rows));
    }
    std::copy_n(tv.ptr() + ids[t] * d, d, y.ptr() + t * d);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return record<T>("embedding", std::move(y), {table},
                   [idv = std::move(idv), d](const Node<T>& self, const Tensor<T>& g) {
                     Tensor<T> dt(in(self, 0).shape());
                     for (std::size_t t = 0; t < idv.size(); ++t) {
                       kernels::add_inplace(dt.ptr() + idv[t] * d, g.ptr() + t * d, d);
                     }
                     return std::vector<Tensor<T>>{std::move(dt)};
                   });
}

template <typename T>
Var<T> nll_sum(const Var<T>& logits, std::span<const int> targets, int ignore_id) {
  const Tensor<T>& lv = logits.value();
  const std::size_t rows = lv.rows(), v = lv.cols();
  if (targets.size() != rows) {
    throw ShapeError("nll_sum: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(rows) + " rows");
  }
  const Tensor<T> lsm = lrt::log_softmax_lastdim(lv);
  T total = 0;
  for (std::size_t t = 0; t < rows; ++t) {
    if (targets[t] == ignore_id) continue;
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= v) {
      throw ShapeError("nll_sum: target id out of range");
    }
    total -= lsm[t * v + targets[t]];
  }
  std::vector<int> tv(targets.begin(), targets.end());
  return record<T>("nll_sum", Tensor<T>::scalar(total), {logits},
                   [tv = std::move(tv), ignore_id, lsm, v](const Node<T>&, const Tensor<T>& g) {
                     Tensor<T> dl(lsm.shape());
                     for (std::size_t t = 0; t < tv.size(); ++t) {
                       if (tv[t] == ignore_id) continue;
                       for (std::size_t j = 0; j < v; ++j) {
                         dl[t * v + j] = g[0] * std::exp(lsm[t * v + j]);
                       }
                       dl[t * v + tv[t]] -= g[0];
                     }
                     return std::vector<Tensor<T>>{std::move(dl)};
                   });
}

}  // namespace ag

#define LRT_INSTANTIATE(T)                                                                    \
  template class Var<T>;                                                                      \
  template GradientMap<T> backward(const Var<T>&);                                            \
  template std::vector<Tensor<T>> dense_gradients(const GradientMap<T>&,                      \
                                                  std::span<const Var<T>>);                   \
  template FiniteDiffResult finite_diff_check(const std::function<Var<T>()>&,                 \
                                              std::span<Var<T>>, T);                          \
  template Var<T> ag::matmul(const Var<T>&, const Var<T>&);                                   \
  template Var<T> ag::transpose(const Var<T>&);                                               \
  template Var<T> ag::add(const Var<T>&, const Var<T>&);                                      \
  template Var<T> ag::mul(const Var<T>&, const Var<T>&);                                      \
  template Var<T> ag::scale(const Var<T>&, T);                                                \
  template Var<T> ag::add_bias(const Var<T>&, const Var<T>&);                                 \
  template Var<T> ag::relu(const Var<T>&);                                                    \
  template Var<T> ag::softmax(const Var<T>&, const AttentionMask*);                           \
  template Var<T> ag::layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);             \
  template Var<T> ag::conv2d(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t,        \
                             std::size_t);                                                    \
  template Var<T> ag::max_pool2d(const Var<T>&, std::size_t);                                 \
  template Var<T> ag::concat_lastdim(std::span<const Var<T>>);                                \
  template Var<T> ag::slice_lastdim(const Var<T>&, std::size_t, std::size_t);                 \
  template Var<T> ag::concat_rows(std::span<const Var<T>>);                                   \
  template Var<T> ag::slice_rows(const Var<T>&, std::size_t, std::size_t);                    \
  template Var<T> ag::reshape(const Var<T>&, Shape);                                          \
  template Var<T> ag::frames_to_rows(const Var<T>&);                                          \
  template Var<T> ag::sum(const Var<T>&);                                                     \
  template Var<T> ag::embedding(const Var<T>&, std::span<const int>);                         \
  template Var<T> ag::nll_sum(const Var<T>&, std::span<const int>, int);

LRT_INSTANTIATE(float)
LRT_INSTANTIATE(double)

#undef LRT_INSTANTIATE

}  // namespace lrt
