#include "ppcnn/ops.hpp"

namespace ppcnn::ops {

namespace k = ppcnn::kernels;

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  Tensor<T> out = k::linear(x.value(), w.value(), b.value());
  return x.tape().record(std::move(out), {&x, &w, &b},
                         [x, w, b](const Tensor<T>& g, const Tensor<T>&) {
                           auto grads = k::linear_backward(x.value(), w.value(), g,
                                                           x.requires_grad());
                           if (x.requires_grad()) x.node()->accumulate(grads.dx);
                           w.node()->accumulate(grads.dw);
                           b.node()->accumulate(grads.db);
                         });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kern, const Var<T>& b) {
  Tensor<T> out = k::conv2d(x.value(), kern.value(), b.value());
  return x.tape().record(std::move(out), {&x, &kern, &b},
                         [x, kern, b](const Tensor<T>& g, const Tensor<T>&) {
                           auto grads = k::conv2d_backward(x.value(), kern.value(), g,
                                                           x.requires_grad());
                           if (x.requires_grad()) x.node()->accumulate(grads.dx);
                           kern.node()->accumulate(grads.dk);
                           b.node()->accumulate(grads.db);
                         });
}

template <typename T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                 Tensor<T>& running_mean, Tensor<T>& running_var) {
  Tape<T>& tape = x.tape();
  const auto mode = tape.training() ? k::NormMode::train : k::NormMode::eval;
  auto res = k::batchnorm(x.value(), gamma.value(), beta.value(), running_mean, running_var, mode,
                          tape.options().bn_momentum, tape.options().bn_epsilon);
  auto saved = std::make_shared<k::BatchNormSaved<T>>(std::move(res.saved));
  return tape.record(std::move(res.y), {&x, &gamma, &beta},
                     [x, gamma, beta, saved](const Tensor<T>& g, const Tensor<T>&) {
                       auto grads = k::batchnorm_backward(*saved, gamma.value(), g);
                       x.node()->accumulate(grads.dx);
                       gamma.node()->accumulate(grads.dgamma);
                       beta.node()->accumulate(grads.dbeta);
                     });
}

template <typename T>
Var<T> activation(Activation kind, const Var<T>& x) {
  if (kind == Activation::identity) return x;
  return x.tape().record(k::activation(kind, x.value()), {&x},
                         [x, kind](const Tensor<T>& g, const Tensor<T>& y) {
                           x.node()->accumulate(k::activation_backward(kind, x.value(), y, g));
                         });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
  return x.tape().record(k::softmax_rows(x.value()), {&x},
                         [x](const Tensor<T>& g, const Tensor<T>& y) {
                           x.node()->accumulate(k::softmax_rows_backward(y, g));
                         });
}

template <typename T>
Var<T> segmented_max(const Var<T>& x, std::shared_ptr<const std::vector<std::int64_t>> ids,
                     std::size_t segments) {
  auto res = k::segmented_max(x.value(), std::span<const std::int64_t>(*ids), segments);
  auto argmax = std::make_shared<std::vector<std::int64_t>>(std::move(res.argmax));
  const std::size_t rows = x.value().dim(0);
  return x.tape().record(std::move(res.values), {&x},
                         [x, argmax, rows](const Tensor<T>& g, const Tensor<T>&) {
                           x.node()->accumulate(k::segmented_max_backward(*argmax, g, rows));
                         });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::vector<int> labels) {
  auto res = k::cross_entropy(logits.value(), std::span<const int>(labels));
  auto probs = std::make_shared<Tensor<T>>(std::move(res.probs));
  auto lab = std::make_shared<std::vector<int>>(std::move(labels));
  return logits.tape().record(
      Tensor<T>({1}, std::vector<T>{res.loss}), {&logits},
      [logits, probs, lab](const Tensor<T>& g, const Tensor<T>&) {
        logits.node()->accumulate(
            k::cross_entropy_backward(*probs, std::span<const int>(*lab), g[0]));
      });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = a.value();
  out += b.value();
  return a.tape().record(std::move(out), {&a, &b}, [a, b](const Tensor<T>& g, const Tensor<T>&) {
    a.node()->accumulate(g);
    b.node()->accumulate(g);
  });
}

template <typename T>
Var<T> add_n(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw DimensionError("add_n: no inputs");
  Tensor<T> out = xs.front().value();
  for (std::size_t i = 1; i < xs.size(); ++i) out += xs[i].value();
  return xs.front().tape().record(std::move(out), xs,
                                  [xs](const Tensor<T>& g, const Tensor<T>&) {
                                    for (const auto& x : xs) x.node()->accumulate(g);
                                  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v *= factor;
  return x.tape().record(std::move(out), {&x}, [x, factor](const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T> dx = g;
    for (auto& v : dx.storage()) v *= factor;
    x.node()->accumulate(dx);
  });
}

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  T total = 0;
  for (T v : x.value().storage()) total += v;
  return x.tape().record(Tensor<T>({1}, std::vector<T>{total}), {&x},
                         [x](const Tensor<T>& g, const Tensor<T>&) {
                           x.node()->accumulate(Tensor<T>(x.value().shape(), g[0]));
                         });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t n = xs.front().value().dim(0);
  std::size_t total = 0;
  for (const auto& x : xs) {
    if (x.value().rank() != 2 || x.value().dim(0) != n) {
      throw DimensionError("concat_cols: row mismatch, " + shape_str(x.value().shape()));
    }
    total += x.value().dim(1);
  }
  Tensor<T> out({n, total});
  std::size_t off = 0;
  for (const auto& x : xs) {
    const std::size_t c = x.value().dim(1);
    for (std::size_t r = 0; r < n; ++r) {
      std::copy_n(x.value().data() + r * c, c, out.data() + r * total + off);
    }
    off += c;
  }
  return xs.front().tape().record(std::move(out), xs,
                                  [xs, n, total](const Tensor<T>& g, const Tensor<T>&) {
                                    std::size_t off = 0;
                                    for (const auto& x : xs) {
                                      const std::size_t c = x.value().dim(1);
                                      if (x.requires_grad()) {
                                        Tensor<T> dx({n, c});
                                        for (std::size_t r = 0; r < n; ++r) {
                                          std::copy_n(g.data() + r * total + off, c,
                                                      dx.data() + r * c);
                                        }
                                        x.node()->accumulate(dx);
                                      }
                                      off += c;
                                    }
                                  });
}

template <typename T>
Var<T> broadcast_rows(const Var<T>& x, std::size_t rows) {
  const std::size_t c = x.value().size();
  Tensor<T> out({rows, c});
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.value().data(), c, out.data() + r * c);
  return x.tape().record(std::move(out), {&x}, [x, rows, c](const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T> dx(x.value().shape());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) dx[j] += g[r * c + j];
    x.node()->accumulate(dx);
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& x, std::shared_ptr<const std::vector<std::size_t>> index) {
  const std::size_t n = x.value().dim(0), c = x.value().dim(1);
  Tensor<T> out({index->size(), c});
  for (std::size_t r = 0; r < index->size(); ++r) {
    const std::size_t src = (*index)[r];
    if (src >= n) throw IndexError("gather_rows: row " + std::to_string(src) + " of " +
                                   std::to_string(n));
    std::copy_n(x.value().data() + src * c, c, out.data() + r * c);
  }
  return x.tape().record(std::move(out), {&x}, [x, index, c](const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& dx = x.node()->grad_buffer();
    for (std::size_t r = 0; r < index->size(); ++r) {
      T* d = dx.data() + (*index)[r] * c;
      const T* gr = g.data() + r * c;
      for (std::size_t j = 0; j < c; ++j) d[j] += gr[j];
    }
  });
}

template <typename T>
Var<T> sparse_rows(const Var<T>& x, SparsePattern pattern, std::size_t rows) {
  const std::size_t n = x.value().dim(0), c = x.value().dim(1);
  Tensor<T> out({rows, c});
  for (const auto& e : *pattern) {
    if (e.in >= n || e.out >= rows) throw IndexError("sparse_rows: entry out of range");
    const T w = static_cast<T>(e.weight);
    const T* src = x.value().data() + e.in * c;
    T* dst = out.data() + e.out * c;
    for (std::size_t j = 0; j < c; ++j) dst[j] += w * src[j];
  }
  return x.tape().record(std::move(out), {&x}, [x, pattern, c](const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& dx = x.node()->grad_buffer();
    for (const auto& e : *pattern) {
      const T w = static_cast<T>(e.weight);
      const T* src = g.data() + e.out * c;
      T* dst = dx.data() + e.in * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += w * src[j];
    }
  });
}

namespace {

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return out;
}

}  // namespace

template <typename T>
Var<T> transpose(const Var<T>& x) {
  if (x.value().rank() != 2) throw DimensionError("transpose expects a matrix");
  return x.tape().record(transpose2d(x.value()), {&x}, [x](const Tensor<T>& g, const Tensor<T>&) {
    x.node()->accumulate(transpose2d(g));
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {&x}, [x](const Tensor<T>& g, const Tensor<T>&) {
    x.node()->accumulate(g.reshaped(x.value().shape()));
  });
}

template <typename T>
Var<T> channel_scale(const Var<T>& x, const Var<T>& s) {
  const auto& xv = x.value();
  if (xv.rank() != 3 || s.value().size() != xv.dim(0)) {
    throw DimensionError("channel_scale: map " + shape_str(xv.shape()) + ", scales " +
                         shape_str(s.value().shape()));
  }
  const std::size_t c = xv.dim(0), hw = xv.dim(1) * xv.dim(2);
  Tensor<T> out(xv.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T f = s.value()[ch];
    for (std::size_t p = 0; p < hw; ++p) out[ch * hw + p] = xv[ch * hw + p] * f;
  }
  return x.tape().record(std::move(out), {&x, &s}, [x, s, c, hw](const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T> dx(x.value().shape());
    Tensor<T> ds(s.value().shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T f = s.value()[ch];
      T acc = 0;
      for (std::size_t p = 0; p < hw; ++p) {
        dx[ch * hw + p] = g[ch * hw + p] * f;
        acc += g[ch * hw + p] * x.value()[ch * hw + p];
      }
      ds[ch] = acc;
    }
    x.node()->accumulate(dx);
    s.node()->accumulate(ds);
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const auto& xv = x.value();
  if (xv.rank() != 3) throw DimensionError("global_avg_pool expects C x H x W");
  const std::size_t c = xv.dim(0), hw = xv.dim(1) * xv.dim(2);
  Tensor<T> out({1, c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    T acc = 0;
    for (std::size_t p = 0; p < hw; ++p) acc += xv[ch * hw + p];
    out[ch] = acc / static_cast<T>(hw);
  }
  return x.tape().record(std::move(out), {&x}, [x, c, hw](const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T> dx(x.value().shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T v = g[ch] / static_cast<T>(hw);
      std::fill_n(dx.data() + ch * hw, hw, v);
    }
    x.node()->accumulate(dx);
  });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& weights, const std::vector<Var<T>>& feats) {
  const auto& wv = weights.value();
  if (wv.rank() != 2 || wv.dim(1) != feats.size()) {
    throw DimensionError("weighted_sum: weights " + shape_str(wv.shape()) + " for " +
                         std::to_string(feats.size()) + " features");
  }
  const std::size_t n = wv.dim(0), nb = feats.size();
  const std::size_t c = feats.front().value().dim(1);
  for (const auto& f : feats) {
    if (f.value().shape() != Shape{n, c}) {
      throw DimensionError("weighted_sum: feature " + shape_str(f.value().shape()));
    }
  }
  Tensor<T> out({n, c});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t b = 0; b < nb; ++b) {
      const T w = wv[r * nb + b];
      const T* src = feats[b].value().data() + r * c;
      T* dst = out.data() + r * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += w * src[j];
    }
  std::vector<Var<T>> inputs = feats;
  inputs.push_back(weights);
  return weights.tape().record(std::move(out), inputs,
                               [weights, feats, n, nb, c](const Tensor<T>& g, const Tensor<T>&) {
                                 Tensor<T> dw({n, nb});
                                 for (std::size_t b = 0; b < nb; ++b) {
                                   const auto& fv = feats[b].value();
                                   Tensor<T> df({n, c});
                                   for (std::size_t r = 0; r < n; ++r) {
                                     const T w = weights.value()[r * nb + b];
                                     T acc = 0;
                                     for (std::size_t j = 0; j < c; ++j) {
                                       acc += g[r * c + j] * fv[r * c + j];
                                       df[r * c + j] = w * g[r * c + j];
                                     }
                                     dw[r * nb + b] = acc;
                                   }
                                   feats[b].node()->accumulate(df);
                                 }
                                 weights.node()->accumulate(dw);
                               });
}

#define PPCNN_INSTANTIATE(T)                                                                     \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                           \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&);                           \
  template Var<T> batchnorm(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>&,             \
                            Tensor<T>&);                                                         \
  template Var<T> activation(Activation, const Var<T>&);                                         \
  template Var<T> softmax_rows(const Var<T>&);                                                   \
  template Var<T> segmented_max(const Var<T>&,                                                   \
                                std::shared_ptr<const std::vector<std::int64_t>>, std::size_t);  \
  template Var<T> cross_entropy(const Var<T>&, std::vector<int>);                                \
  template Var<T> add(const Var<T>&, const Var<T>&);                                             \
  template Var<T> add_n(const std::vector<Var<T>>&);                                             \
  template Var<T> scale(const Var<T>&, T);                                                       \
  template Var<T> sum_all(const Var<T>&);                                                        \
  template Var<T> concat_cols(const std::vector<Var<T>>&);                                       \
  template Var<T> broadcast_rows(const Var<T>&, std::size_t);                                    \
  template Var<T> gather_rows(const Var<T>&, std::shared_ptr<const std::vector<std::size_t>>);   \
  template Var<T> sparse_rows(const Var<T>&, SparsePattern, std::size_t);                        \
  template Var<T> transpose(const Var<T>&);                                                      \
  template Var<T> reshape(const Var<T>&, Shape);                                                 \
  template Var<T> channel_scale(const Var<T>&, const Var<T>&);                                   \
  template Var<T> global_avg_pool(const Var<T>&);                                                \
  template Var<T> weighted_sum(const Var<T>&, const std::vector<Var<T>>&);

PPCNN_INSTANTIATE(float)
PPCNN_INSTANTIATE(double)

}  // namespace ppcnn::ops
