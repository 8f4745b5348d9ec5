#include "ppcnn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ppcnn::kernels {

namespace {

void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.size() != rank) {
    throw DimensionError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " +
                         shape_str(shape));
  }
}

}  // namespace

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_rank(x.shape(), 2, "linear input");
  require_rank(w.shape(), 2, "linear weight");
  const std::size_t n = x.dim(0), cin = x.dim(1), cout = w.dim(1);
  if (w.dim(0) != cin || b.size() != cout) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + ", weight " +
                         shape_str(w.shape()) + ", bias " + shape_str(b.shape()));
  }
  Tensor<T> out({n, cout});
  for (std::size_t r = 0; r < n; ++r) {
    T* o = out.data() + r * cout;
    std::copy(b.data(), b.data() + cout, o);
    const T* xr = x.data() + r * cin;
    for (std::size_t i = 0; i < cin; ++i) {
      const T xv = xr[i];
      const T* wr = w.data() + i * cout;
      for (std::size_t j = 0; j < cout; ++j) o[j] += xv * wr[j];
    }
  }
  return out;
}

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                               bool need_dx) {
  const std::size_t n = x.dim(0), cin = x.dim(1), cout = w.dim(1);
  LinearGrads<T> g{Tensor<T>(), Tensor<T>({cin, cout}), Tensor<T>({cout})};
  if (need_dx) g.dx = Tensor<T>({n, cin});
  for (std::size_t r = 0; r < n; ++r) {
    const T* dyr = dy.data() + r * cout;
    const T* xr = x.data() + r * cin;
    for (std::size_t j = 0; j < cout; ++j) g.db[j] += dyr[j];
    for (std::size_t i = 0; i < cin; ++i) {
      const T* wr = w.data() + i * cout;
      T* dwr = g.dw.data() + i * cout;
      const T xv = xr[i];
      T acc = 0;
      for (std::size_t j = 0; j < cout; ++j) {
        acc += dyr[j] * wr[j];
        dwr[j] += xv * dyr[j];
      }
      if (need_dx) g.dx[r * cin + i] = acc;
    }
  }
  return g;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b) {
  require_rank(x.shape(), 3, "conv2d input");
  require_rank(k.shape(), 4, "conv2d kernel");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), co = k.dim(0);
  if (h == 0 || w == 0) throw DimensionError("conv2d: empty spatial extent");
  if (k.dim(1) != c || k.dim(2) != 3 || k.dim(3) != 3 || b.size() != co) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + ", kernel " +
                         shape_str(k.shape()) + ", bias " + shape_str(b.shape()));
  }
  Tensor<T> out({co, h, w});
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  for (std::size_t o = 0; o < co; ++o) {
    T* op = out.data() + o * h * w;
    std::fill(op, op + h * w, b[o]);
    for (std::size_t i = 0; i < c; ++i) {
      const T* ip = x.data() + i * h * w;
      const T* kp = k.data() + (o * c + i) * 9;
      for (std::ptrdiff_t kh = 0; kh < 3; ++kh) {
        for (std::ptrdiff_t kw = 0; kw < 3; ++kw) {
          const T kv = kp[kh * 3 + kw];
          const std::ptrdiff_t dh = kh - 1, dw = kw - 1;
          const std::ptrdiff_t h0 = std::max<std::ptrdiff_t>(0, -dh);
          const std::ptrdiff_t h1 = std::min<std::ptrdiff_t>(H, H - dh);
          const std::ptrdiff_t w0 = std::max<std::ptrdiff_t>(0, -dw);
          const std::ptrdiff_t w1 = std::min<std::ptrdiff_t>(W, W - dw);
          for (std::ptrdiff_t y = h0; y < h1; ++y) {
            T* orow = op + y * W;
            const T* irow = ip + (y + dh) * W + dw;
            for (std::ptrdiff_t xx = w0; xx < w1; ++xx) orow[xx] += kv * irow[xx];
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& dy,
                               bool need_dx) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), co = k.dim(0);
  Conv2dGrads<T> g{Tensor<T>(), Tensor<T>(k.shape()), Tensor<T>({co})};
  if (need_dx) g.dx = Tensor<T>(x.shape());
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  for (std::size_t o = 0; o < co; ++o) {
    const T* gp = dy.data() + o * h * w;
    T bsum = 0;
    for (std::size_t p = 0; p < h * w; ++p) bsum += gp[p];
    g.db[o] = bsum;
    for (std::size_t i = 0; i < c; ++i) {
      const T* ip = x.data() + i * h * w;
      T* dip = need_dx ? g.dx.data() + i * h * w : nullptr;
      const T* kp = k.data() + (o * c + i) * 9;
      T* dkp = g.dk.data() + (o * c + i) * 9;
      for (std::ptrdiff_t kh = 0; kh < 3; ++kh) {
        for (std::ptrdiff_t kw = 0; kw < 3; ++kw) {
          const T kv = kp[kh * 3 + kw];
          const std::ptrdiff_t dh = kh - 1, dw = kw - 1;
          const std::ptrdiff_t h0 = std::max<std::ptrdiff_t>(0, -dh);
          const std::ptrdiff_t h1 = std::min<std::ptrdiff_t>(H, H - dh);
          const std::ptrdiff_t w0 = std::max<std::ptrdiff_t>(0, -dw);
          const std::ptrdiff_t w1 = std::min<std::ptrdiff_t>(W, W - dw);
          T acc = 0;
          for (std::ptrdiff_t y = h0; y < h1; ++y) {
            const T* grow = gp + y * W;
            const T* irow = ip + (y + dh) * W + dw;
            for (std::ptrdiff_t xx = w0; xx < w1; ++xx) acc += grow[xx] * irow[xx];
            if (dip) {
              T* drow = dip + (y + dh) * W + dw;
              for (std::ptrdiff_t xx = w0; xx < w1; ++xx) drow[xx] += kv * grow[xx];
            }
          }
          dkp[kh * 3 + kw] += acc;
        }
      }
    }
  }
  return g;
}

ChannelLayout channel_layout(const Shape& shape) {
  switch (shape.size()) {
    case 1: return {1, shape[0], 1};
    case 2: return {shape[0], shape[1], 1};
    case 3: return {1, shape[0], shape[1] * shape[2]};
    default: throw DimensionError("no channel layout for " + shape_str(shape));
  }
}

template <typename T>
BatchNormResult<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                             Tensor<T>& running_mean, Tensor<T>& running_var, NormMode mode,
                             double momentum, double eps) {
  const ChannelLayout lay = channel_layout(x.shape());
  const std::size_t C = lay.channels;
  if (gamma.size() != C || beta.size() != C || running_mean.size() != C ||
      running_var.size() != C) {
    throw DimensionError("batchnorm: " + std::to_string(C) + " channels, gamma " +
                         shape_str(gamma.shape()));
  }
  if (lay.count() == 0) throw DegenerateInputError("batchnorm: channel with zero elements");

  BatchNormResult<T> res{Tensor<T>(x.shape()), {Tensor<T>(x.shape()), std::vector<T>(C), mode}};
  std::vector<double> mean(C, 0.0), var(C, 0.0);
  auto index = [&](std::size_t o, std::size_t c, std::size_t i) {
    return (o * C + c) * lay.inner + i;
  };

  if (mode == NormMode::train) {
    const double m = static_cast<double>(lay.count());
    for (std::size_t o = 0; o < lay.outer; ++o)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < lay.inner; ++i) mean[c] += x[index(o, c, i)];
    for (auto& v : mean) v /= m;
    for (std::size_t o = 0; o < lay.outer; ++o)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < lay.inner; ++i) {
          const double d = x[index(o, c, i)] - mean[c];
          var[c] += d * d;
        }
    for (std::size_t c = 0; c < C; ++c) {
      const double biased = var[c] / m;
      const double unbiased = lay.count() > 1 ? var[c] / (m - 1.0) : biased;
      var[c] = biased;
      running_mean[c] = static_cast<T>((1.0 - momentum) * running_mean[c] + momentum * mean[c]);
      running_var[c] = static_cast<T>((1.0 - momentum) * running_var[c] + momentum * unbiased);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      var[c] = running_var[c];
    }
  }

  for (std::size_t c = 0; c < C; ++c) res.saved.inv_std[c] = T(1.0 / std::sqrt(var[c] + eps));
  for (std::size_t o = 0; o < lay.outer; ++o)
    for (std::size_t c = 0; c < C; ++c) {
      const T mu = static_cast<T>(mean[c]), is = res.saved.inv_std[c];
      for (std::size_t i = 0; i < lay.inner; ++i) {
        const std::size_t k = index(o, c, i);
        const T xh = (x[k] - mu) * is;
        res.saved.xhat[k] = xh;
        res.y[k] = gamma[c] * xh + beta[c];
      }
    }
  return res;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormSaved<T>& saved, const Tensor<T>& gamma,
                                     const Tensor<T>& dy) {
  const ChannelLayout lay = channel_layout(dy.shape());
  const std::size_t C = lay.channels;
  BatchNormGrads<T> g{Tensor<T>(dy.shape()), Tensor<T>({C}), Tensor<T>({C})};
  auto index = [&](std::size_t o, std::size_t c, std::size_t i) {
    return (o * C + c) * lay.inner + i;
  };
  std::vector<T> sum_dy(C, 0), sum_dy_xhat(C, 0);
  for (std::size_t o = 0; o < lay.outer; ++o)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < lay.inner; ++i) {
        const std::size_t k = index(o, c, i);
        sum_dy[c] += dy[k];
        sum_dy_xhat[c] += dy[k] * saved.xhat[k];
      }
  for (std::size_t c = 0; c < C; ++c) {
    g.dbeta[c] = sum_dy[c];
    g.dgamma[c] = sum_dy_xhat[c];
  }
  const T m = static_cast<T>(lay.count());
  for (std::size_t o = 0; o < lay.outer; ++o)
    for (std::size_t c = 0; c < C; ++c) {
      const T scale = gamma[c] * saved.inv_std[c];
      for (std::size_t i = 0; i < lay.inner; ++i) {
        const std::size_t k = index(o, c, i);
        if (saved.mode == NormMode::train) {
          g.dx[k] = scale * (dy[k] - sum_dy[c] / m - saved.xhat[k] * sum_dy_xhat[c] / m);
        } else {
          g.dx[k] = scale * dy[k];
        }
      }
    }
  return g;
}

template <typename T>
Tensor<T> activation(Activation kind, const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const std::size_t n = x.size();
  switch (kind) {
    case Activation::identity: return x;
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
      break;
    case Activation::leaky_relu:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(kLeakySlope) * x[i];
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < n; ++i) {
        // Split on sign so exp never overflows.
        if (x[i] >= T(0)) {
          y[i] = T(1) / (T(1) + std::exp(-x[i]));
        } else {
          const T e = std::exp(x[i]);
          y[i] = e / (T(1) + e);
        }
      }
      break;
  }
  return y;
}

template <typename T>
Tensor<T> activation_backward(Activation kind, const Tensor<T>& x, const Tensor<T>& y,
                              const Tensor<T>& dy) {
  Tensor<T> dx(x.shape());
  const std::size_t n = x.size();
  switch (kind) {
    case Activation::identity: return dy;
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
      break;
    case Activation::leaky_relu:
      for (std::size_t i = 0; i < n; ++i) dx[i] = x[i] > T(0) ? dy[i] : T(kLeakySlope) * dy[i];
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < n; ++i) dx[i] = dy[i] * y[i] * (T(1) - y[i]);
      break;
  }
  return dx;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  require_rank(x.shape(), 2, "softmax_rows");
  const std::size_t n = x.dim(0), k = x.dim(1);
  if (k == 0) throw DimensionError("softmax_rows: zero columns");
  Tensor<T> y(x.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = x.data() + r * k;
    T* yr = y.data() + r * k;
    const T mx = *std::max_element(xr, xr + k);
    T sum = 0;
    for (std::size_t j = 0; j < k; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (std::size_t j = 0; j < k; ++j) yr[j] /= sum;
  }
  return y;
}

template <typename T>
Tensor<T> softmax_rows_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  const std::size_t n = y.dim(0), k = y.dim(1);
  Tensor<T> dx(y.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const T* yr = y.data() + r * k;
    const T* gr = dy.data() + r * k;
    T dot = 0;
    for (std::size_t j = 0; j < k; ++j) dot += yr[j] * gr[j];
    for (std::size_t j = 0; j < k; ++j) dx[r * k + j] = yr[j] * (gr[j] - dot);
  }
  return dx;
}

template <typename T>
SegmentedMax<T> segmented_max(const Tensor<T>& x, std::span<const std::int64_t> ids,
                              std::size_t segments) {
  require_rank(x.shape(), 2, "segmented_max");
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (ids.size() != n) {
    throw DimensionError("segmented_max: " + std::to_string(ids.size()) + " ids for " +
                         std::to_string(n) + " rows");
  }
  SegmentedMax<T> res{Tensor<T>({segments, c}), std::vector<std::int64_t>(segments * c, -1)};
  for (std::size_t r = 0; r < n; ++r) {
    const std::int64_t s = ids[r];
    if (s < 0 || static_cast<std::size_t>(s) >= segments) {
      throw IndexError("segment id " + std::to_string(s) + " outside [0," +
                       std::to_string(segments) + ")");
    }
    const T* xr = x.data() + r * c;
    T* out = res.values.data() + static_cast<std::size_t>(s) * c;
    std::int64_t* arg = res.argmax.data() + static_cast<std::size_t>(s) * c;
    for (std::size_t j = 0; j < c; ++j) {
      if (arg[j] < 0 || xr[j] > out[j]) {
        out[j] = xr[j];
        arg[j] = static_cast<std::int64_t>(r);
      }
    }
  }
  return res;
}

template <typename T>
Tensor<T> segmented_max_backward(const std::vector<std::int64_t>& argmax, const Tensor<T>& dy,
                                 std::size_t rows) {
  const std::size_t c = dy.dim(1);
  Tensor<T> dx({rows, c});
  for (std::size_t k = 0; k < argmax.size(); ++k) {
    if (argmax[k] >= 0) dx[static_cast<std::size_t>(argmax[k]) * c + k % c] += dy[k];
  }
  return dx;
}

template <typename T>
CrossEntropy<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require_rank(logits.shape(), 2, "cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw DimensionError("cross_entropy: label count mismatch");
  if (n == 0) throw DegenerateInputError("cross_entropy: no rows");
  CrossEntropy<T> res{T(0), softmax_rows(logits)};
  double total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw DataError("label " + std::to_string(label) + " outside [0," + std::to_string(k) + ")");
    }
    const T* xr = logits.data() + r * k;
    const T mx = *std::max_element(xr, xr + k);
    double sum = 0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(static_cast<double>(xr[j] - mx));
    total += std::log(sum) + mx - xr[label];
  }
  res.loss = static_cast<T>(total / static_cast<double>(n));
  return res;
}

template <typename T>
Tensor<T> cross_entropy_backward(const Tensor<T>& probs, std::span<const int> labels, T dloss) {
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  Tensor<T> dx = probs;
  const T scale = dloss / static_cast<T>(n);
  for (std::size_t r = 0; r < n; ++r) {
    dx[r * k + static_cast<std::size_t>(labels[r])] -= T(1);
    for (std::size_t j = 0; j < k; ++j) dx[r * k + j] *= scale;
  }
  return dx;
}

#define PPCNN_INSTANTIATE(T)                                                                  \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template LinearGrads<T> linear_backward(const Tensor<T>&, const Tensor<T>&,                 \
                                          const Tensor<T>&, bool);                            \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Conv2dGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&,                 \
                                          const Tensor<T>&, bool);                            \
  template BatchNormResult<T> batchnorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                        Tensor<T>&, Tensor<T>&, NormMode, double, double);    \
  template BatchNormGrads<T> batchnorm_backward(const BatchNormSaved<T>&, const Tensor<T>&,   \
                                                const Tensor<T>&);                            \
  template Tensor<T> activation(Activation, const Tensor<T>&);                                \
  template Tensor<T> activation_backward(Activation, const Tensor<T>&, const Tensor<T>&,      \
                                         const Tensor<T>&);                                   \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                          \
  template Tensor<T> softmax_rows_backward(const Tensor<T>&, const Tensor<T>&);               \
  template SegmentedMax<T> segmented_max(const Tensor<T>&, std::span<const std::int64_t>,     \
                                         std::size_t);                                        \
  template Tensor<T> segmented_max_backward(const std::vector<std::int64_t>&,                 \
                                            const Tensor<T>&, std::size_t);                   \
  template CrossEntropy<T> cross_entropy(const Tensor<T>&, std::span<const int>);             \
  template Tensor<T> cross_entropy_backward(const Tensor<T>&, std::span<const int>, T);

PPCNN_INSTANTIATE(float)
PPCNN_INSTANTIATE(double)

}  // namespace ppcnn::kernels
