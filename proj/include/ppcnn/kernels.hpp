#pragma once

// Pure dense kernels with their backward rules. Nothing here touches a tape;
// ops.hpp wires these into differentiable operations.

#include <cstdint>
#include <vector>

#include "ppcnn/tensor.hpp"

namespace ppcnn::kernels {

template <typename T>
struct LinearGrads {
  Tensor<T> dx, dw, db;
};

// out[n,:] = x[n,:] . w + b, x: N x Cin, w: Cin x Cout, b: Cout.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                               bool need_dx = true);

template <typename T>
struct Conv2dGrads {
  Tensor<T> dx, dk, db;
};

// 3x3 cross-correlation, stride 1, zero padding 1. x: C x H x W,
// k: C' x C x 3 x 3, b: C'. Output C' x H x W.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b);
template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& dy,
                               bool need_dx = true);

// Channel view of a tensor: rank 2 is N x C (channels innermost), rank 3 is
// C x H x W (channels outermost), rank 1 is a single row of C channels.
struct ChannelLayout {
  std::size_t outer = 1, channels = 0, inner = 1;
  std::size_t count() const { return outer * inner; }
};
ChannelLayout channel_layout(const Shape& shape);

enum class NormMode { train, eval };

template <typename T>
struct BatchNormSaved {
  Tensor<T> xhat;                 // normalized input
  std::vector<T> inv_std;         // per channel
  NormMode mode = NormMode::train;
};

template <typename T>
struct BatchNormResult {
  Tensor<T> y;
  BatchNormSaved<T> saved;
};

// Train mode normalizes by biased batch statistics and folds the batch
// mean and unbiased variance into the running stats with `momentum`.
// Eval mode uses the running stats unchanged.
template <typename T>
BatchNormResult<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                             Tensor<T>& running_mean, Tensor<T>& running_var, NormMode mode,
                             double momentum, double eps);

template <typename T>
struct BatchNormGrads {
  Tensor<T> dx, dgamma, dbeta;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormSaved<T>& saved, const Tensor<T>& gamma,
                                     const Tensor<T>& dy);

enum class Activation { identity, relu, leaky_relu, sigmoid };
inline constexpr double kLeakySlope = 0.1;

template <typename T>
Tensor<T> activation(Activation kind, const Tensor<T>& x);
// Uses the forward output y (all supported activations are invertible enough
// for their derivative to be expressed through y and x).
template <typename T>
Tensor<T> activation_backward(Activation kind, const Tensor<T>& x, const Tensor<T>& y,
                              const Tensor<T>& dy);

// Row-wise softmax with max subtraction, x: N x K.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);
template <typename T>
Tensor<T> softmax_rows_backward(const Tensor<T>& y, const Tensor<T>& dy);

template <typename T>
struct SegmentedMax {
  Tensor<T> values;                    // S x C
  std::vector<std::int64_t> argmax;    // S x C row index, -1 for empty segments
};

// out[s,c] = max over rows n with ids[n] == s; empty segments are 0 and route
// no gradient. Ties keep the first row encountered.
template <typename T>
SegmentedMax<T> segmented_max(const Tensor<T>& x, std::span<const std::int64_t> ids,
                              std::size_t segments);
template <typename T>
Tensor<T> segmented_max_backward(const std::vector<std::int64_t>& argmax, const Tensor<T>& dy,
                                 std::size_t rows);

template <typename T>
struct CrossEntropy {
  T loss;
  Tensor<T> probs;
};

// Mean over rows of -log softmax(logits)[label], with log-sum-exp stability.
template <typename T>
CrossEntropy<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);
template <typename T>
Tensor<T> cross_entropy_backward(const Tensor<T>& probs, std::span<const int> labels, T dloss);

}  // namespace ppcnn::kernels
