#pragma once

// Differentiable operations: each one runs a kernel forward and records its
// backward rule on the tape of its first input.

#include <cstdint>
#include <memory>
#include <vector>

#include "ppcnn/kernels.hpp"
#include "ppcnn/tape.hpp"

namespace ppcnn::ops {

using kernels::Activation;

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& k, const Var<T>& b);

// Mode and constants come from the tape. Running statistics are updated in
// place in train mode.
template <typename T>
Var<T> batchnorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                 Tensor<T>& running_mean, Tensor<T>& running_var);

template <typename T>
Var<T> activation(Activation kind, const Var<T>& x);
template <typename T>
Var<T> relu(const Var<T>& x) { return activation(Activation::relu, x); }
template <typename T>
Var<T> leaky_relu(const Var<T>& x) { return activation(Activation::leaky_relu, x); }
template <typename T>
Var<T> sigmoid(const Var<T>& x) { return activation(Activation::sigmoid, x); }

template <typename T>
Var<T> softmax_rows(const Var<T>& x);

// Max over rows sharing a segment id. Empty segments give zero rows.
template <typename T>
Var<T> segmented_max(const Var<T>& x, std::shared_ptr<const std::vector<std::int64_t>> ids,
                     std::size_t segments);

// Mean per-row cross entropy; returns a 1-element tensor.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::vector<int> labels);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> add_n(const std::vector<Var<T>>& xs);
template <typename T>
Var<T> scale(const Var<T>& x, T factor);
template <typename T>
Var<T> sum_all(const Var<T>& x);

// Concatenates N x Ci tensors along the channel axis.
template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& xs);

// Copies row 0 of a 1 x C tensor into N rows.
template <typename T>
Var<T> broadcast_rows(const Var<T>& x, std::size_t rows);

template <typename T>
Var<T> gather_rows(const Var<T>& x, std::shared_ptr<const std::vector<std::size_t>> index);

// One weighted contribution of input row `in` to output row `out`.
struct SparseEntry {
  std::size_t out;
  std::size_t in;
  double weight;
};
using SparsePattern = std::shared_ptr<const std::vector<SparseEntry>>;

// out[e.out, :] += e.weight * x[e.in, :] for every entry; out has `rows` rows.
template <typename T>
Var<T> sparse_rows(const Var<T>& x, SparsePattern pattern, std::size_t rows);

template <typename T>
Var<T> transpose(const Var<T>& x);
template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

// x: C x H x W, s: 1 x C or C. out[c,h,w] = x[c,h,w] * s[c].
template <typename T>
Var<T> channel_scale(const Var<T>& x, const Var<T>& s);

// C x H x W -> 1 x C mean over all cells.
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);

// out[n,:] = sum_b weights[n,b] * feats[b][n,:].
template <typename T>
Var<T> weighted_sum(const Var<T>& weights, const std::vector<Var<T>>& feats);

}  // namespace ppcnn::ops
