#pragma once

#include <span>
#include <vector>

#include "ppcnn/ops.hpp"
#include "ppcnn/pointgrid.hpp"

namespace ppcnn {

// Greedy max-min selection of `count` indices starting from `start`.
// Ties pick the lowest index.
std::vector<std::size_t> farthest_point_sampling(std::span<const Vec3> coords, std::size_t count,
                                                 std::size_t start = 0);

// centers.size() x nsample indices, row-major. Each row holds up to nsample
// points within `radius` (inclusive) in index order, padded by repeating the
// first hit; a center with no hit uses its nearest point.
std::vector<std::size_t> ball_query(std::span<const Vec3> coords, std::span<const Vec3> centers,
                                    double radius, std::size_t nsample);

// Inverse-distance weights (1 / (d + 1e-8), normalized) over the three
// nearest sources of each destination; fewer sources use all of them.
ops::SparsePattern three_nn_pattern(std::span<const Vec3> src, std::span<const Vec3> dst);

template <typename T>
Tensor<T> three_nn_interpolate(std::span<const Vec3> src, const Tensor<T>& src_features,
                               std::span<const Vec3> dst);

}  // namespace ppcnn
