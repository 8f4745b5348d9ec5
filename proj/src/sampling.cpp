#include "ppcnn/sampling.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace ppcnn {

namespace {

double dist2(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace

std::vector<std::size_t> farthest_point_sampling(std::span<const Vec3> coords, std::size_t count,
                                                 std::size_t start) {
  const std::size_t n = coords.size();
  if (count == 0 || count > n) {
    throw SamplingError("cannot sample " + std::to_string(count) + " of " + std::to_string(n) +
                        " points");
  }
  if (start >= n) throw SamplingError("start index out of range");
  std::vector<std::size_t> picked;
  picked.reserve(count);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::size_t last = start;
  picked.push_back(last);
  while (picked.size() < count) {
    std::size_t arg = 0;
    double far = -1.0;
    const Vec3& p = coords[last];
    for (std::size_t i = 0; i < n; ++i) {
      const double d = dist2(coords[i], p);
      if (d < best[i]) best[i] = d;
      if (best[i] > far) {
        far = best[i];
        arg = i;
      }
    }
    last = arg;
    picked.push_back(last);
  }
  return picked;
}

std::vector<std::size_t> ball_query(std::span<const Vec3> coords, std::span<const Vec3> centers,
                                    double radius, std::size_t nsample) {
  if (coords.empty()) throw InputError("ball query over an empty point set");
  if (!(radius > 0.0)) throw ConfigError("ball query radius must be positive");
  if (nsample == 0) throw ConfigError("ball query needs nsample >= 1");
  const double r2 = radius * radius;
  std::vector<std::size_t> out(centers.size() * nsample);
  for (std::size_t c = 0; c < centers.size(); ++c) {
    std::size_t* row = out.data() + c * nsample;
    std::size_t found = 0;
    for (std::size_t i = 0; i < coords.size() && found < nsample; ++i) {
      if (dist2(coords[i], centers[c]) <= r2) row[found++] = i;
    }
    if (found == 0) {
      std::size_t nearest = 0;
      double nd = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < coords.size(); ++i) {
        const double d = dist2(coords[i], centers[c]);
        if (d < nd) {
          nd = d;
          nearest = i;
        }
      }
      row[found++] = nearest;
    }
    std::fill(row + found, row + nsample, row[0]);
  }
  return out;
}

ops::SparsePattern three_nn_pattern(std::span<const Vec3> src, std::span<const Vec3> dst) {
  if (src.empty()) throw InputError("interpolation from an empty source set");
  const std::size_t k = std::min<std::size_t>(3, src.size());
  auto entries = std::make_shared<std::vector<ops::SparseEntry>>();
  entries->reserve(dst.size() * k);
  for (std::size_t d = 0; d < dst.size(); ++d) {
    std::array<std::size_t, 3> idx{};
    std::array<double, 3> dd{};
    dd.fill(std::numeric_limits<double>::infinity());
    for (std::size_t s = 0; s < src.size(); ++s) {
      const double v = dist2(src[s], dst[d]);
      if (v >= dd[k - 1]) continue;
      std::size_t pos = k - 1;
      while (pos > 0 && v < dd[pos - 1]) {
        dd[pos] = dd[pos - 1];
        idx[pos] = idx[pos - 1];
        --pos;
      }
      dd[pos] = v;
      idx[pos] = s;
    }
    double total = 0;
    std::array<double, 3> w{};
    for (std::size_t j = 0; j < k; ++j) {
      w[j] = 1.0 / (std::sqrt(dd[j]) + 1e-8);
      total += w[j];
    }
    for (std::size_t j = 0; j < k; ++j) entries->push_back({d, idx[j], w[j] / total});
  }
  return entries;
}

template <typename T>
Tensor<T> three_nn_interpolate(std::span<const Vec3> src, const Tensor<T>& src_features,
                               std::span<const Vec3> dst) {
  if (src_features.rank() != 2 || src_features.dim(0) != src.size()) {
    throw DimensionError("interpolation features " + shape_str(src_features.shape()) + " for " +
                         std::to_string(src.size()) + " sources");
  }
  const std::size_t c = src_features.dim(1);
  Tensor<T> out({dst.size(), c});
  const auto pattern = three_nn_pattern(src, dst);
  for (const auto& e : *pattern) {
    for (std::size_t j = 0; j < c; ++j) {
      out[e.out * c + j] += static_cast<T>(e.weight) * src_features[e.in * c + j];
    }
  }
  return out;
}

template Tensor<float> three_nn_interpolate(std::span<const Vec3>, const Tensor<float>&,
                                            std::span<const Vec3>);
template Tensor<double> three_nn_interpolate(std::span<const Vec3>, const Tensor<double>&,
                                             std::span<const Vec3>);

}  // namespace ppcnn
