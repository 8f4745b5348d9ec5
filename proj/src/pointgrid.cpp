#include "ppcnn/pointgrid.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

namespace ppcnn {

char axis_name(Axis a) { return "xyz"[static_cast<int>(a)]; }

Axis parse_axis(char c) {
  switch (c) {
    case 'x': case 'X': return Axis::x;
    case 'y': case 'Y': return Axis::y;
    case 'z': case 'Z': return Axis::z;
    default: throw ConfigError(std::string("unknown projection axis '") + c + "'");
  }
}

ProjectionAxis ProjectionAxis::along(Axis a) {
  switch (a) {
    case Axis::x: return {a, 1, 2};
    case Axis::y: return {a, 0, 2};
    case Axis::z: return {a, 0, 1};
  }
  throw ConfigError("invalid axis");
}

std::array<double, 2> GridMapping::center_offset(std::size_t k) const {
  const auto [i, j] = cell_ij(k);
  const auto c = cell_center(i, j);
  return {planar_[k][0] - c[0], planar_[k][1] - c[1]};
}

template <typename T>
Tensor<T> GridMapping::augmentation() const {
  const std::size_t n = point_count();
  Tensor<T> out({n, kAugmentChannels});
  for (std::size_t k = 0; k < n; ++k) {
    const auto off = center_offset(k);
    T* row = out.data() + k * kAugmentChannels;
    row[0] = static_cast<T>(mean_offset_[k][0]);
    row[1] = static_cast<T>(mean_offset_[k][1]);
    row[2] = static_cast<T>(mean_offset_[k][2]);
    row[3] = static_cast<T>(off[0]);
    row[4] = static_cast<T>(off[1]);
  }
  return out;
}

template Tensor<float> GridMapping::augmentation<float>() const;
template Tensor<double> GridMapping::augmentation<double>() const;

GridMapping compute_grid_mapping(std::span<const Vec3> coords, ProjectionAxis axis,
                                 int resolution) {
  if (resolution <= 0) {
    throw ConfigError("grid resolution must be positive, got " + std::to_string(resolution));
  }
  if (coords.empty()) throw InputError("grid mapping of an empty point set");
  static std::atomic<std::uint64_t> next_id{1};

  const std::size_t n = coords.size();
  const auto R = static_cast<std::size_t>(resolution);
  GridMapping gm;
  gm.id_ = next_id.fetch_add(1);
  gm.axis_ = axis;
  gm.resolution_ = R;

  const int planar_axes[2] = {axis.first, axis.second};
  for (int a = 0; a < 2; ++a) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& c : coords) {
      const double v = c[planar_axes[a]];
      if (!std::isfinite(v)) throw NumericError("non-finite point coordinate");
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    double extent = hi - lo;
    if (extent <= 0.0) {
      lo -= 0.5;
      extent = 1.0;
    } else {
      extent += 1e-6 * std::max(1.0, extent);
    }
    gm.lower_[a] = lo;
    gm.cell_size_[a] = extent / static_cast<double>(R);
  }

  auto ids = std::make_shared<std::vector<std::int64_t>>(n);
  gm.planar_.resize(n);
  std::vector<std::size_t> counts(R * R, 0);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t ij[2];
    for (int a = 0; a < 2; ++a) {
      const double u = (coords[k][planar_axes[a]] - gm.lower_[a]) / gm.cell_size_[a];
      gm.planar_[k][a] = u;
      const double f = std::floor(u);
      ij[a] = f <= 0.0 ? 0 : std::min(static_cast<std::size_t>(f), R - 1);
    }
    // Clamped boundary points must still report an in-cell offset.
    for (int a = 0; a < 2; ++a) {
      gm.planar_[k][a] = std::clamp(gm.planar_[k][a], static_cast<double>(ij[a]),
                                    static_cast<double>(ij[a] + 1));
    }
    (*ids)[k] = static_cast<std::int64_t>(ij[0] * R + ij[1]);
    ++counts[ij[0] * R + ij[1]];
  }

  gm.member_start_.assign(R * R + 1, 0);
  for (std::size_t c = 0; c < R * R; ++c) gm.member_start_[c + 1] = gm.member_start_[c] + counts[c];
  gm.members_.resize(n);
  std::vector<std::size_t> fill(gm.member_start_.begin(), gm.member_start_.end() - 1);
  for (std::size_t k = 0; k < n; ++k) gm.members_[fill[static_cast<std::size_t>((*ids)[k])]++] = k;

  std::vector<Vec3> means(R * R, Vec3{0, 0, 0});
  for (std::size_t c = 0; c < R * R; ++c) {
    const auto m = gm.members(c);
    if (m.empty()) continue;
    for (std::size_t k : m)
      for (int d = 0; d < 3; ++d) means[c][d] += coords[k][d];
    for (int d = 0; d < 3; ++d) means[c][d] /= static_cast<double>(m.size());
  }
  gm.mean_offset_.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& m = means[static_cast<std::size_t>((*ids)[k])];
    for (int d = 0; d < 3; ++d) gm.mean_offset_[k][d] = coords[k][d] - m[d];
  }
  gm.cell_ids_ = std::move(ids);
  return gm;
}

template <typename T>
Tensor<T> augment_point_features(const Tensor<T>& features, const GridMapping& gm) {
  if (features.rank() != 2 || features.dim(0) != gm.point_count()) {
    throw ConsistencyError("features " + shape_str(features.shape()) + " for a mapping of " +
                           std::to_string(gm.point_count()) + " points");
  }
  const std::size_t n = features.dim(0), c = features.dim(1);
  const std::size_t width = c + GridMapping::kAugmentChannels;
  const Tensor<T> aug = gm.augmentation<T>();
  Tensor<T> out({n, width});
  for (std::size_t k = 0; k < n; ++k) {
    std::copy_n(features.data() + k * c, c, out.data() + k * width);
    std::copy_n(aug.data() + k * GridMapping::kAugmentChannels, GridMapping::kAugmentChannels,
                out.data() + k * width + c);
  }
  return out;
}

template Tensor<float> augment_point_features(const Tensor<float>&, const GridMapping&);
template Tensor<double> augment_point_features(const Tensor<double>&, const GridMapping&);

}  // namespace ppcnn
