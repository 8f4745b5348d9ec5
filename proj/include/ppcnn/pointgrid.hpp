#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "ppcnn/tensor.hpp"

namespace ppcnn {

using Vec3 = std::array<double, 3>;

enum class Axis { x = 0, y = 1, z = 2 };

char axis_name(Axis a);
Axis parse_axis(char c);

// Projection direction plus the two remaining (planar) axes in x<y<z order.
// Planar axis `first` indexes grid rows (i), `second` grid columns (j).
struct ProjectionAxis {
  Axis axis = Axis::z;
  int first = 0;
  int second = 1;

  static ProjectionAxis along(Axis a);
};

template <typename T>
struct PointCloud {
  std::vector<Vec3> coords;
  Tensor<T> features;                      // N x C_in
  std::optional<std::vector<int>> labels;  // N

  std::size_t size() const { return coords.size(); }

  void validate() const {
    if (coords.empty()) throw InputError("point cloud has no points");
    if (features.rank() != 2 || features.dim(0) != coords.size()) {
      throw ConsistencyError("features " + shape_str(features.shape()) + " for " +
                             std::to_string(coords.size()) + " points");
    }
    if (labels && labels->size() != coords.size()) {
      throw ConsistencyError("label count does not match point count");
    }
    for (const auto& c : coords) {
      for (double v : c) {
        if (!std::isfinite(v)) throw NumericError("non-finite point coordinate");
      }
    }
  }
};

// Point-to-cell assignment for one projection axis at resolution R x R.
// Immutable after construction.
class GridMapping {
 public:
  // Number of augmentation columns: offsets to the cell mean (3) and to the
  // cell center on the plane (2).
  static constexpr std::size_t kAugmentChannels = 5;

  std::uint64_t id() const { return id_; }
  const ProjectionAxis& axis() const { return axis_; }
  std::size_t resolution() const { return resolution_; }
  std::size_t cell_count() const { return resolution_ * resolution_; }
  std::size_t point_count() const { return cell_ids_->size(); }

  // Lower bound and cell size along the two planar axes.
  const std::array<double, 2>& lower() const { return lower_; }
  const std::array<double, 2>& cell_size() const { return cell_size_; }

  std::int64_t cell_of(std::size_t k) const { return (*cell_ids_)[k]; }
  std::pair<std::size_t, std::size_t> cell_ij(std::size_t k) const {
    const auto c = static_cast<std::size_t>(cell_of(k));
    return {c / resolution_, c % resolution_};
  }
  const std::shared_ptr<const std::vector<std::int64_t>>& cell_ids() const { return cell_ids_; }

  std::span<const std::size_t> members(std::size_t cell) const {
    return {members_.data() + member_start_[cell], member_start_[cell + 1] - member_start_[cell]};
  }
  bool occupied(std::size_t cell) const { return member_start_[cell + 1] > member_start_[cell]; }

  // Planar position of point k in cell units, in [0, R].
  const std::array<double, 2>& planar(std::size_t k) const { return planar_[k]; }
  static std::array<double, 2> cell_center(std::size_t i, std::size_t j) {
    return {static_cast<double>(i) + 0.5, static_cast<double>(j) + 0.5};
  }
  // Offset from the cell center in cell units; each component in [-0.5, 0.5].
  std::array<double, 2> center_offset(std::size_t k) const;
  // Offset of point k from the mean of its cell, in coordinate units.
  const Vec3& mean_offset(std::size_t k) const { return mean_offset_[k]; }

  // [x_c, y_c, z_c, x_p, y_p] per point, N x 5.
  template <typename T>
  Tensor<T> augmentation() const;

  friend GridMapping compute_grid_mapping(std::span<const Vec3> coords, ProjectionAxis axis,
                                          int resolution);

 private:
  GridMapping() = default;

  std::uint64_t id_ = 0;
  ProjectionAxis axis_;
  std::size_t resolution_ = 0;
  std::array<double, 2> lower_{}, cell_size_{};
  std::shared_ptr<const std::vector<std::int64_t>> cell_ids_;
  std::vector<std::size_t> member_start_;
  std::vector<std::size_t> members_;
  std::vector<std::array<double, 2>> planar_;
  std::vector<Vec3> mean_offset_;
};

// Bounds are the bounding rectangle of the planar coordinates, widened by
// 1e-6 (relative to the extent) so the maximum point stays in the last
// cell. A zero-extent axis is given unit extent centred on its value.
GridMapping compute_grid_mapping(std::span<const Vec3> coords, ProjectionAxis axis,
                                 int resolution);

template <typename T>
GridMapping compute_grid_mapping(const PointCloud<T>& pc, ProjectionAxis axis, int resolution) {
  pc.validate();
  return compute_grid_mapping(std::span<const Vec3>(pc.coords), axis, resolution);
}

// [f_k | x_c, y_c, z_c | x_p, y_p]
template <typename T>
Tensor<T> augment_point_features(const Tensor<T>& features, const GridMapping& gm);

template <typename T>
Tensor<T> augment_point_features(const PointCloud<T>& pc, const GridMapping& gm) {
  if (pc.size() != gm.point_count()) {
    throw ConsistencyError("mapping built for " + std::to_string(gm.point_count()) +
                           " points, cloud has " + std::to_string(pc.size()));
  }
  return augment_point_features(pc.features, gm);
}

}  // namespace ppcnn
