#pragma once

#include <memory>
#include <string>

#include "ppcnn/layers.hpp"
#include "ppcnn/pointgrid.hpp"

namespace ppcnn {

enum class ProjectionMethod { average, bilinear, pointnet };
enum class BackprojectionMode { nearest, distance_weighted };

std::string to_string(ProjectionMethod m);
std::string to_string(BackprojectionMode m);
ProjectionMethod parse_projection_method(const std::string& s);
BackprojectionMode parse_backprojection_mode(const std::string& s);

// C x R x R planar features plus the mapping that produced them. Cells
// without member points are zero after projection.
template <typename T>
struct FeatureMap2D {
  Var<T> values;
  std::shared_ptr<const GridMapping> mapping;

  std::size_t channels() const { return values.value().dim(0); }
};

// Sparse (cell <- point) weights for the fixed projection rules.
ops::SparsePattern average_pattern(const GridMapping& gm);
// Each point spreads to its four nearest cell centers with bilinear weights;
// every receiving cell is normalized by its total weight. Only occupied
// cells receive contributions.
ops::SparsePattern bilinear_pattern(const GridMapping& gm);
// (point <- cell) weights. Nearest mode uses weight 1; distance-weighted mode
// uses 1 - L1 distance to the cell center in cell units.
ops::SparsePattern backprojection_pattern(const GridMapping& gm, BackprojectionMode mode);

double backprojection_weight(const GridMapping& gm, std::size_t k);

// Projects N x C point features onto the grid. `proj_mlp` is required for
// the pointnet method, which runs it on [f_k | augmentation] and max-pools
// each cell. Average and bilinear aggregate the features as given.
template <typename T>
FeatureMap2D<T> project(const Var<T>& features, std::shared_ptr<const GridMapping> gm,
                        ProjectionMethod method, const Dense<T>* proj_mlp = nullptr);

// Returns N x C point features from a feature map built on `gm`.
template <typename T>
Var<T> backproject(const FeatureMap2D<T>& fm, const GridMapping& gm, BackprojectionMode mode);

}  // namespace ppcnn
