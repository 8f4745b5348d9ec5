#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ppcnn/conv2dblock.hpp"
#include "ppcnn/fusion.hpp"
#include "ppcnn/projection.hpp"

namespace ppcnn {

// One PPConv layer. The point branch and every projection branch produce
// C_out/2 channels; fusion brings them to C_out. An empty axis list disables
// the projection branches (the point-branch-only ablation).
struct PPConvConfig {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<Axis> axes{Axis::x, Axis::y, Axis::z};
  int resolution = 64;
  ProjectionMethod projection = ProjectionMethod::pointnet;
  BackprojectionMode backprojection = BackprojectionMode::distance_weighted;
  ConvVariant conv = ConvVariant::residual_se;
  FusionStrategy fusion = FusionStrategy::concat;
  bool include_point_branch = true;
  std::size_t se_reduction = kDefaultSeReduction;

  std::size_t half() const { return out_channels / 2; }
  void validate() const;
};

std::string axes_string(const std::vector<Axis>& axes);
std::vector<Axis> parse_axes(const std::string& s);

template <typename T>
struct ProjectionBranchParams {
  Axis axis = Axis::z;
  // Per-point transform before aggregation. The pointnet method feeds it the
  // augmented features; average and bilinear use it as a channel adapter on
  // the raw features.
  Dense<T> proj_mlp;
  SEResBlockParams<T> block;
};

template <typename T>
class PPConv {
 public:
  PPConv() = default;
  PPConv(ParameterSet<T>& ps, const std::string& name, PPConvConfig cfg, Rng& rng);

  const PPConvConfig& config() const { return cfg_; }

  // N x C_in features at the given coordinates -> N x C_out.
  Var<T> forward(const std::vector<Vec3>& coords, const Var<T>& features) const;

  Var<T> point_branch(const Var<T>& features) const;
  Var<T> projection_branch(std::size_t index, const std::vector<Vec3>& coords,
                           const Var<T>& features) const;
  FusionInputs<T> branch_outputs(const std::vector<Vec3>& coords, const Var<T>& features) const;
  // Fusion weights for the iwf / caf strategies; empty for concat.
  std::optional<Var<T>> fusion_weights(const FusionInputs<T>& in) const;
  Var<T> fuse(const FusionInputs<T>& in) const;

  const std::optional<Dense<T>>& point_params() const { return point_; }
  const std::vector<ProjectionBranchParams<T>>& branch_params() const { return branches_; }

 private:
  PPConvConfig cfg_;
  std::optional<Dense<T>> point_;
  std::vector<ProjectionBranchParams<T>> branches_;
  std::optional<ConcatFusionParams<T>> concat_;
  std::optional<IwfParams<T>> iwf_;
  std::optional<CafParams<T>> caf_;
};

// Runs one layer on a whole cloud with a fresh tape. Coordinates and labels
// pass through unchanged.
template <typename T>
PointCloud<T> ppconv_forward(const PointCloud<T>& pc, const PPConv<T>& layer,
                             TapeOptions options = {false, false});

}  // namespace ppcnn
