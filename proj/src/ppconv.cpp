#include "ppcnn/ppconv.hpp"

#include <algorithm>
#include <memory>

namespace ppcnn {

void PPConvConfig::validate() const {
  if (in_channels == 0) throw ConfigError("PPConv input channels must be positive");
  if (out_channels == 0 || out_channels % 2 != 0) {
    throw ConfigError("PPConv output channels must be even and positive, got " +
                      std::to_string(out_channels));
  }
  if (resolution < 1) throw ConfigError("grid resolution must be at least 1");
  if (axes.size() > 3) throw ConfigError("at most three projection axes");
  std::vector<Axis> sorted = axes;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ConfigError("duplicate projection axis in '" + axes_string(axes) + "'");
  }
  if (axes.empty() && !include_point_branch) {
    throw ConfigError("PPConv needs the point branch or at least one projection axis");
  }
  if (!axes.empty() && (se_reduction == 0 || half() % se_reduction != 0)) {
    throw ConfigError("SE reduction " + std::to_string(se_reduction) + " does not divide " +
                      std::to_string(half()) + " conv channels");
  }
}

std::string axes_string(const std::vector<Axis>& axes) {
  std::string s;
  for (Axis a : axes) s += axis_name(a);
  return s;
}

std::vector<Axis> parse_axes(const std::string& s) {
  std::vector<Axis> axes;
  for (char c : s) {
    if (c == ',' || c == ' ') continue;
    axes.push_back(parse_axis(c));
  }
  return axes;
}

template <typename T>
PPConv<T>::PPConv(ParameterSet<T>& ps, const std::string& name, PPConvConfig cfg, Rng& rng)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::size_t half = cfg_.half();
  if (cfg_.include_point_branch) {
    point_ = Dense<T>::create(ps, name + ".point", cfg_.in_channels, half, rng);
  }
  for (Axis a : cfg_.axes) {
    const std::string bname = name + ".proj_" + axis_name(a);
    const std::size_t proj_in = cfg_.projection == ProjectionMethod::pointnet
                                    ? cfg_.in_channels + GridMapping::kAugmentChannels
                                    : cfg_.in_channels;
    ProjectionBranchParams<T> b;
    b.axis = a;
    b.proj_mlp = Dense<T>::create(ps, bname + ".mlp", proj_in, half, rng);
    b.block = SEResBlockParams<T>::create(ps, bname + ".block", half, cfg_.se_reduction, rng);
    branches_.push_back(std::move(b));
  }
  const std::size_t features = branches_.size() + (point_ ? 1 : 0);
  switch (cfg_.fusion) {
    case FusionStrategy::concat:
      concat_ = ConcatFusionParams<T>::create(ps, name + ".fusion", cfg_.out_channels,
                                              point_.has_value(), !branches_.empty(), rng);
      break;
    case FusionStrategy::iwf:
      iwf_ = IwfParams<T>::create(ps, name + ".fusion", cfg_.out_channels, features, rng);
      break;
    case FusionStrategy::caf:
      caf_ = CafParams<T>::create(ps, name + ".fusion", cfg_.out_channels, features, rng);
      break;
  }
}

template <typename T>
Var<T> PPConv<T>::point_branch(const Var<T>& features) const {
  if (!point_) throw ConfigError("point branch disabled in this layer");
  return (*point_)(features);
}

template <typename T>
Var<T> PPConv<T>::projection_branch(std::size_t index, const std::vector<Vec3>& coords,
                                    const Var<T>& features) const {
  const auto& b = branches_.at(index);
  const std::string tag = std::string("projection ") + axis_name(b.axis);
  std::shared_ptr<const GridMapping> gm;
  try {
    gm = std::make_shared<const GridMapping>(
        compute_grid_mapping(coords, ProjectionAxis::along(b.axis), cfg_.resolution));
  } catch (const Error& e) {
    throw StageError(tag + " / grid mapping", e);
  }
  FeatureMap2D<T> fm;
  try {
    if (cfg_.projection == ProjectionMethod::pointnet) {
      fm = project(features, gm, cfg_.projection, &b.proj_mlp);
    } else {
      fm = project(b.proj_mlp(features), gm, cfg_.projection);
    }
  } catch (const Error& e) {
    throw StageError(tag + " / project", e);
  }
  try {
    fm = se_res_block(fm, b.block, cfg_.conv);
  } catch (const Error& e) {
    throw StageError(tag + " / conv block", e);
  }
  try {
    return backproject(fm, *gm, cfg_.backprojection);
  } catch (const Error& e) {
    throw StageError(tag + " / backproject", e);
  }
}

template <typename T>
FusionInputs<T> PPConv<T>::branch_outputs(const std::vector<Vec3>& coords,
                                          const Var<T>& features) const {
  const auto& fv = features.value();
  if (fv.rank() != 2 || fv.dim(1) != cfg_.in_channels || fv.dim(0) != coords.size()) {
    throw DimensionError("PPConv expects " + std::to_string(coords.size()) + " x " +
                         std::to_string(cfg_.in_channels) + " features, got " +
                         shape_str(fv.shape()));
  }
  FusionInputs<T> in;
  if (point_) {
    try {
      in.point_feature = point_branch(features);
    } catch (const Error& e) {
      throw StageError("point branch", e);
    }
  }
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    in.branch_features.push_back(projection_branch(i, coords, features));
  }
  in.coords = &coords;
  return in;
}

template <typename T>
std::optional<Var<T>> PPConv<T>::fusion_weights(const FusionInputs<T>& in) const {
  if (iwf_) return iwf_weights(in, *iwf_);
  if (caf_) return caf_weights(in.features().front().tape(), *in.coords, *caf_);
  return std::nullopt;
}

template <typename T>
Var<T> PPConv<T>::fuse(const FusionInputs<T>& in) const {
  try {
    if (concat_) return fuse_concat(in, *concat_);
    if (iwf_) return fuse_iwf(in, *iwf_).features;
    return fuse_caf(in, *caf_).features;
  } catch (const Error& e) {
    throw StageError("fusion " + to_string(cfg_.fusion), e);
  }
}

template <typename T>
Var<T> PPConv<T>::forward(const std::vector<Vec3>& coords, const Var<T>& features) const {
  return fuse(branch_outputs(coords, features));
}

template <typename T>
PointCloud<T> ppconv_forward(const PointCloud<T>& pc, const PPConv<T>& layer,
                             TapeOptions options) {
  pc.validate();
  Tape<T> tape(options);
  Var<T> out = layer.forward(pc.coords, tape.constant(pc.features));
  return {pc.coords, out.value(), pc.labels};
}

template class PPConv<float>;
template class PPConv<double>;
template PointCloud<float> ppconv_forward(const PointCloud<float>&, const PPConv<float>&,
                                          TapeOptions);
template PointCloud<double> ppconv_forward(const PointCloud<double>&, const PPConv<double>&,
                                           TapeOptions);

}  // namespace ppcnn
