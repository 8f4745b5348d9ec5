#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ppcnn/layers.hpp"
#include "ppcnn/pointgrid.hpp"

namespace ppcnn {

enum class FusionStrategy { concat, iwf, caf };

std::string to_string(FusionStrategy f);
FusionStrategy parse_fusion_strategy(const std::string& s);

// Hidden widths of the coordinate network used by context-aware fusion.
inline constexpr std::size_t kCafLocal1 = 32;
inline constexpr std::size_t kCafLocal2 = 64;
inline constexpr std::size_t kCafHead = 64;

// Features entering fusion. Every feature is N x C_out/2.
template <typename T>
struct FusionInputs {
  std::optional<Var<T>> point_feature;
  std::vector<Var<T>> branch_features;
  const std::vector<Vec3>* coords = nullptr;

  // Point feature first, then branches in order.
  std::vector<Var<T>> features() const {
    std::vector<Var<T>> all;
    if (point_feature) all.push_back(*point_feature);
    all.insert(all.end(), branch_features.begin(), branch_features.end());
    return all;
  }
  std::size_t feature_count() const {
    return branch_features.size() + (point_feature ? 1 : 0);
  }
};

template <typename T>
struct FusionOutput {
  Var<T> features;              // N x C_out
  std::optional<Var<T>> weights;  // N x feature_count for iwf / caf
};

// Branch sum, concatenation with the point feature, one linear+BN+ReLU.
// Without one of the two sources the MLP lifts the remaining one alone.
template <typename T>
struct ConcatFusionParams {
  Dense<T> mlp;

  static ConcatFusionParams create(ParameterSet<T>& ps, const std::string& name,
                                   std::size_t out_channels, bool has_point, bool has_branches,
                                   Rng& rng);
};

template <typename T>
struct IwfParams {
  std::vector<Linear<T>> scorers;  // one per feature, C_out/2 -> feature_count
  Linear<T> lift;                  // C_out/2 -> C_out

  static IwfParams create(ParameterSet<T>& ps, const std::string& name, std::size_t out_channels,
                          std::size_t feature_count, Rng& rng);
};

template <typename T>
struct CafParams {
  Dense<T> local1, local2;  // 3 -> 32 -> 64, per point
  Dense<T> head1;           // 128 -> 64 on [local | global max]
  Linear<T> head2;          // 64 -> feature_count
  Linear<T> lift;           // C_out/2 -> C_out

  static CafParams create(ParameterSet<T>& ps, const std::string& name, std::size_t out_channels,
                          std::size_t feature_count, Rng& rng);
};

template <typename T>
Var<T> fuse_concat(const FusionInputs<T>& in, const ConcatFusionParams<T>& p);

// Per-row softmax of summed per-feature sigmoid scores.
template <typename T>
Var<T> iwf_weights(const FusionInputs<T>& in, const IwfParams<T>& p);
template <typename T>
FusionOutput<T> fuse_iwf(const FusionInputs<T>& in, const IwfParams<T>& p);

// Weights from coordinates only, with a global max-pool over points.
template <typename T>
Var<T> caf_weights(Tape<T>& tape, const std::vector<Vec3>& coords, const CafParams<T>& p);
template <typename T>
FusionOutput<T> fuse_caf(const FusionInputs<T>& in, const CafParams<T>& p);

}  // namespace ppcnn
