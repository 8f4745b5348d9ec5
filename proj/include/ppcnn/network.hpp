#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ppcnn/ppconv.hpp"
#include "ppcnn/sampling.hpp"

namespace ppcnn {

using json = nlohmann::json;

// [output channels, layer count, grid resolution]
struct PPConvStageSpec {
  std::size_t channels = 0;
  std::size_t layers = 0;
  int resolution = 0;
};

// Set abstraction: PPConv layers, then sample `samples` centers, group
// `nsample` neighbors within `radius` and run the local shared MLP.
struct SAStageSpec {
  std::optional<PPConvStageSpec> ppconv;
  std::size_t samples = 0;
  double radius = 0.0;
  std::size_t nsample = 0;
  std::vector<std::size_t> mlp;
};

// Feature propagation: interpolate, concat skip features, MLP, PPConv layers.
struct FPStageSpec {
  std::vector<std::size_t> mlp;
  std::optional<PPConvStageSpec> ppconv;
};

struct NetworkSpec {
  std::string name = "custom";
  std::size_t in_channels = 6;
  std::size_t class_count = 13;
  std::vector<SAStageSpec> sa;
  std::vector<FPStageSpec> fp;

  void validate() const;
  std::size_t output_channels() const;

  json to_json() const;
  static NetworkSpec from_json(const json& j);

  // Indoor-scene layout (13 classes, 6 input channels).
  static NetworkSpec s3dis();
  // Object-part layout (50 part classes, normals as 3 input channels).
  static NetworkSpec shapenet();
  // Small layout for 512-point blocks used by the desk-scale experiments.
  static NetworkSpec desk();
  // Built-in name or path to a JSON file.
  static NetworkSpec named(const std::string& name_or_path);
};

// Layer template shared by every PPConv in a network.
struct PPConvOptions {
  std::vector<Axis> axes{Axis::x, Axis::y, Axis::z};
  ProjectionMethod projection = ProjectionMethod::pointnet;
  BackprojectionMode backprojection = BackprojectionMode::distance_weighted;
  ConvVariant conv = ConvVariant::residual_se;
  FusionStrategy fusion = FusionStrategy::concat;
  bool include_point_branch = true;
  std::size_t se_reduction = kDefaultSeReduction;
  // PPConv layers in FP stages run after the stage MLP (false: before).
  bool fp_ppconv_after_mlp = true;
  // When positive, every layer resolution is rescaled so the first PPConv
  // layer uses this value.
  int first_resolution = 0;

  PPConvConfig layer(std::size_t in, std::size_t out, int resolution) const;
  json to_json() const;
  static PPConvOptions from_json(const json& j);
};

struct StageTrace {
  std::string name;               // "sa1".."saK", "fp1".."fpK"
  std::size_t points = 0;         // output point count
  std::size_t channels = 0;       // output channels
  std::vector<int> resolutions;   // one per PPConv layer
};

template <typename T>
class Network {
 public:
  Network(NetworkSpec spec, PPConvOptions options, std::uint64_t seed);
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  // Per-point class logits, N x class_count. `fps_start` picks the first
  // sampled point of every SA stage (taken modulo the stage size).
  Var<T> forward(Tape<T>& tape, const std::vector<Vec3>& coords, const Tensor<T>& features,
                 std::vector<StageTrace>* trace = nullptr, std::uint64_t fps_start = 0) const;

  // Static per-stage layout: sampled points and PPConv resolutions.
  std::vector<StageTrace> describe() const;

  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }
  const NetworkSpec& spec() const { return spec_; }
  const PPConvOptions& options() const { return options_; }

 private:
  struct SAStage {
    std::vector<PPConv<T>> ppconv;
    std::vector<Dense<T>> mlp;
  };
  struct FPStage {
    std::vector<Dense<T>> mlp;
    std::vector<PPConv<T>> ppconv;
  };

  int scaled(int resolution) const;

  NetworkSpec spec_;
  PPConvOptions options_;
  ParameterSet<T> params_;
  std::vector<SAStage> sa_;
  std::vector<FPStage> fp_;
  Linear<T> classifier_;
};

// Mean over points of -log softmax(logits)[label].
template <typename T>
Var<T> cross_entropy_loss(const Var<T>& logits, const std::vector<int>& labels) {
  return ops::cross_entropy(logits, labels);
}

}  // namespace ppcnn
