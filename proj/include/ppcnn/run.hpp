#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ppcnn/data.hpp"
#include "ppcnn/gradcheck.hpp"
#include "ppcnn/metrics.hpp"
#include "ppcnn/network.hpp"
#include "ppcnn/optim.hpp"

namespace ppcnn {

struct DataConfig {
  // Text point files; when empty, synthetic scenes are generated.
  std::vector<std::string> train_files;
  std::vector<std::string> val_files;
  std::size_t train_scenes = 4;
  std::size_t val_scenes = 2;
  std::size_t scene_points = 16384;
  // Blocks drawn once per training scene under the pv protocol (fp samples
  // fresh blocks every step).
  std::size_t blocks_per_scene = 16;
};

struct BenchConfig {
  std::size_t points = 8192;
  std::size_t channels = 32;
  int resolution = 64;
  std::size_t warmup = 5;
  std::size_t iterations = 20;
  std::size_t knn = 32;
  bool network = true;  // also time the configured network
};

struct AblateConfig {
  std::size_t seeds = 5;
  std::size_t steps = 0;  // 0: use RunConfig::steps
  std::vector<std::string> grids{"branches", "axes", "projection", "resolution", "conv",
                                 "fusion"};
};

struct RunConfig {
  std::string network = "desk";  // s3dis | shapenet | desk | path to a JSON spec
  PPConvOptions ppconv;
  std::string protocol = "pv";
  std::size_t block_points = 512;  // 0: the protocol's own count
  std::uint64_t seed = 0;
  double lr = 3e-3;
  bool cosine = true;
  std::size_t batch_size = 2;
  std::size_t steps = 200;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::size_t eval_every = 0;        // 0: validate at the end only
  std::string out_dir = "run";
  std::size_t threads = 1;
  bool deterministic = true;
  DataConfig data;
  BenchConfig bench;
  AblateConfig ablate;

  NetworkSpec network_spec() const;
  BlockProtocol block_protocol() const;
  // Checks the whole configuration, including building the network.
  void validate() const;

  json to_json() const;
  static RunConfig from_json(const json& j);  // unknown keys are errors
  static RunConfig load(const std::string& path);
  void save(const std::string& path) const;
};

struct StepStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

// One optimizer step on a batch: every block runs its own forward pass
// (batch-norm statistics are per block) and the mean loss is backpropagated.
StepStats train_step(Network<float>& net, Adam<float>& opt, const std::vector<Block>& batch,
                     std::uint64_t fps_start = 0);

// Eval-mode logits for one block.
Tensor<float> block_logits(const Network<float>& net, const Block& block);

// Mean logits over all tiles covering the scene, N x K.
Tensor<float> scene_logits(const Network<float>& net, const Scene& scene,
                           const BlockProtocol& protocol, std::uint64_t seed,
                           std::size_t threads = 1);
std::vector<int> argmax_rows(const Tensor<float>& logits);

// mIoU over the concatenation of all scene points.
MiouReport evaluate_scenes(const Network<float>& net, const std::vector<Scene>& scenes,
                           const BlockProtocol& protocol, std::uint64_t seed,
                           std::size_t threads = 1);

// Eval-mode point accuracy over a list of blocks.
double blocks_accuracy(const Network<float>& net, const std::vector<Block>& blocks);

struct TrainResult {
  std::vector<StepStats> log;
  double untrained_accuracy = 0.0;  // eval mode, training blocks, before step 1
  double train_accuracy = 0.0;      // eval mode, training blocks, after the last step
  double final_step_accuracy = 0.0;  // training-mode batch accuracy, mean of the last 10 steps
  double best_val_miou = 0.0;
  std::optional<Network<float>> network;
};

// Scenes from the configured files, or synthetic scenes with `class_count`
// classes seeded from the run seed.
std::vector<Scene> load_or_generate_scenes(const RunConfig& cfg, bool validation,
                                           std::size_t class_count);

// Writes config.json, metrics.csv (step,loss,train_accuracy plus a final
// best_val_miou line) and checkpoints into cfg.out_dir when it is non-empty.
TrainResult run_train(const RunConfig& cfg, std::ostream* log = nullptr);

// Scenes come from `files` or, when empty, from the config's validation set.
MiouReport run_eval(const RunConfig& cfg, const std::string& checkpoint,
                    const std::vector<std::string>& files, std::ostream* log = nullptr);

// One predicted label per line for every point of `input`.
std::vector<int> run_predict(const RunConfig& cfg, const std::string& checkpoint,
                             const std::string& input, const std::string& output);

struct BenchRow {
  std::string name;
  std::size_t warmup = 0;
  std::size_t iterations = 0;
  std::size_t points = 0;
  std::vector<double> times_ms;
  double median_ms = 0.0;
  double mad_ms = 0.0;
};

struct BenchCase {
  std::string name;
  std::size_t points = 0;
  std::function<void()> run;
};

double median(std::vector<double> v);
double median_abs_deviation(const std::vector<double>& v);

BenchRow time_case(const BenchCase& c, std::size_t warmup, std::size_t iterations);

// Random cloud in a 1.5 m block with `channels` features.
PointCloud<float> bench_cloud(std::size_t points, std::size_t channels, std::uint64_t seed);

// Exhaustive k-nearest-neighbor aggregation: O(N^2) neighbor scan, shared
// linear+ReLU on neighbor features, max over the k neighbors.
class NaiveKnnAggregation {
 public:
  NaiveKnnAggregation(std::size_t channels, std::size_t k, std::uint64_t seed);
  Tensor<float> operator()(const PointCloud<float>& pc) const;
  std::size_t k() const { return k_; }

 private:
  std::size_t k_;
  Tensor<float> w_, b_;
};

// Layer-level cases for the axes, fusion and resolution grids, the naive
// k-NN baseline, first-stage timings and (optionally) the full network.
std::vector<BenchCase> standard_bench_cases(const RunConfig& cfg);
std::vector<BenchRow> run_bench(const RunConfig& cfg, std::ostream* log = nullptr);
void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);

struct GradcheckRow {
  std::string unit;
  double max_rel_error = 0.0;
  double threshold = 0.0;
  bool passed = false;
  std::string worst_parameter;
  std::string error;  // set when the unit threw
};

std::vector<GradcheckRow> run_gradcheck(const std::vector<GradCheckUnit>& units);
void write_gradcheck_csv(std::ostream& out, const std::vector<GradcheckRow>& rows);

struct AblationRow {
  std::string grid;
  std::string row;
  std::vector<double> miou;  // one per successful seed
  double mean_miou = 0.0;
  double median_forward_ms = 0.0;
  std::size_t failures = 0;
  std::string error;
};

// Row labels and the options each row applies on top of the base config.
std::vector<std::pair<std::string, RunConfig>> ablation_rows(const RunConfig& base,
                                                             const std::string& grid);
std::vector<AblationRow> run_ablate(const RunConfig& cfg, std::ostream* log = nullptr);
void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows);

}  // namespace ppcnn
