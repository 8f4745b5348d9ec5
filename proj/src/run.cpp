#include "ppcnn/run.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <set>
#include <thread>

#include "ppcnn/checkpoint.hpp"

namespace ppcnn {

namespace fs = std::filesystem;

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Independent stream for (run seed, purpose, index).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  return mix(mix(mix(seed) ^ tag) ^ index);
}

enum : std::uint64_t {
  kTagTrainScene = 1,
  kTagValScene,
  kTagPool,
  kTagStep,
  kTagInit,
  kTagEval,
  kTagBench,
};

void reject_unknown(const json& j, std::initializer_list<const char*> known,
                    const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename V>
void read(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

void require_scene_network(const NetworkSpec& spec) {
  if (spec.in_channels != kBlockChannels) {
    throw ConfigError("scene training needs a network with " + std::to_string(kBlockChannels) +
                      " input channels, '" + spec.name + "' has " +
                      std::to_string(spec.in_channels));
  }
}

void ensure_dir(const std::string& dir) {
  if (!dir.empty()) fs::create_directories(dir);
}

std::string join(const std::string& dir, const std::string& file) {
  return (fs::path(dir) / file).string();
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig

NetworkSpec RunConfig::network_spec() const { return NetworkSpec::named(network); }

BlockProtocol RunConfig::block_protocol() const {
  BlockProtocol p = BlockProtocol::parse(protocol);
  if (block_points > 0) p.points = block_points;
  return p;
}

void RunConfig::validate() const {
  NetworkSpec spec = network_spec();
  spec.validate();
  const BlockProtocol p = block_protocol();
  if (p.points < spec.sa.front().samples) {
    throw ConfigError("blocks of " + std::to_string(p.points) + " points are smaller than the " +
                      std::to_string(spec.sa.front().samples) + " first-stage samples");
  }
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (threads == 0) throw ConfigError("threads must be positive");
  if (data.train_files.empty() && data.train_scenes == 0) {
    throw ConfigError("no training scenes configured");
  }
  if (data.scene_points == 0) throw ConfigError("scene_points must be positive");
  if (data.blocks_per_scene == 0) throw ConfigError("blocks_per_scene must be positive");
  if (bench.warmup < 5 || bench.iterations < 20) {
    throw ConfigError("bench needs at least 5 warm-up and 20 measured iterations");
  }
  if (bench.knn == 0 || bench.points == 0 || bench.channels == 0 || bench.channels % 2) {
    throw ConfigError("bench needs positive points, k and an even channel count");
  }
  if (ablate.seeds == 0) throw ConfigError("ablate seeds must be positive");
  for (const auto& g : ablate.grids) (void)ablation_rows(*this, g);
  // Building the network checks every layer (SE divisibility, channels).
  Network<float> probe(spec, ppconv, 0);
  (void)probe;
}

json RunConfig::to_json() const {
  return {
      {"network", network},
      {"ppconv", ppconv.to_json()},
      {"protocol", protocol},
      {"block_points", block_points},
      {"seed", seed},
      {"optimizer", {{"lr", lr}, {"cosine", cosine}}},
      {"batch_size", batch_size},
      {"steps", steps},
      {"checkpoint_every", checkpoint_every},
      {"eval_every", eval_every},
      {"out_dir", out_dir},
      {"threads", threads},
      {"deterministic", deterministic},
      {"data",
       {{"train_files", data.train_files},
        {"val_files", data.val_files},
        {"train_scenes", data.train_scenes},
        {"val_scenes", data.val_scenes},
        {"scene_points", data.scene_points},
        {"blocks_per_scene", data.blocks_per_scene}}},
      {"bench",
       {{"points", bench.points},
        {"channels", bench.channels},
        {"resolution", bench.resolution},
        {"warmup", bench.warmup},
        {"iterations", bench.iterations},
        {"knn", bench.knn},
        {"network", bench.network}}},
      {"ablate", {{"seeds", ablate.seeds}, {"steps", ablate.steps}, {"grids", ablate.grids}}},
  };
}

RunConfig RunConfig::from_json(const json& j) {
  reject_unknown(j,
                 {"network", "ppconv", "protocol", "block_points", "seed", "optimizer",
                  "batch_size", "steps", "checkpoint_every", "eval_every", "out_dir", "threads",
                  "deterministic", "data", "bench", "ablate"},
                 "run config");
  RunConfig c;
  try {
    read(j, "network", c.network);
    if (j.contains("ppconv")) c.ppconv = PPConvOptions::from_json(j["ppconv"]);
    read(j, "protocol", c.protocol);
    read(j, "block_points", c.block_points);
    read(j, "seed", c.seed);
    if (j.contains("optimizer")) {
      const auto& o = j["optimizer"];
      reject_unknown(o, {"lr", "cosine"}, "optimizer");
      read(o, "lr", c.lr);
      read(o, "cosine", c.cosine);
    }
    read(j, "batch_size", c.batch_size);
    read(j, "steps", c.steps);
    read(j, "checkpoint_every", c.checkpoint_every);
    read(j, "eval_every", c.eval_every);
    read(j, "out_dir", c.out_dir);
    read(j, "threads", c.threads);
    read(j, "deterministic", c.deterministic);
    if (j.contains("data")) {
      const auto& d = j["data"];
      reject_unknown(d,
                     {"train_files", "val_files", "train_scenes", "val_scenes", "scene_points",
                      "blocks_per_scene"},
                     "data");
      read(d, "train_files", c.data.train_files);
      read(d, "val_files", c.data.val_files);
      read(d, "train_scenes", c.data.train_scenes);
      read(d, "val_scenes", c.data.val_scenes);
      read(d, "scene_points", c.data.scene_points);
      read(d, "blocks_per_scene", c.data.blocks_per_scene);
    }
    if (j.contains("bench")) {
      const auto& b = j["bench"];
      reject_unknown(b,
                     {"points", "channels", "resolution", "warmup", "iterations", "knn",
                      "network"},
                     "bench");
      read(b, "points", c.bench.points);
      read(b, "channels", c.bench.channels);
      read(b, "resolution", c.bench.resolution);
      read(b, "warmup", c.bench.warmup);
      read(b, "iterations", c.bench.iterations);
      read(b, "knn", c.bench.knn);
      read(b, "network", c.bench.network);
    }
    if (j.contains("ablate")) {
      const auto& a = j["ablate"];
      reject_unknown(a, {"seeds", "steps", "grids"}, "ablate");
      read(a, "seeds", c.ablate.seeds);
      read(a, "steps", c.ablate.steps);
      read(a, "grids", c.ablate.grids);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return from_json(j);
}

void RunConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << to_json().dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Training and inference

StepStats train_step(Network<float>& net, Adam<float>& opt, const std::vector<Block>& batch,
                     std::uint64_t fps_start) {
  if (batch.empty()) throw UsageError("empty training batch");
  Tape<float> tape(TapeOptions{true, true});
  std::vector<Var<float>> losses;
  std::size_t hit = 0, total = 0;
  for (const auto& b : batch) {
    if (!b.cloud.labels) throw DataError("training block without labels");
    Var<float> logits = net.forward(tape, b.cloud.coords, b.cloud.features, nullptr, fps_start);
    losses.push_back(cross_entropy_loss(logits, *b.cloud.labels));
    const auto pred = argmax_rows(logits.value());
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == (*b.cloud.labels)[i];
    total += pred.size();
  }
  Var<float> loss = ops::scale(ops::add_n(losses), 1.0f / static_cast<float>(batch.size()));
  const double value = loss.value()[0];
  if (!std::isfinite(value)) throw NumericError("non-finite training loss");
  tape.backward(loss);
  opt.step();
  return {value, static_cast<double>(hit) / static_cast<double>(total)};
}

Tensor<float> block_logits(const Network<float>& net, const Block& block) {
  Tape<float> tape(TapeOptions{false, false});
  return net.forward(tape, block.cloud.coords, block.cloud.features).value();
}

std::vector<int> argmax_rows(const Tensor<float>& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const float* row = logits.data() + r * k;
    out[r] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

Tensor<float> scene_logits(const Network<float>& net, const Scene& scene,
                           const BlockProtocol& protocol, std::uint64_t seed,
                           std::size_t threads) {
  const auto blocks = tile_scene(scene, protocol, seed);
  std::vector<Tensor<float>> outs(blocks.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, blocks.size()));
  if (workers == 1) {
    for (std::size_t b = 0; b < blocks.size(); ++b) outs[b] = block_logits(net, blocks[b]);
  } else {
    // Inference only reads parameters, so blocks can run concurrently.
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t b = w; b < blocks.size(); b += workers) {
            outs[b] = block_logits(net, blocks[b]);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  const std::size_t k = net.spec().class_count;
  Tensor<float> sum({scene.size(), k});
  std::vector<std::size_t> count(scene.size(), 0);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (std::size_t r = 0; r < blocks[b].source.size(); ++r) {
      const std::size_t p = blocks[b].source[r];
      for (std::size_t c = 0; c < k; ++c) sum.at(p, c) += outs[b].at(r, c);
      ++count[p];
    }
  }
  for (std::size_t p = 0; p < scene.size(); ++p) {
    if (count[p] == 0) throw ConsistencyError("tiling missed point " + std::to_string(p));
    for (std::size_t c = 0; c < k; ++c) sum.at(p, c) /= static_cast<float>(count[p]);
  }
  return sum;
}

MiouReport evaluate_scenes(const Network<float>& net, const std::vector<Scene>& scenes,
                           const BlockProtocol& protocol, std::uint64_t seed,
                           std::size_t threads) {
  if (scenes.empty()) throw UsageError("no scenes to evaluate");
  std::vector<int> pred, gt;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    if (!scenes[s].labeled()) throw DataError("evaluation scene without labels");
    for (int l : *scenes[s].cloud.labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= net.spec().class_count) {
        throw ConfigError("scene label " + std::to_string(l) + " outside the network's " +
                          std::to_string(net.spec().class_count) + " classes");
      }
    }
    auto p = argmax_rows(scene_logits(net, scenes[s], protocol, derive_seed(seed, kTagEval, s),
                                      threads));
    pred.insert(pred.end(), p.begin(), p.end());
    gt.insert(gt.end(), scenes[s].cloud.labels->begin(), scenes[s].cloud.labels->end());
  }
  return compute_miou(pred, gt, net.spec().class_count);
}

double blocks_accuracy(const Network<float>& net, const std::vector<Block>& blocks) {
  std::size_t hit = 0, total = 0;
  for (const auto& b : blocks) {
    const auto pred = argmax_rows(block_logits(net, b));
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == (*b.cloud.labels)[i];
    total += pred.size();
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

std::vector<Scene> load_or_generate_scenes(const RunConfig& cfg, bool validation,
                                           std::size_t class_count) {
  const auto& files = validation ? cfg.data.val_files : cfg.data.train_files;
  std::vector<Scene> scenes;
  if (!files.empty()) {
    for (const auto& f : files) scenes.push_back(load_points_text(f));
    return scenes;
  }
  const std::size_t count = validation ? cfg.data.val_scenes : cfg.data.train_scenes;
  for (std::size_t i = 0; i < count; ++i) {
    scenes.push_back(generate_synthetic_scene(
        derive_seed(cfg.seed, validation ? kTagValScene : kTagTrainScene, i), class_count,
        cfg.data.scene_points));
  }
  return scenes;
}

TrainResult run_train(const RunConfig& cfg, std::ostream* log) {
  cfg.validate();
  const NetworkSpec spec = cfg.network_spec();
  require_scene_network(spec);
  const BlockProtocol protocol = cfg.block_protocol();

  const auto train_scenes = load_or_generate_scenes(cfg, false, spec.class_count);
  const auto val_scenes = load_or_generate_scenes(cfg, true, spec.class_count);
  for (const auto& s : train_scenes) {
    if (!s.labeled()) throw DataError("training scene without labels");
  }

  std::mt19937_64 pool_rng(derive_seed(cfg.seed, kTagPool, 0));
  std::vector<Block> pool;
  for (const auto& s : train_scenes) {
    for (std::size_t b = 0; b < cfg.data.blocks_per_scene; ++b) {
      pool.push_back(sample_block(s, protocol, pool_rng));
    }
  }

  std::ofstream csv;
  if (!cfg.out_dir.empty()) {
    ensure_dir(cfg.out_dir);
    cfg.save(join(cfg.out_dir, "config.json"));
    csv.open(join(cfg.out_dir, "metrics.csv"));
    csv << "step,loss,train_accuracy,lr\n" << std::setprecision(9);
  }

  TrainResult result;
  Network<float> net(spec, cfg.ppconv, derive_seed(cfg.seed, kTagInit, 0));
  result.untrained_accuracy = blocks_accuracy(net, pool);
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.cosine = cfg.cosine;
  Adam<float> opt(net.params(), acfg, cfg.steps);

  auto validate_now = [&] {
    if (val_scenes.empty()) return;
    const double m = evaluate_scenes(net, val_scenes, protocol, cfg.seed, cfg.threads).mean;
    result.best_val_miou = std::max(result.best_val_miou, m);
    if (log) *log << "  validation mIoU " << m << '\n';
  };

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const std::uint64_t batch_seed = derive_seed(cfg.seed, kTagStep, step);
    std::mt19937_64 rng(batch_seed);
    std::vector<Block> batch;
    if (protocol.name == "fp") {
      std::uniform_int_distribution<std::size_t> pick(0, train_scenes.size() - 1);
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        batch.push_back(sample_block(train_scenes[pick(rng)], protocol, rng));
      }
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      for (std::size_t b = 0; b < cfg.batch_size; ++b) batch.push_back(pool[pick(rng)]);
    }
    const std::uint64_t fps_start = cfg.deterministic ? 0 : rng();
    const double lr = opt.current_lr();
    StepStats st;
    try {
      st = train_step(net, opt, batch, fps_start);
    } catch (const NumericError& e) {
      if (!cfg.out_dir.empty()) {
        std::ofstream dump(join(cfg.out_dir, "nonfinite_batch.json"));
        dump << json{{"step", step + 1}, {"batch_seed", batch_seed}, {"run_seed", cfg.seed}}
                    .dump(2)
             << '\n';
      }
      throw NumericError("step " + std::to_string(step + 1) + " (batch seed " +
                         std::to_string(batch_seed) + "): " + e.what());
    }
    result.log.push_back(st);
    if (csv.is_open()) csv << step + 1 << ',' << st.loss << ',' << st.accuracy << ',' << lr << '\n';
    if (log && ((step + 1) % 10 == 0 || step + 1 == cfg.steps)) {
      *log << "step " << step + 1 << " loss " << st.loss << " acc " << st.accuracy << '\n';
    }
    if (cfg.checkpoint_every && (step + 1) % cfg.checkpoint_every == 0 && !cfg.out_dir.empty()) {
      save_checkpoint(join(cfg.out_dir, "checkpoint_step" + std::to_string(step + 1) + ".ppck"),
                      net);
    }
    if (cfg.eval_every && (step + 1) % cfg.eval_every == 0 && step + 1 != cfg.steps) {
      validate_now();
    }
  }
  validate_now();
  result.train_accuracy = blocks_accuracy(net, pool);
  const std::size_t tail = std::min<std::size_t>(10, result.log.size());
  for (std::size_t i = result.log.size() - tail; i < result.log.size(); ++i) {
    result.final_step_accuracy += result.log[i].accuracy / static_cast<double>(tail);
  }
  if (!cfg.out_dir.empty()) {
    save_checkpoint(join(cfg.out_dir, "checkpoint.ppck"), net);
    csv << "best_val_miou," << result.best_val_miou << '\n';
  }
  result.network.emplace(std::move(net));
  return result;
}

MiouReport run_eval(const RunConfig& cfg, const std::string& checkpoint,
                    const std::vector<std::string>& files, std::ostream* log) {
  Network<float> net = load_checkpoint(checkpoint);
  require_scene_network(net.spec());
  std::vector<Scene> scenes;
  if (!files.empty()) {
    for (const auto& f : files) scenes.push_back(load_points_text(f));
  } else {
    scenes = load_or_generate_scenes(cfg, true, net.spec().class_count);
  }
  if (scenes.empty()) throw UsageError("no scenes to evaluate");
  MiouReport r = evaluate_scenes(net, scenes, cfg.block_protocol(), cfg.seed, cfg.threads);
  if (log) *log << "mIoU " << r.mean << " over " << scenes.size() << " scenes\n";
  return r;
}

std::vector<int> run_predict(const RunConfig& cfg, const std::string& checkpoint,
                             const std::string& input, const std::string& output) {
  Network<float> net = load_checkpoint(checkpoint);
  require_scene_network(net.spec());
  const Scene scene = load_points_text(input);
  auto labels =
      argmax_rows(scene_logits(net, scene, cfg.block_protocol(), cfg.seed, cfg.threads));
  std::ofstream out(output);
  if (!out) throw DataError("cannot write " + output);
  for (int l : labels) out << l << '\n';
  return labels;
}

// ---------------------------------------------------------------------------
// Timing

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double median_abs_deviation(const std::vector<double>& v) {
  const double m = median(v);
  std::vector<double> d;
  d.reserve(v.size());
  for (double x : v) d.push_back(std::abs(x - m));
  return median(std::move(d));
}

BenchRow time_case(const BenchCase& c, std::size_t warmup, std::size_t iterations) {
  BenchRow row;
  row.name = c.name;
  row.warmup = warmup;
  row.iterations = iterations;
  row.points = c.points;
  for (std::size_t i = 0; i < warmup; ++i) c.run();
  for (std::size_t i = 0; i < iterations; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    c.run();
    const auto t1 = std::chrono::steady_clock::now();
    row.times_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  row.median_ms = median(row.times_ms);
  row.mad_ms = median_abs_deviation(row.times_ms);
  return row;
}

PointCloud<float> bench_cloud(std::size_t points, std::size_t channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(0.0, 1.5), zpos(0.0, 3.0);
  std::normal_distribution<float> feat(0.0f, 1.0f);
  PointCloud<float> pc;
  pc.coords.resize(points);
  for (auto& p : pc.coords) p = {pos(rng), pos(rng), zpos(rng)};
  pc.features = Tensor<float>({points, channels});
  for (auto& v : pc.features.storage()) v = feat(rng);
  return pc;
}

NaiveKnnAggregation::NaiveKnnAggregation(std::size_t channels, std::size_t k, std::uint64_t seed)
    : k_(k), b_({channels}) {
  Rng rng(seed);
  w_ = kaiming_normal<float>({channels, channels}, channels, rng);
}

Tensor<float> NaiveKnnAggregation::operator()(const PointCloud<float>& pc) const {
  const std::size_t n = pc.size(), c = w_.dim(1), k = std::min(k_, n);
  // Shared MLP on every point once; neighbors reuse the transformed rows.
  Tensor<float> h = kernels::linear(pc.features, w_, b_);
  for (auto& v : h.storage()) v = std::max(v, 0.0f);
  Tensor<float> out({n, c});
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& p = pc.coords[i];
    for (std::size_t j = 0; j < n; ++j) {
      const Vec3& q = pc.coords[j];
      const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
      dist[j] = {dx * dx + dy * dy + dz * dz, j};
    }
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
    float* o = out.data() + i * c;
    std::fill(o, o + c, -std::numeric_limits<float>::infinity());
    for (std::size_t m = 0; m < k; ++m) {
      const float* row = h.data() + dist[m].second * c;
      for (std::size_t ch = 0; ch < c; ++ch) o[ch] = std::max(o[ch], row[ch]);
    }
  }
  return out;
}

namespace {

BenchCase layer_case(const std::string& name, const PointCloud<float>& pc, PPConvConfig lcfg,
                     std::uint64_t seed) {
  auto ps = std::make_shared<ParameterSet<float>>();
  Rng rng(seed);
  auto layer = std::make_shared<PPConv<float>>(*ps, "layer", std::move(lcfg), rng);
  auto cloud = std::make_shared<PointCloud<float>>(pc);
  return {name, pc.size(), [ps, layer, cloud] { (void)ppconv_forward(*cloud, *layer); }};
}

BenchCase network_case(const std::string& name, NetworkSpec spec, const PPConvOptions& opts,
                       std::size_t points, std::uint64_t seed) {
  auto net = std::make_shared<Network<float>>(spec, opts, seed);
  auto cloud = std::make_shared<PointCloud<float>>(bench_cloud(points, spec.in_channels, seed));
  return {name, points, [net, cloud] {
            Tape<float> tape(TapeOptions{false, false});
            (void)net->forward(tape, cloud->coords, cloud->features);
          }};
}

}  // namespace

std::vector<BenchCase> standard_bench_cases(const RunConfig& cfg) {
  const auto& b = cfg.bench;
  const std::uint64_t seed = derive_seed(cfg.seed, kTagBench, 0);
  const PointCloud<float> pc = bench_cloud(b.points, b.channels, seed);
  auto base = cfg.ppconv.layer(b.channels, b.channels, b.resolution);
  std::vector<BenchCase> cases;
  for (const char* axes : {"z", "xz", "xyz"}) {
    auto c = base;
    c.axes = parse_axes(axes);
    cases.push_back(layer_case(std::string("ppconv_axes_") + axes, pc, c, seed));
  }
  for (auto f : {FusionStrategy::concat, FusionStrategy::iwf, FusionStrategy::caf}) {
    auto c = base;
    c.fusion = f;
    cases.push_back(layer_case("ppconv_fusion_" + to_string(f), pc, c, seed));
  }
  for (int r : {32, 48, 64, 96}) {
    auto c = base;
    c.resolution = r;
    cases.push_back(layer_case("ppconv_R" + std::to_string(r), pc, c, seed));
  }
  auto knn = std::make_shared<NaiveKnnAggregation>(b.channels, b.knn, seed);
  auto cloud = std::make_shared<PointCloud<float>>(pc);
  cases.push_back({"naive_knn_k" + std::to_string(b.knn), pc.size(),
                   [knn, cloud] { (void)(*knn)(*cloud); }});
  // First S3DIS stage (two PPConv layers, sampling and grouping) with a
  // one-layer decoder back to the input points.
  for (int r : {32, 48, 64, 96}) {
    NetworkSpec s = NetworkSpec::s3dis();
    s.name = "stage1";
    s.sa.resize(1);
    s.sa[0].ppconv->resolution = r;
    s.fp = {{{32}, std::nullopt}};
    s.sa[0].samples = std::min<std::size_t>(s.sa[0].samples, b.points);
    cases.push_back(network_case("stage1_R" + std::to_string(r), s, cfg.ppconv, b.points, seed));
  }
  if (b.network) {
    NetworkSpec spec = cfg.network_spec();
    cases.push_back(network_case("network_" + spec.name, spec, cfg.ppconv, b.points, seed));
  }
  return cases;
}

std::vector<BenchRow> run_bench(const RunConfig& cfg, std::ostream* log) {
  std::vector<BenchRow> rows;
  for (const auto& c : standard_bench_cases(cfg)) {
    rows.push_back(time_case(c, cfg.bench.warmup, cfg.bench.iterations));
    if (log) {
      *log << rows.back().name << ": median " << rows.back().median_ms << " ms (MAD "
           << rows.back().mad_ms << ")\n";
    }
  }
  if (!cfg.out_dir.empty()) {
    ensure_dir(cfg.out_dir);
    cfg.save(join(cfg.out_dir, "config.json"));
    std::ofstream out(join(cfg.out_dir, "bench.csv"));
    write_bench_csv(out, rows);
  }
  return rows;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "config,warmup,iterations,points,median_ms,mad_ms,points_per_second,times_ms\n";
  for (const auto& r : rows) {
    out << r.name << ',' << r.warmup << ',' << r.iterations << ',' << r.points << ','
        << r.median_ms << ',' << r.mad_ms << ','
        << (r.median_ms > 0 ? static_cast<double>(r.points) / (r.median_ms / 1000.0) : 0.0)
        << ',';
    for (std::size_t i = 0; i < r.times_ms.size(); ++i) out << (i ? ";" : "") << r.times_ms[i];
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Gradient checking

std::vector<GradcheckRow> run_gradcheck(const std::vector<GradCheckUnit>& units) {
  std::vector<GradcheckRow> rows;
  for (const auto& u : units) {
    GradcheckRow row;
    row.unit = u.name;
    row.threshold = u.threshold;
    try {
      const GradCheckResult r = u.run();
      row.max_rel_error = r.max_rel_error;
      row.worst_parameter = r.worst_parameter;
      row.passed = r.checked > 0 && r.max_rel_error < u.threshold;
    } catch (const std::exception& e) {
      row.error = e.what();
      row.max_rel_error = std::numeric_limits<double>::infinity();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_gradcheck_csv(std::ostream& out, const std::vector<GradcheckRow>& rows) {
  out << "unit,max_rel_error,threshold,status,worst_parameter\n";
  for (const auto& r : rows) {
    out << r.unit << ',' << r.max_rel_error << ',' << r.threshold << ','
        << (r.passed ? "pass" : "FAIL") << ',' << (r.error.empty() ? r.worst_parameter : r.error)
        << '\n';
  }
}

// ---------------------------------------------------------------------------
// Ablations

std::vector<std::pair<std::string, RunConfig>> ablation_rows(const RunConfig& base,
                                                             const std::string& grid) {
  std::vector<std::pair<std::string, RunConfig>> rows;
  auto add = [&](std::string label, auto&& apply) {
    RunConfig c = base;
    apply(c.ppconv);
    rows.emplace_back(std::move(label), std::move(c));
  };
  if (grid == "branches") {
    add("no-projection", [](PPConvOptions& o) {
      o.axes.clear();
      o.include_point_branch = true;
    });
    add("no-point", [](PPConvOptions& o) {
      o.axes = parse_axes("xyz");
      o.include_point_branch = false;
    });
    add("both", [](PPConvOptions& o) {
      o.axes = parse_axes("xyz");
      o.include_point_branch = true;
    });
  } else if (grid == "axes") {
    for (const char* a : {"z", "x,z", "x,y,z"}) {
      add(a, [a](PPConvOptions& o) { o.axes = parse_axes(a); });
    }
  } else if (grid == "projection") {
    for (auto m : {ProjectionMethod::average, ProjectionMethod::bilinear,
                   ProjectionMethod::pointnet}) {
      add(to_string(m), [m](PPConvOptions& o) { o.projection = m; });
    }
  } else if (grid == "resolution") {
    for (int r : {32, 48, 64, 96}) {
      add(std::to_string(r), [r](PPConvOptions& o) { o.first_resolution = r; });
    }
  } else if (grid == "conv") {
    for (auto v : {ConvVariant::plain, ConvVariant::residual, ConvVariant::residual_se}) {
      add(to_string(v), [v](PPConvOptions& o) { o.conv = v; });
    }
  } else if (grid == "fusion") {
    for (auto f : {FusionStrategy::concat, FusionStrategy::iwf, FusionStrategy::caf}) {
      add(to_string(f), [f](PPConvOptions& o) { o.fusion = f; });
    }
  } else {
    throw ConfigError("unknown ablation grid '" + grid + "'");
  }
  return rows;
}

std::vector<AblationRow> run_ablate(const RunConfig& cfg, std::ostream* log) {
  std::vector<AblationRow> out;
  for (const auto& grid : cfg.ablate.grids) {
    for (auto& [label, rcfg] : ablation_rows(cfg, grid)) {
      AblationRow row;
      row.grid = grid;
      row.row = label;
      rcfg.out_dir.clear();
      if (cfg.ablate.steps) rcfg.steps = cfg.ablate.steps;
      for (std::size_t s = 0; s < cfg.ablate.seeds; ++s) {
        RunConfig seeded = rcfg;
        seeded.seed = cfg.seed + s;
        try {
          row.miou.push_back(run_train(seeded).best_val_miou);
        } catch (const std::exception& e) {
          ++row.failures;
          row.error = e.what();
        }
      }
      if (!row.miou.empty()) {
        row.mean_miou = std::accumulate(row.miou.begin(), row.miou.end(), 0.0) /
                        static_cast<double>(row.miou.size());
      }
      try {
        const NetworkSpec spec = rcfg.network_spec();
        auto c = network_case(label, spec, rcfg.ppconv, rcfg.block_protocol().points,
                              derive_seed(cfg.seed, kTagBench, 1));
        row.median_forward_ms = time_case(c, cfg.bench.warmup, cfg.bench.iterations).median_ms;
      } catch (const std::exception& e) {
        ++row.failures;
        row.error = e.what();
      }
      if (log) {
        *log << grid << '/' << label << ": mIoU " << row.mean_miou << ", forward "
             << row.median_forward_ms << " ms, failures " << row.failures << '\n';
      }
      out.push_back(std::move(row));
    }
  }
  if (!cfg.out_dir.empty()) {
    ensure_dir(cfg.out_dir);
    cfg.save(join(cfg.out_dir, "config.json"));
    std::ofstream csv(join(cfg.out_dir, "ablation.csv"));
    write_ablation_csv(csv, out);
  }
  return out;
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "grid,row,seeds,failures,mean_miou,std_miou,median_forward_ms,error\n";
  for (const auto& r : rows) {
    double var = 0;
    for (double m : r.miou) var += (m - r.mean_miou) * (m - r.mean_miou);
    const double sd = r.miou.size() > 1 ? std::sqrt(var / static_cast<double>(r.miou.size() - 1))
                                        : 0.0;
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << r.grid << ',' << r.row << ',' << r.miou.size() << ',' << r.failures << ','
        << r.mean_miou << ',' << sd << ',' << r.median_forward_ms << ',' << err << '\n';
  }
}

}  // namespace ppcnn
