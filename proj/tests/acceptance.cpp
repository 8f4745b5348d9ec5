// Acceptance suite: one PASS/FAIL line per criterion, exit code 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "ppcnn/checkpoint.hpp"
#include "ppcnn/run.hpp"

using namespace ppcnn;

namespace {

int failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  if (!ok) ++failures;
}

template <typename F>
void criterion(const std::string& name, F&& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(name, false, std::string("threw: ") + e.what());
  }
}

std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<Vec3> uniform_coords(std::size_t n, std::uint64_t seed, double lo = 0, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<Vec3> out(n);
  for (auto& c : out) c = {d(rng), d(rng), d(rng)};
  return out;
}

Tensor<float> normal_features(std::size_t n, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d;
  Tensor<float> t({n, c});
  for (auto& v : t.storage()) v = d(rng);
  return t;
}

void gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = run_gradcheck(standard_gradcheck_units(0));
  const double secs = seconds_since(t0);
  std::string worst;
  double worst_ratio = 0;
  bool ok = !rows.empty();
  for (const auto& r : rows) {
    ok = ok && r.passed;
    const double ratio = r.max_rel_error / r.threshold;
    if (!r.passed || ratio > worst_ratio) {
      worst_ratio = ratio;
      worst = r.unit + " " + fmt(r.max_rel_error) + (r.error.empty() ? "" : " (" + r.error + ")");
    }
  }
  report("gradient suite", ok && secs < 60,
         std::to_string(rows.size()) + " units, worst " + worst + ", " + fmt(secs) + " s");
}

void backprojection_weights() {
  double lo = 1, hi = 0;
  for (int R : {1, 8, 64}) {
    const auto pts = uniform_coords(10000, static_cast<std::uint64_t>(R), -2, 3);
    const auto gm = compute_grid_mapping(pts, ProjectionAxis::along(Axis::z), R);
    for (std::size_t k = 0; k < pts.size(); ++k) {
      const double w = backprojection_weight(gm, k);
      lo = std::min(lo, w);
      hi = std::max(hi, w);
    }
  }

  // Place probes at an exact cell center and an interior cell corner of an
  // existing mapping; the probes lie inside the bounds, so they do not move them.
  const int R = 8;
  auto pts = uniform_coords(1000, 7);
  const auto base = compute_grid_mapping(pts, ProjectionAxis::along(Axis::z), R);
  const auto& low = base.lower();
  const auto& size = base.cell_size();
  pts.push_back({low[0] + 3.5 * size[0], low[1] + 5.5 * size[1], 0.5});
  pts.push_back({low[0] + 2.0 * size[0], low[1] + 6.0 * size[1], 0.5});
  const auto gm = compute_grid_mapping(pts, ProjectionAxis::along(Axis::z), R);
  const bool same = gm.lower() == base.lower() && gm.cell_size() == base.cell_size();
  const double center = backprojection_weight(gm, 1000);
  const double corner = backprojection_weight(gm, 1001);

  report("backprojection weights",
         lo >= 0 && hi <= 1 && same && std::abs(center - 1) < 1e-7 && std::abs(corner) < 1e-7,
         "range [" + fmt(lo) + ", " + fmt(hi) + "], center " + fmt(center) + ", corner " +
             fmt(corner));
}

void permutation_equivariance() {
  const std::size_t n = 256;
  const auto coords = uniform_coords(n, 11);
  const auto feats = normal_features(n, 6, 12);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(13));
  PointCloud<float> a, b;
  a.coords = coords;
  a.features = feats;
  b.coords.resize(n);
  b.features = Tensor<float>({n, 6});
  for (std::size_t i = 0; i < n; ++i) {
    b.coords[i] = coords[perm[i]];
    for (std::size_t c = 0; c < 6; ++c) b.features.at(i, c) = feats.at(perm[i], c);
  }

  double worst = 0;
  std::string detail;
  for (auto f : {FusionStrategy::concat, FusionStrategy::iwf, FusionStrategy::caf}) {
    PPConvConfig cfg;
    cfg.in_channels = 6;
    cfg.out_channels = 32;
    cfg.resolution = 16;
    cfg.fusion = f;
    ParameterSet<float> ps;
    Rng rng(1);
    PPConv<float> layer(ps, "layer", cfg, rng);
    const TapeOptions train{false, true};
    const auto ya = ppconv_forward(a, layer, train).features;
    const auto yb = ppconv_forward(b, layer, train).features;
    double d = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 32; ++c)
        d = std::max(d, static_cast<double>(std::abs(yb.at(i, c) - ya.at(perm[i], c))));
    worst = std::max(worst, d);
    detail += to_string(f) + " " + fmt(d) + " ";
  }
  report("permutation equivariance", worst < 1e-5, detail + "(float, 256 points)");
}

void empty_cells() {
  // A clustered cloud leaves most cells of a 16 x 16 grid empty.
  auto coords = uniform_coords(300, 21, 0, 0.3);
  coords.push_back({1, 1, 1});
  const auto feats = normal_features(coords.size(), 4, 22);
  auto gm = std::make_shared<const GridMapping>(
      compute_grid_mapping(coords, ProjectionAxis::along(Axis::z), 16));
  ParameterSet<float> ps;
  Rng rng(3);
  auto mlp = Dense<float>::create(ps, "proj", 4 + GridMapping::kAugmentChannels, 8, rng);

  std::size_t empty = 0, nonzero = 0;
  for (auto m : {ProjectionMethod::average, ProjectionMethod::bilinear, ProjectionMethod::pointnet}) {
    Tape<float> tape(TapeOptions{false, true});
    auto fm = project(tape.constant(feats), gm, m, &mlp);
    const auto& v = fm.values.value();
    const std::size_t R = gm->resolution(), C = v.dim(0);
    for (std::size_t cell = 0; cell < gm->cell_count(); ++cell) {
      if (gm->occupied(cell)) continue;
      ++empty;
      for (std::size_t c = 0; c < C; ++c) nonzero += v.at(c, cell / R, cell % R) != 0.0f;
    }
  }
  report("empty cells", empty > 0 && nonzero == 0,
         std::to_string(empty) + " empty cells over 3 methods, " + std::to_string(nonzero) +
             " non-zero values");
}

void fusion_weights() {
  const std::size_t n = 200;
  const auto coords = uniform_coords(n, 31);
  double row_err = 0;
  bool caf_stable = true;
  for (auto f : {FusionStrategy::iwf, FusionStrategy::caf}) {
    PPConvConfig cfg;
    cfg.in_channels = 5;
    cfg.out_channels = 16;
    cfg.resolution = 8;
    cfg.fusion = f;
    ParameterSet<float> ps;
    Rng rng(2);
    PPConv<float> layer(ps, "layer", cfg, rng);
    std::optional<Tensor<float>> first;
    for (std::uint64_t s : {32, 33}) {
      Tape<float> tape(TapeOptions{false, true});
      auto in = layer.branch_outputs(coords, tape.constant(normal_features(n, 5, s)));
      const auto w = layer.fusion_weights(in)->value();
      for (std::size_t r = 0; r < w.dim(0); ++r) {
        double sum = 0;
        for (std::size_t b = 0; b < w.dim(1); ++b) sum += w.at(r, b);
        row_err = std::max(row_err, std::abs(sum - 1));
      }
      if (f == FusionStrategy::caf) {
        if (first) caf_stable = caf_stable && w == *first;
        first = w;
      }
    }
  }
  report("fusion weights", row_err < 1e-6 && caf_stable,
         "max |row sum - 1| " + fmt(row_err) + ", caf weights " +
             (caf_stable ? "unchanged" : "changed") + " under new features");
}

void architecture() {
  bool ok = true;
  std::string detail;
  auto trace_of = [](const std::string& name, std::size_t points) {
    Network<float> net(NetworkSpec::named(name), PPConvOptions{}, 1);
    const auto coords = uniform_coords(points, 2);
    Tape<float> tape(TapeOptions{false, false});
    std::vector<StageTrace> trace;
    net.forward(tape, coords, normal_features(points, net.spec().in_channels, 3), &trace);
    return trace;
  };

  const auto s = trace_of("s3dis", 2048);
  const std::vector<std::size_t> s_points{1024, 256, 64, 16, 64, 256, 1024, 2048};
  const std::vector<std::vector<int>> s_res{{64, 64}, {32, 32, 32}, {16, 16, 16}, {},
                                            {8},      {16},         {32, 32},     {64}};
  ok = ok && s.size() == 8;
  for (std::size_t i = 0; ok && i < 8; ++i)
    ok = s[i].points == s_points[i] && s[i].resolutions == s_res[i];
  detail += "s3dis " + std::string(ok ? "ok" : "mismatch");

  const auto p = trace_of("shapenet", 1024);
  const std::vector<std::size_t> p_points{512, 128, 32, 16, 32, 128, 512, 1024};
  bool pok = p.size() == 8;
  for (std::size_t i = 0; pok && i < 8; ++i) pok = p[i].points == p_points[i];
  for (std::size_t i = 0; pok && i < 3; ++i) pok = !p[i].resolutions.empty();
  pok = pok && p[3].resolutions.empty();
  detail += ", shapenet " + std::string(pok ? "ok" : "mismatch");
  report("architecture ladders", ok && pok, detail);
}

void overfit() {
  RunConfig cfg;
  cfg.out_dir.clear();
  cfg.data.val_scenes = 0;
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run_train(cfg);
  const double secs = seconds_since(t0);
  report("overfit", r.final_step_accuracy >= 0.95 && r.untrained_accuracy < 0.7 && secs < 600,
         "final training accuracy " + fmt(r.final_step_accuracy) + " (eval-mode on the pool " +
             fmt(r.train_accuracy) + "), untrained " + fmt(r.untrained_accuracy) + ", " +
             fmt(secs) + " s");
}

std::map<std::string, BenchRow> bench_rows() {
  RunConfig cfg;
  cfg.bench.network = false;
  std::map<std::string, BenchRow> rows;
  for (const auto& c : standard_bench_cases(cfg)) {
    if (c.name.rfind("ppconv_axes_", 0) != 0 && c.name.rfind("naive_knn", 0) != 0 &&
        c.name != "ppconv_R64")
      continue;
    rows[c.name] = time_case(c, cfg.bench.warmup, cfg.bench.iterations);
  }
  return rows;
}

void ablation(const std::map<std::string, BenchRow>& bench) {
  RunConfig cfg;
  cfg.ablate.grids = {"branches"};
  cfg.ablate.seeds = 5;
  cfg.out_dir.clear();
  const auto rows = run_ablate(cfg);
  std::map<std::string, double> m;
  std::size_t failed = 0;
  for (const auto& r : rows) {
    m[r.row] = r.mean_miou;
    failed += r.failures;
  }
  const double both = m["both"];
  const bool quality = failed == 0 && both >= m["no-projection"] - 0.01 &&
                       both >= m["no-point"] - 0.01;

  const double z = bench.at("ppconv_axes_z").median_ms;
  const double xz = bench.at("ppconv_axes_xz").median_ms;
  const double xyz = bench.at("ppconv_axes_xyz").median_ms;
  const bool order = z < xz && xz < xyz;
  report("ablation ordering", quality && order,
         "mIoU both " + fmt(both) + ", no-projection " + fmt(m["no-projection"]) + ", no-point " +
             fmt(m["no-point"]) + " (5 seeds); forward ms z " + fmt(z) + " < x,z " + fmt(xz) +
             " < x,y,z " + fmt(xyz));
}

void efficiency(const std::map<std::string, BenchRow>& bench) {
  const auto& grid = bench.at("ppconv_R64");
  const auto& knn = bench.at("naive_knn_k32");
  report("efficiency", grid.median_ms < knn.median_ms,
         "grid aggregation " + fmt(grid.median_ms) + " ms vs naive 32-NN " + fmt(knn.median_ms) +
             " ms at N=8192, C=32");
}

void checkpoint() {
  Network<float> net(NetworkSpec::desk(), PPConvOptions{}, 4);
  for (auto& [name, p] : net.params()) {
    if (!p.trainable) p.value.fill(name.find("mean") != std::string::npos ? 0.2f : 1.3f);
  }
  std::stringstream buf;
  save_checkpoint(buf, net);
  const std::string bytes = buf.str();
  const auto loaded = load_checkpoint(buf);

  auto scene = generate_synthetic_scene(5, 2, 4000);
  std::mt19937_64 rng(6);
  BlockProtocol protocol = BlockProtocol::pv();
  protocol.points = 512;
  const auto block = sample_block(scene, protocol, rng);
  const bool identical = block_logits(net, block) == block_logits(loaded, block);

  std::string bad = bytes;
  bad[1] ^= 0x20;
  std::stringstream corrupt(bad);
  bool rejected = false;
  try {
    load_checkpoint(corrupt);
  } catch (const FormatError&) {
    rejected = true;
  }
  report("checkpoint round trip", identical && rejected,
         std::string(identical ? "bit-identical" : "different") + " eval logits, corrupted magic " +
             (rejected ? "rejected" : "accepted"));
}

void loss_and_miou() {
  Tape<float> tape(TapeOptions{false, false});
  const std::vector<int> labels{0, 3, 7, 12};
  const double loss = cross_entropy_loss(tape.constant(Tensor<float>({4, 13})), labels).value()[0];
  const double m = compute_miou(std::vector<int>{0, 1, 1, 1}, std::vector<int>{0, 0, 1, 1}, 2).mean;
  report("loss and mIoU sanity",
         std::abs(loss - std::log(13.0)) < 1e-4 && std::abs(m - 0.5833) < 1e-4,
         "uniform 13-class loss " + fmt(loss) + ", mIoU " + fmt(m));
}

}  // namespace

int main() {
  criterion("gradient suite", gradient_suite);
  criterion("backprojection weights", backprojection_weights);
  criterion("permutation equivariance", permutation_equivariance);
  criterion("empty cells", empty_cells);
  criterion("fusion weights", fusion_weights);
  criterion("architecture ladders", architecture);
  criterion("checkpoint round trip", checkpoint);
  criterion("loss and mIoU sanity", loss_and_miou);
  criterion("overfit", overfit);
  std::map<std::string, BenchRow> bench;
  try {
    bench = bench_rows();
  } catch (const std::exception& e) {
    std::cout << "bench failed: " << e.what() << std::endl;
  }
  criterion("ablation ordering", [&] { ablation(bench); });
  criterion("efficiency", [&] { efficiency(bench); });
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed")
            << std::endl;
  return failures ? 1 : 0;
}
