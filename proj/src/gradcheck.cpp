#include "ppcnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>

#include "ppcnn/network.hpp"

namespace ppcnn {

template <typename T>
Var<T> probe_loss(const Var<T>& x, Tensor<T> r) {
  if (r.shape() != x.value().shape()) {
    throw DimensionError("probe shape " + shape_str(r.shape()) + " vs " +
                         shape_str(x.value().shape()));
  }
  T total = 0;
  for (std::size_t i = 0; i < r.size(); ++i) total += x.value()[i] * r[i];
  auto rp = std::make_shared<const Tensor<T>>(std::move(r));
  return x.tape().record(Tensor<T>({1}, std::vector<T>{total}), {&x},
                         [x, rp](const Tensor<T>& g, const Tensor<T>&) {
                           Tensor<T> dx(rp->shape());
                           for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = (*rp)[i] * g[0];
                           x.node()->accumulate(dx);
                         });
}

template Var<float> probe_loss(const Var<float>&, Tensor<float>);
template Var<double> probe_loss(const Var<double>&, Tensor<double>);

namespace {

double evaluate(const LossFn& f, const TapeOptions& base) {
  TapeOptions opt = base;
  opt.record = false;
  Tape<double> tape(opt);
  Var<double> loss = f(tape);
  if (loss.value().size() != 1) throw DimensionError("loss must be a scalar");
  const double v = loss.value()[0];
  if (!std::isfinite(v)) throw NumericError("non-finite loss during gradient check");
  return v;
}

std::vector<std::size_t> pick_entries(std::size_t size, std::size_t limit, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (limit == 0 || size <= limit) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckResult grad_check(const LossFn& f, ParameterSet<double>& params,
                           const GradCheckOptions& options) {
  params.zero_grad();
  {
    TapeOptions opt = options.tape;
    opt.record = true;
    Tape<double> tape(opt);
    Var<double> loss = f(tape);
    if (loss.value().size() != 1) throw DimensionError("loss must be a scalar");
    if (!std::isfinite(loss.value()[0])) {
      throw NumericError("non-finite loss during gradient check");
    }
    tape.backward(loss);
  }
  GradCheckResult res;
  std::mt19937_64 rng(options.seed);
  const double h = options.step;
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    for (std::size_t i : pick_entries(p.value.size(), options.max_entries, rng)) {
      const double orig = p.value[i];
      p.value[i] = orig + h;
      const double up = evaluate(f, options.tape);
      p.value[i] = orig - h;
      const double down = evaluate(f, options.tape);
      p.value[i] = orig;
      const double fd = (up - down) / (2 * h);
      const double err = std::abs(p.grad[i] - fd) / std::max(1.0, std::abs(fd));
      ++res.checked;
      if (res.worst_parameter.empty() || err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_parameter = name;
        res.worst_index = i;
      }
    }
  }
  return res;
}

namespace {

using D = double;

Tensor<D> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<D> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.storage()) v = dist(rng);
  return t;
}

// Values bounded away from zero so activation kinks stay out of reach of h.
Tensor<D> off_zero_tensor(Shape shape, std::mt19937_64& rng) {
  Tensor<D> t = random_tensor(std::move(shape), rng, 0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.storage()) {
    if (sign(rng)) v = -v;
  }
  return t;
}

std::vector<Vec3> random_coords(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<Vec3> c(n);
  for (auto& p : c) p = {dist(rng), dist(rng), dist(rng)};
  return c;
}

// Shared state of one unit: the parameters under test plus whatever the
// loss closure needs to keep alive.
struct UnitState {
  ParameterSet<D> ps;
  std::mt19937_64 rng;
  explicit UnitState(std::uint64_t seed) : rng(seed) {}
};

GradCheckUnit make_unit(std::string name, double threshold, std::uint64_t seed,
                        std::function<LossFn(UnitState&)> build, std::size_t max_entries = 0,
                        TapeOptions tape = {}) {
  return {std::move(name), threshold, [=] {
            auto st = std::make_shared<UnitState>(seed);
            LossFn f = build(*st);
            GradCheckOptions opt;
            opt.max_entries = max_entries;
            opt.seed = seed;
            opt.tape = tape;
            return grad_check(f, st->ps, opt);
          }};
}

Var<D> param(Tape<D>& t, UnitState& st, const std::string& name) {
  return t.parameter(st.ps.at(name));
}

}  // namespace

std::vector<GradCheckUnit> standard_gradcheck_units(std::uint64_t seed) {
  std::vector<GradCheckUnit> units;
  std::uint64_t s = seed;

  units.push_back(make_unit("kernel/linear", 1e-4, ++s, [](UnitState& st) {
    st.ps.create("x", random_tensor({4, 3}, st.rng));
    st.ps.create("w", random_tensor({3, 5}, st.rng));
    st.ps.create("b", random_tensor({5}, st.rng));
    auto r = random_tensor({4, 5}, st.rng);
    return LossFn([&st, r](Tape<D>& t) {
      return probe_loss(ops::linear(param(t, st, "x"), param(t, st, "w"), param(t, st, "b")), r);
    });
  }));

  units.push_back(make_unit("kernel/conv2d", 1e-4, ++s, [](UnitState& st) {
    st.ps.create("x", random_tensor({2, 4, 5}, st.rng));
    st.ps.create("k", random_tensor({3, 2, 3, 3}, st.rng));
    st.ps.create("b", random_tensor({3}, st.rng));
    auto r = random_tensor({3, 4, 5}, st.rng);
    return LossFn([&st, r](Tape<D>& t) {
      return probe_loss(ops::conv2d(param(t, st, "x"), param(t, st, "k"), param(t, st, "b")), r);
    });
  }));

  for (bool planar : {false, true}) {
    units.push_back(make_unit(planar ? "kernel/batchnorm_planar" : "kernel/batchnorm", 1e-4, ++s,
                              [planar](UnitState& st) {
      Shape shape = planar ? Shape{3, 3, 4} : Shape{8, 4};
      const std::size_t c = planar ? 3 : 4;
      st.ps.create("x", random_tensor(shape, st.rng));
      st.ps.create("gamma", random_tensor({c}, st.rng, 0.5, 1.5));
      st.ps.create("beta", random_tensor({c}, st.rng));
      st.ps.create("rm", Tensor<D>({c}), false);
      st.ps.create("rv", Tensor<D>({c}, 1.0), false);
      auto r = random_tensor(shape, st.rng);
      return LossFn([&st, r](Tape<D>& t) {
        return probe_loss(ops::batchnorm(param(t, st, "x"), param(t, st, "gamma"),
                                         param(t, st, "beta"), st.ps.at("rm").value,
                                         st.ps.at("rv").value),
                          r);
      });
    }));
  }

  for (auto [name, act] : {std::pair{"kernel/relu", kernels::Activation::relu},
                           std::pair{"kernel/leaky_relu", kernels::Activation::leaky_relu},
                           std::pair{"kernel/sigmoid", kernels::Activation::sigmoid}}) {
    units.push_back(make_unit(name, 1e-4, ++s, [act](UnitState& st) {
      st.ps.create("x", off_zero_tensor({4, 5}, st.rng));
      auto r = random_tensor({4, 5}, st.rng);
      return LossFn([&st, r, act](Tape<D>& t) {
        return probe_loss(ops::activation(act, param(t, st, "x")), r);
      });
    }));
  }

  units.push_back(make_unit("kernel/softmax_rows", 1e-4, ++s, [](UnitState& st) {
    st.ps.create("x", random_tensor({4, 5}, st.rng, -2, 2));
    auto r = random_tensor({4, 5}, st.rng);
    return LossFn([&st, r](Tape<D>& t) {
      return probe_loss(ops::softmax_rows(param(t, st, "x")), r);
    });
  }));

  units.push_back(make_unit("kernel/segmented_max", 1e-4, ++s, [](UnitState& st) {
    st.ps.create("x", random_tensor({10, 3}, st.rng));
    auto ids = std::make_shared<const std::vector<std::int64_t>>(
        std::vector<std::int64_t>{0, 2, 1, 0, 2, 2, 1, 0, 0, 1});  // segment 3 stays empty
    auto r = random_tensor({4, 3}, st.rng);
    return LossFn([&st, r, ids](Tape<D>& t) {
      return probe_loss(ops::segmented_max(param(t, st, "x"), ids, 4), r);
    });
  }));

  units.push_back(make_unit("kernel/cross_entropy", 1e-4, ++s, [](UnitState& st) {
    st.ps.create("x", random_tensor({6, 5}, st.rng, -2, 2));
    std::vector<int> labels{0, 4, 2, 2, 1, 3};
    return LossFn([&st, labels](Tape<D>& t) {
      return ops::cross_entropy(param(t, st, "x"), labels);
    });
  }));

  units.push_back(make_unit("kernel/structural", 1e-4, ++s, [](UnitState& st) {
    st.ps.create("a", random_tensor({5, 2}, st.rng));
    st.ps.create("b", random_tensor({5, 3}, st.rng));
    st.ps.create("g", random_tensor({1, 5}, st.rng));
    auto idx = std::make_shared<const std::vector<std::size_t>>(
        std::vector<std::size_t>{4, 0, 0, 2, 3, 1});
    auto pattern = std::make_shared<const std::vector<ops::SparseEntry>>(
        std::vector<ops::SparseEntry>{{0, 1, 0.5}, {0, 2, 0.25}, {1, 5, 2.0}, {3, 0, -1.0}});
    auto r = random_tensor({5, 4}, st.rng);
    return LossFn([&st, idx, pattern, r](Tape<D>& t) {
      Var<D> cat = ops::concat_cols<D>({param(t, st, "a"), param(t, st, "b")});  // 5 x 5
      Var<D> sum = ops::add_n<D>({cat, ops::broadcast_rows(param(t, st, "g"), 5),
                                  ops::scale(cat, 0.5)});
      Var<D> gathered = ops::gather_rows(sum, idx);                   // 6 x 5
      Var<D> spread = ops::sparse_rows(gathered, pattern, 4);          // 4 x 5
      Var<D> tr = ops::reshape(ops::transpose(spread), Shape{5, 4});  // 5 x 4
      return probe_loss(ops::add(tr, tr), r);
    });
  }));

  units.push_back(make_unit("kernel/channel_ops", 1e-4, ++s, [](UnitState& st) {
    st.ps.create("x", random_tensor({3, 4, 4}, st.rng));
    st.ps.create("w", random_tensor({3, 3}, st.rng));
    st.ps.create("b", random_tensor({3}, st.rng));
    st.ps.create("f0", random_tensor({5, 2}, st.rng));
    st.ps.create("f1", random_tensor({5, 2}, st.rng));
    st.ps.create("wts", random_tensor({5, 2}, st.rng));
    auto r1 = random_tensor({3, 4, 4}, st.rng);
    auto r2 = random_tensor({5, 2}, st.rng);
    return LossFn([&st, r1, r2](Tape<D>& t) {
      Var<D> x = param(t, st, "x");
      Var<D> s =
          ops::sigmoid(ops::linear(ops::global_avg_pool(x), param(t, st, "w"), param(t, st, "b")));
      Var<D> a = probe_loss(ops::channel_scale(x, s), r1);
      Var<D> b = probe_loss(
          ops::weighted_sum(param(t, st, "wts"), {param(t, st, "f0"), param(t, st, "f1")}), r2);
      return ops::add(a, b);
    });
  }));

  // Projection chains: project -> SE residual block -> backproject.
  for (auto method :
       {ProjectionMethod::average, ProjectionMethod::bilinear, ProjectionMethod::pointnet}) {
    units.push_back(make_unit("projection/" + to_string(method), 1e-4, ++s,
                              [method](UnitState& st) {
      auto coords = std::make_shared<std::vector<Vec3>>(random_coords(24, st.rng));
      auto gm = std::make_shared<const GridMapping>(
          compute_grid_mapping(*coords, ProjectionAxis::along(Axis::z), 4));
      st.ps.create("x", random_tensor({24, 4}, st.rng));
      const std::size_t in = method == ProjectionMethod::pointnet
                                 ? 4 + GridMapping::kAugmentChannels
                                 : 4;
      auto mlp = std::make_shared<Dense<D>>(Dense<D>::create(st.ps, "mlp", in, 4, st.rng));
      auto block = std::make_shared<SEResBlockParams<D>>(
          SEResBlockParams<D>::create(st.ps, "block", 4, 4, st.rng));
      auto r = random_tensor({24, 4}, st.rng);
      return LossFn([&st, gm, mlp, block, method, r](Tape<D>& t) {
        Var<D> x = param(t, st, "x");
        FeatureMap2D<D> fm = method == ProjectionMethod::pointnet
                                 ? project(x, gm, method, mlp.get())
                                 : project((*mlp)(x), gm, method);
        fm = se_res_block(fm, *block, ConvVariant::residual_se);
        return probe_loss(backproject(fm, *gm, BackprojectionMode::distance_weighted), r);
      });
    }));
  }

  for (auto mode : {BackprojectionMode::nearest, BackprojectionMode::distance_weighted}) {
    units.push_back(make_unit("backprojection/" + to_string(mode), 1e-4, ++s,
                              [mode](UnitState& st) {
      auto coords = random_coords(20, st.rng);
      auto gm = std::make_shared<const GridMapping>(
          compute_grid_mapping(coords, ProjectionAxis::along(Axis::y), 3));
      st.ps.create("x", random_tensor({20, 3}, st.rng));
      auto r = random_tensor({20, 3}, st.rng);
      return LossFn([&st, gm, mode, r](Tape<D>& t) {
        auto fm = project(param(t, st, "x"), gm, ProjectionMethod::average);
        return probe_loss(backproject(fm, *gm, mode), r);
      });
    }));
  }

  for (auto variant : {ConvVariant::plain, ConvVariant::residual, ConvVariant::residual_se}) {
    units.push_back(make_unit("conv2dblock/" + to_string(variant), 1e-4, ++s,
                              [variant](UnitState& st) {
      st.ps.create("x", random_tensor({4, 5, 5}, st.rng));
      auto block = std::make_shared<SEResBlockParams<D>>(
          SEResBlockParams<D>::create(st.ps, "block", 4, 4, st.rng));
      auto r = random_tensor({4, 5, 5}, st.rng);
      return LossFn([&st, block, variant, r](Tape<D>& t) {
        return probe_loss(se_res_block(param(t, st, "x"), *block, variant), r);
      });
    }));
  }

  for (auto strategy : {FusionStrategy::concat, FusionStrategy::iwf, FusionStrategy::caf}) {
    units.push_back(make_unit("fusion/" + to_string(strategy), 1e-4, ++s,
                              [strategy](UnitState& st) {
      const std::size_t n = 12, half = 4;
      auto coords = std::make_shared<std::vector<Vec3>>(random_coords(n, st.rng));
      st.ps.create("p", random_tensor({n, half}, st.rng));
      st.ps.create("b0", random_tensor({n, half}, st.rng));
      st.ps.create("b1", random_tensor({n, half}, st.rng));
      auto concat = std::make_shared<ConcatFusionParams<D>>();
      auto iwf = std::make_shared<IwfParams<D>>();
      auto caf = std::make_shared<CafParams<D>>();
      switch (strategy) {
        case FusionStrategy::concat:
          *concat = ConcatFusionParams<D>::create(st.ps, "fusion", 2 * half, true, true, st.rng);
          break;
        case FusionStrategy::iwf:
          *iwf = IwfParams<D>::create(st.ps, "fusion", 2 * half, 3, st.rng);
          break;
        case FusionStrategy::caf:
          *caf = CafParams<D>::create(st.ps, "fusion", 2 * half, 3, st.rng);
          break;
      }
      auto r = random_tensor({n, 2 * half}, st.rng);
      return LossFn([&st, coords, concat, iwf, caf, strategy, r](Tape<D>& t) {
        FusionInputs<D> in;
        in.point_feature = param(t, st, "p");
        in.branch_features = {param(t, st, "b0"), param(t, st, "b1")};
        in.coords = coords.get();
        Var<D> out = strategy == FusionStrategy::concat ? fuse_concat(in, *concat)
                     : strategy == FusionStrategy::iwf  ? fuse_iwf(in, *iwf).features
                                                        : fuse_caf(in, *caf).features;
        return probe_loss(out, r);
      });
    }, 40));
  }

  for (auto strategy : {FusionStrategy::concat, FusionStrategy::iwf, FusionStrategy::caf}) {
    units.push_back(make_unit("ppconv/" + to_string(strategy), 1e-4, ++s,
                              [strategy](UnitState& st) {
      const std::size_t n = 32;
      auto coords = std::make_shared<std::vector<Vec3>>(random_coords(n, st.rng));
      st.ps.create("x", random_tensor({n, 3}, st.rng));
      PPConvConfig cfg;
      cfg.in_channels = 3;
      cfg.out_channels = 8;
      cfg.resolution = 4;
      cfg.fusion = strategy;
      auto layer = std::make_shared<PPConv<D>>(st.ps, "layer", cfg, st.rng);
      auto r = random_tensor({n, 8}, st.rng);
      return LossFn([&st, coords, layer, r](Tape<D>& t) {
        return probe_loss(layer->forward(*coords, param(t, st, "x")), r);
      });
    }, 12));
  }

  units.push_back(GradCheckUnit{"network/toy", 1e-3, [seed = ++s] {
    std::mt19937_64 rng(seed);
    NetworkSpec spec;
    spec.name = "toy";
    spec.in_channels = 3;
    spec.class_count = 3;
    spec.sa = {{PPConvStageSpec{8, 1, 4}, 12, 0.5, 6, {8, 16}},
               {std::nullopt, 4, 1.0, 4, {16, 16}}};
    spec.fp = {{{16}, PPConvStageSpec{8, 1, 2}}, {{8}, PPConvStageSpec{8, 1, 4}}};
    auto net = std::make_shared<Network<D>>(spec, PPConvOptions{}, seed);
    const std::size_t n = 32;
    auto coords = std::make_shared<std::vector<Vec3>>(random_coords(n, rng));
    auto feats = std::make_shared<Tensor<D>>(random_tensor({n, 3}, rng));
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 3);
    LossFn f = [net, coords, feats, labels](Tape<D>& t) {
      return cross_entropy_loss(net->forward(t, *coords, *feats), labels);
    };
    GradCheckOptions opt;
    opt.max_entries = 4;
    opt.seed = seed;
    return grad_check(f, net->params(), opt);
  }});

  return units;
}

}  // namespace ppcnn
