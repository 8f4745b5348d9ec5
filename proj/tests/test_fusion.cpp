#include <doctest.h>

#include <random>

#include "ppcnn/fusion.hpp"

using namespace ppcnn;

namespace {

Tensor<double> random_features(std::size_t n, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  Tensor<double> t({n, c});
  for (auto& v : t.storage()) v = d(rng);
  return t;
}

std::vector<Vec3> random_coords(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<Vec3> out(n);
  for (auto& c : out) c = {d(rng), d(rng), d(rng)};
  return out;
}

FusionInputs<double> inputs(Tape<double>& tape, std::size_t n, std::size_t half,
                            std::size_t branches, std::uint64_t seed) {
  FusionInputs<double> in;
  in.point_feature = tape.leaf(random_features(n, half, seed));
  for (std::size_t b = 0; b < branches; ++b)
    in.branch_features.push_back(tape.leaf(random_features(n, half, seed + 1 + b)));
  return in;
}

void check_rows_normalized(const Tensor<double>& w) {
  for (std::size_t r = 0; r < w.dim(0); ++r) {
    double s = 0;
    for (std::size_t b = 0; b < w.dim(1); ++b) {
      CHECK(w.at(r, b) > 0);
      CHECK(w.at(r, b) < 1);
      s += w.at(r, b);
    }
    CHECK(std::abs(s - 1) < 1e-6);
  }
}

}  // namespace

TEST_SUITE("concat") {
  TEST_CASE("zero branch equals the MLP on [point | 0]") {
    ParameterSet<double> ps;
    Rng rng(1);
    auto p = ConcatFusionParams<double>::create(ps, "f", 8, true, true, rng);
    Tape<double> tape;
    FusionInputs<double> in;
    auto pf = random_features(10, 4, 2);
    in.point_feature = tape.leaf(pf);
    in.branch_features.push_back(tape.leaf(Tensor<double>({10, 4})));
    auto y = fuse_concat(in, p).value();

    Tensor<double> joined({10, 8});
    for (std::size_t n = 0; n < 10; ++n)
      for (std::size_t c = 0; c < 4; ++c) joined.at(n, c) = pf.at(n, c);
    CHECK(p.mlp(tape.leaf(joined)).value() == y);
  }

  TEST_CASE("cancelling branches match a single zero branch") {
    ParameterSet<double> ps;
    Rng rng(3);
    auto p = ConcatFusionParams<double>::create(ps, "f", 6, true, true, rng);
    auto pf = random_features(12, 3, 4);
    auto a = random_features(12, 3, 5);
    auto b = random_features(12, 3, 6);
    Tensor<double> c({12, 3});
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = -a[i] - b[i];

    Tape<double> tape;
    FusionInputs<double> three;
    three.point_feature = tape.leaf(pf);
    three.branch_features = {tape.leaf(a), tape.leaf(b), tape.leaf(c)};
    FusionInputs<double> one;
    one.point_feature = tape.leaf(pf);
    one.branch_features = {tape.leaf(Tensor<double>({12, 3}))};
    auto y3 = fuse_concat(three, p).value();
    auto y1 = fuse_concat(one, p).value();
    for (std::size_t i = 0; i < y1.size(); ++i) CHECK(std::abs(y3[i] - y1[i]) < 1e-12);
  }

  TEST_CASE("identity parameters reproduce the raw concatenation") {
    ParameterSet<double> ps;
    Rng rng(7);
    auto p = ConcatFusionParams<double>::create(ps, "f", 4, true, true, rng);
    p.mlp.linear.weight->value.fill(0);
    for (std::size_t i = 0; i < 4; ++i) p.mlp.linear.weight->value.at(i, i) = 1;
    // Eval mode with unit running variance leaves values scaled by 1/sqrt(1+eps).
    Tape<double> tape(TapeOptions{true, false});
    FusionInputs<double> in;
    auto pf = Tensor<double>::matrix({{1, 2}, {3, 0.5}});
    auto bf = Tensor<double>::matrix({{0.25, 4}, {0, 1}});
    in.point_feature = tape.leaf(pf);
    in.branch_features = {tape.leaf(bf)};
    auto y = fuse_concat(in, p).value();
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 2; ++c) {
        CHECK(y.at(n, c) == doctest::Approx(pf.at(n, c)).epsilon(1e-5));
        CHECK(y.at(n, c + 2) == doctest::Approx(bf.at(n, c)).epsilon(1e-5));
      }
  }

  TEST_CASE("branches only: three projection features are added then lifted") {
    ParameterSet<double> ps;
    Rng rng(8);
    auto p = ConcatFusionParams<double>::create(ps, "f", 8, false, true, rng);
    CHECK(p.mlp.linear.in() == 4);
    Tape<double> tape;
    auto in = inputs(tape, 6, 4, 3, 9);
    in.point_feature.reset();
    auto y = fuse_concat(in, p).value();
    auto summed = ops::add_n(in.branch_features);
    CHECK(p.mlp(summed).value() == y);
  }

  TEST_CASE("channel convention violations") {
    ParameterSet<double> ps;
    Rng rng(0);
    CHECK_THROWS_AS(ConcatFusionParams<double>::create(ps, "odd", 5, true, true, rng),
                    ConfigError);
    auto p = ConcatFusionParams<double>::create(ps, "f", 8, true, true, rng);
    Tape<double> tape;
    auto in = inputs(tape, 4, 3, 1, 1);
    CHECK_THROWS_AS(fuse_concat(in, p), ConfigError);
  }
}

TEST_SUITE("iwf") {
  TEST_CASE("zero scorers give uniform weights and the plain average") {
    ParameterSet<double> ps;
    Rng rng(1);
    auto p = IwfParams<double>::create(ps, "f", 6, 4, rng);
    for (auto& s : p.scorers) s.weight->value.fill(0);
    Tape<double> tape;
    auto in = inputs(tape, 9, 3, 3, 2);
    auto out = fuse_iwf(in, p);
    for (double w : out.weights->value().storage()) CHECK(w == doctest::Approx(0.25));

    auto feats = in.features();
    Tensor<double> avg({9, 3});
    for (const auto& f : feats)
      for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += f.value()[i] / 4;
    auto lifted = p.lift(tape.leaf(avg)).value();
    for (std::size_t i = 0; i < lifted.size(); ++i)
      CHECK(std::abs(out.features.value()[i] - lifted[i]) < 1e-12);
  }

  TEST_CASE("one-hot weights select the lifted point feature") {
    ParameterSet<double> ps;
    Rng rng(2);
    auto p = IwfParams<double>::create(ps, "f", 4, 2, rng);
    Tape<double> tape;
    auto in = inputs(tape, 5, 2, 1, 3);
    Tensor<double> w({5, 2});
    for (std::size_t n = 0; n < 5; ++n) w.at(n, 0) = 1;
    auto y = p.lift(ops::weighted_sum(tape.leaf(w), in.features())).value();
    CHECK(y == p.lift(*in.point_feature).value());
  }

  TEST_CASE("weighted sum matches a per-point loop and rows are normalized") {
    ParameterSet<double> ps;
    Rng rng(4);
    auto p = IwfParams<double>::create(ps, "f", 8, 4, rng);
    Tape<double> tape;
    auto in = inputs(tape, 20, 4, 3, 5);
    auto w = iwf_weights(in, p).value();
    check_rows_normalized(w);

    // Scores: sigmoid(f_b W_b + c_b) summed over b, then a row softmax.
    const auto feats = in.features();
    for (std::size_t n = 0; n < 20; ++n) {
      double score[4] = {0, 0, 0, 0};
      for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t j = 0; j < 4; ++j) {
          double z = p.scorers[b].bias->value[j];
          for (std::size_t c = 0; c < 4; ++c)
            z += feats[b].value().at(n, c) * p.scorers[b].weight->value.at(c, j);
          score[j] += 1 / (1 + std::exp(-z));
        }
      double total = 0;
      for (double s : score) total += std::exp(s);
      for (std::size_t j = 0; j < 4; ++j)
        CHECK(std::abs(w.at(n, j) - std::exp(score[j]) / total) < 1e-12);
    }

    auto mixed = ops::weighted_sum(tape.leaf(w), feats).value();
    for (std::size_t n = 0; n < 20; ++n)
      for (std::size_t c = 0; c < 4; ++c) {
        double expect = 0;
        for (std::size_t b = 0; b < 4; ++b) expect += w.at(n, b) * feats[b].value().at(n, c);
        CHECK(std::abs(mixed.at(n, c) - expect) < 1e-12);
      }
  }

  TEST_CASE("feature count must match the scorers") {
    ParameterSet<double> ps;
    Rng rng(4);
    auto p = IwfParams<double>::create(ps, "f", 8, 3, rng);
    Tape<double> tape;
    CHECK_THROWS_AS(iwf_weights(inputs(tape, 4, 4, 3, 1), p), ConfigError);
  }
}

TEST_SUITE("caf") {
  TEST_CASE("duplicated coordinates get identical weight rows") {
    ParameterSet<double> ps;
    Rng rng(1);
    auto p = CafParams<double>::create(ps, "f", 6, 3, rng);
    auto coords = random_coords(10, 2);
    coords.insert(coords.end(), coords.begin(), coords.end());
    Tape<double> tape;
    auto w = caf_weights(tape, coords, p).value();
    for (std::size_t n = 0; n < 10; ++n)
      for (std::size_t b = 0; b < 3; ++b) CHECK(w.at(n, b) == w.at(n + 10, b));
  }

  TEST_CASE("zeroed head gives uniform weights") {
    ParameterSet<double> ps;
    Rng rng(3);
    auto p = CafParams<double>::create(ps, "f", 6, 4, rng);
    p.head2.weight->value.fill(0);
    Tape<double> tape;
    auto w = caf_weights(tape, random_coords(7, 1), p).value();
    for (double v : w.storage()) CHECK(v == doctest::Approx(0.25));
  }

  TEST_CASE("permuting points permutes the output rows") {
    ParameterSet<double> ps;
    Rng rng(5);
    auto p = CafParams<double>::create(ps, "f", 8, 4, rng);
    auto coords = random_coords(30, 6);
    Tape<double> tape;
    auto in = inputs(tape, 30, 4, 3, 7);
    in.coords = &coords;
    auto base = fuse_caf(in, p);

    std::vector<std::size_t> perm(30);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(8));
    std::vector<Vec3> pc(30);
    for (std::size_t i = 0; i < 30; ++i) pc[i] = coords[perm[i]];
    auto permute = [&](const Var<double>& v) {
      Tensor<double> t(v.value().shape());
      const std::size_t c = t.dim(1);
      for (std::size_t i = 0; i < 30; ++i)
        for (std::size_t j = 0; j < c; ++j) t.at(i, j) = v.value().at(perm[i], j);
      return tape.leaf(t);
    };
    FusionInputs<double> pin;
    pin.point_feature = permute(*in.point_feature);
    for (const auto& b : in.branch_features) pin.branch_features.push_back(permute(b));
    pin.coords = &pc;
    auto moved = fuse_caf(pin, p);
    for (std::size_t i = 0; i < 30; ++i)
      for (std::size_t j = 0; j < 8; ++j)
        CHECK(std::abs(moved.features.value().at(i, j) - base.features.value().at(perm[i], j)) <
              1e-12);
  }

  TEST_CASE("weights depend only on coordinates") {
    ParameterSet<double> ps;
    Rng rng(9);
    auto p = CafParams<double>::create(ps, "f", 8, 3, rng);
    auto coords = random_coords(25, 10);
    Tape<double> tape;
    auto a = inputs(tape, 25, 4, 2, 11);
    auto b = inputs(tape, 25, 4, 2, 99);
    a.coords = b.coords = &coords;
    auto wa = fuse_caf(a, p).weights->value();
    auto wb = fuse_caf(b, p).weights->value();
    CHECK(wa == wb);
    check_rows_normalized(wa);
  }

  TEST_CASE("coordinates are required") {
    ParameterSet<double> ps;
    Rng rng(0);
    auto p = CafParams<double>::create(ps, "f", 4, 2, rng);
    Tape<double> tape;
    CHECK_THROWS_AS(fuse_caf(inputs(tape, 3, 2, 1, 1), p), ConfigError);
  }
}

TEST_CASE("all strategies emit N x C_out") {
  ParameterSet<double> ps;
  Rng rng(12);
  auto cp = ConcatFusionParams<double>::create(ps, "c", 10, true, true, rng);
  auto ip = IwfParams<double>::create(ps, "i", 10, 3, rng);
  auto kp = CafParams<double>::create(ps, "k", 10, 3, rng);
  auto coords = random_coords(13, 1);
  Tape<double> tape;
  auto in = inputs(tape, 13, 5, 2, 3);
  in.coords = &coords;
  CHECK(fuse_concat(in, cp).value().shape() == Shape{13, 10});
  CHECK(fuse_iwf(in, ip).features.value().shape() == Shape{13, 10});
  CHECK(fuse_caf(in, kp).features.value().shape() == Shape{13, 10});
}

TEST_CASE("strategy names round trip") {
  for (auto f : {FusionStrategy::concat, FusionStrategy::iwf, FusionStrategy::caf})
    CHECK(parse_fusion_strategy(to_string(f)) == f);
  CHECK_THROWS_AS(parse_fusion_strategy("attention"), ConfigError);
}
