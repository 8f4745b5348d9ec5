#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ppcnn/layers.hpp"

using namespace ppcnn;
namespace k = ppcnn::kernels;

namespace {

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.storage()) v = d(rng);
  return t;
}

// Direct 6-loop cross-correlation with zero padding, accumulating in the
// same (ci, kh, kw) order as the kernel so results match bit for bit.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& kern,
                          const Tensor<double>& b) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2), O = kern.dim(0);
  Tensor<double> out({O, H, W});
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        double acc = b[o];
        for (std::size_t c = 0; c < C; ++c)
          for (int dh = -1; dh <= 1; ++dh)
            for (int dw = -1; dw <= 1; ++dw) {
              const long hh = static_cast<long>(h) + dh, ww = static_cast<long>(w) + dw;
              if (hh < 0 || ww < 0 || hh >= static_cast<long>(H) || ww >= static_cast<long>(W))
                continue;
              acc += kern[((o * C + c) * 3 + static_cast<std::size_t>(dh + 1)) * 3 +
                          static_cast<std::size_t>(dw + 1)] *
                     x.at(c, static_cast<std::size_t>(hh), static_cast<std::size_t>(ww));
            }
        out.at(o, h, w) = acc;
      }
  return out;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("shape and data length agree") {
    Tensor<float> t({2, 3, 4});
    CHECK(t.size() == 24);
    CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
    CHECK_THROWS_AS(t.reshape({5, 5}), DimensionError);
  }

  TEST_CASE("validate flags non-finite values") {
    auto t = Tensor<double>::vector({1.0, 2.0});
    CHECK_NOTHROW(t.validate());
    t[1] = std::nan("");
    CHECK_THROWS_AS(t.validate(), NumericError);
    t[1] = INFINITY;
    CHECK_THROWS_AS(t.validate(), NumericError);
  }
}

TEST_SUITE("linear") {
  TEST_CASE("identity weights") {
    auto y = k::linear(Tensor<double>::matrix({{1, 2}}), Tensor<double>::matrix({{1, 0}, {0, 1}}),
                       Tensor<double>::vector({0, 0}));
    CHECK(y == Tensor<double>::matrix({{1, 2}}));
  }

  TEST_CASE("zero weights give the bias") {
    auto y = k::linear(Tensor<double>::matrix({{1, 2}}), Tensor<double>::matrix({{0, 0}, {0, 0}}),
                       Tensor<double>::vector({3, 4}));
    CHECK(y == Tensor<double>::matrix({{3, 4}}));
  }

  TEST_CASE("hand multiply") {
    auto y = k::linear(Tensor<double>::matrix({{1, 1}, {2, 2}}), Tensor<double>::matrix({{1}, {1}}),
                       Tensor<double>::vector({1}));
    CHECK(y == Tensor<double>::matrix({{3}, {5}}));
  }

  TEST_CASE("shape mismatch") {
    CHECK_THROWS_AS(k::linear(Tensor<double>({2, 3}), Tensor<double>({2, 2}), Tensor<double>({2})),
                    DimensionError);
    CHECK_THROWS_AS(k::linear(Tensor<double>({2, 3}), Tensor<double>({3, 2}), Tensor<double>({3})),
                    DimensionError);
  }
}

TEST_SUITE("conv2d") {
  TEST_CASE("identity kernel") {
    auto x = random_tensor({2, 4, 5}, 1);
    Tensor<double> kern({2, 2, 3, 3});
    kern[((0 * 2 + 0) * 3 + 1) * 3 + 1] = 1;
    kern[((1 * 2 + 1) * 3 + 1) * 3 + 1] = 1;
    CHECK(k::conv2d(x, kern, Tensor<double>({2})) == x);
  }

  TEST_CASE("all-ones kernel on ones: padding arithmetic") {
    Tensor<double> x({1, 3, 3}, 1.0);
    Tensor<double> kern({1, 1, 3, 3}, 1.0);
    auto y = k::conv2d(x, kern, Tensor<double>({1}));
    CHECK(y.at(0, 1, 1) == 9);
    CHECK(y.at(0, 0, 0) == 4);
    CHECK(y.at(0, 2, 2) == 4);
    CHECK(y.at(0, 0, 1) == 6);
  }

  TEST_CASE("matches the nested-loop oracle bit for bit") {
    for (auto [c, o, h, w] : {std::array<std::size_t, 4>{2, 2, 4, 4},
                              std::array<std::size_t, 4>{4, 3, 8, 8},
                              std::array<std::size_t, 4>{1, 4, 1, 5}}) {
      auto x = random_tensor({c, h, w}, 2 + c);
      auto kern = random_tensor({o, c, 3, 3}, 3 + o);
      auto b = random_tensor({o}, 4);
      CHECK(k::conv2d(x, kern, b) == naive_conv(x, kern, b));
    }
  }

  TEST_CASE("spatial extent is preserved and channels must match") {
    auto y = k::conv2d(random_tensor({3, 5, 7}, 1), random_tensor({2, 3, 3, 3}, 2),
                       Tensor<double>({2}));
    CHECK(y.shape() == Shape{2, 5, 7});
    CHECK_THROWS_AS(k::conv2d(Tensor<double>({3, 4, 4}), Tensor<double>({2, 2, 3, 3}),
                              Tensor<double>({2})),
                    DimensionError);
  }
}

TEST_SUITE("batchnorm") {
  TEST_CASE("normalized input passes through") {
    auto x = Tensor<double>::matrix({{1, -1}, {-1, 1}});
    Tensor<double> rm({2}), rv({2}, 1.0);
    auto r = k::batchnorm(x, Tensor<double>({2}, 1.0), Tensor<double>({2}), rm, rv,
                          k::NormMode::train, 0.1, 1e-5);
    for (std::size_t i = 0; i < 4; ++i) CHECK(r.y[i] == doctest::Approx(x[i]).epsilon(1e-5));
  }

  TEST_CASE("gamma zero gives beta") {
    auto x = random_tensor({6, 3}, 9);
    Tensor<double> rm({3}), rv({3}, 1.0);
    auto r = k::batchnorm(x, Tensor<double>({3}), Tensor<double>({3}, 2.5), rm, rv,
                          k::NormMode::train, 0.1, 1e-5);
    for (double v : r.y.storage()) CHECK(v == 2.5);
  }

  TEST_CASE("matches two-pass statistics and updates running stats") {
    auto x = random_tensor({8, 4}, 11, -3, 5);
    auto gamma = random_tensor({4}, 12, 0.5, 2);
    auto beta = random_tensor({4}, 13);
    Tensor<double> rm({4}), rv({4}, 1.0);
    auto r = k::batchnorm(x, gamma, beta, rm, rv, k::NormMode::train, 0.1, 1e-5);
    for (std::size_t c = 0; c < 4; ++c) {
      double mean = 0;
      for (std::size_t n = 0; n < 8; ++n) mean += x.at(n, c);
      mean /= 8;
      double var = 0;
      for (std::size_t n = 0; n < 8; ++n) var += (x.at(n, c) - mean) * (x.at(n, c) - mean);
      for (std::size_t n = 0; n < 8; ++n) {
        const double expect = gamma[c] * (x.at(n, c) - mean) / std::sqrt(var / 8 + 1e-5) + beta[c];
        CHECK(r.y.at(n, c) == doctest::Approx(expect).epsilon(1e-6));
      }
      CHECK(rm[c] == doctest::Approx(0.1 * mean));
      CHECK(rv[c] == doctest::Approx(0.9 + 0.1 * var / 7));
    }
  }

  TEST_CASE("eval mode uses running statistics") {
    auto x = Tensor<double>::matrix({{3}, {5}});
    Tensor<double> rm = Tensor<double>::vector({1}), rv = Tensor<double>::vector({4});
    auto r = k::batchnorm(x, Tensor<double>({1}, 1.0), Tensor<double>({1}), rm, rv,
                          k::NormMode::eval, 0.1, 0.0);
    CHECK(r.y[0] == doctest::Approx(1.0));
    CHECK(r.y[1] == doctest::Approx(2.0));
    CHECK(rm[0] == 1);
    CHECK(rv[0] == 4);
  }

  TEST_CASE("planar input normalizes per channel over H x W") {
    auto x = random_tensor({2, 3, 3}, 21, -2, 4);
    Tensor<double> rm({2}), rv({2}, 1.0);
    auto r = k::batchnorm(x, Tensor<double>({2}, 1.0), Tensor<double>({2}), rm, rv,
                          k::NormMode::train, 0.1, 1e-5);
    for (std::size_t c = 0; c < 2; ++c) {
      double s = 0;
      for (std::size_t i = 0; i < 9; ++i) s += r.y[c * 9 + i];
      CHECK(std::abs(s) < 1e-9);
    }
  }

  TEST_CASE("channel without elements is degenerate") {
    Tensor<double> rm({3}), rv({3}, 1.0);
    CHECK_THROWS_AS(k::batchnorm(Tensor<double>({0, 3}), Tensor<double>({3}, 1.0),
                                 Tensor<double>({3}), rm, rv, k::NormMode::train, 0.1, 1e-5),
                    DegenerateInputError);
  }
}

TEST_SUITE("activation") {
  TEST_CASE("pointwise values") {
    auto x = Tensor<double>::vector({-1, 2, 0, -2});
    auto r = k::activation(k::Activation::relu, x);
    CHECK(r[0] == 0);
    CHECK(r[1] == 2);
    auto l = k::activation(k::Activation::leaky_relu, x);
    CHECK(l[3] == doctest::Approx(-0.2));
    CHECK(l[1] == 2);
    auto s = k::activation(k::Activation::sigmoid, x);
    CHECK(s[2] == 0.5);
    CHECK(k::activation(k::Activation::identity, x) == x);
  }
}

TEST_SUITE("softmax") {
  TEST_CASE("equal logits are uniform") {
    auto y = k::softmax_rows(Tensor<double>::matrix({{3, 3, 3, 3}}));
    for (double v : y.storage()) CHECK(v == doctest::Approx(0.25));
  }

  TEST_CASE("large logits stay finite") {
    auto y = k::softmax_rows(Tensor<double>::matrix({{1000, 0}}));
    CHECK(y[0] == doctest::Approx(1.0));
    CHECK(y[1] == doctest::Approx(0.0));
    CHECK_NOTHROW(y.validate());
  }

  TEST_CASE("matches the direct formula") {
    auto y = k::softmax_rows(Tensor<double>::matrix({{1, 2, 3}}));
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(y[i] - std::exp(i + 1.0) / z) < 1e-7);
  }

  TEST_CASE("rows sum to one and ignore a constant shift") {
    auto x = random_tensor({16, 7}, 5, -20, 20);
    auto y = k::softmax_rows(x);
    auto shifted = x;
    for (std::size_t r = 0; r < 16; ++r)
      for (std::size_t c = 0; c < 7; ++c) shifted.at(r, c) += 3.0 * static_cast<double>(r) - 10;
    auto y2 = k::softmax_rows(shifted);
    for (std::size_t r = 0; r < 16; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        s += y.at(r, c);
        CHECK(std::abs(y.at(r, c) - y2.at(r, c)) < 1e-12);
      }
      CHECK(std::abs(s - 1) < 1e-6);
    }
  }
}

TEST_SUITE("segmented_max") {
  TEST_CASE("single segment") {
    std::vector<std::int64_t> ids{0, 0};
    auto r = k::segmented_max(Tensor<double>::matrix({{1, 5}, {4, 2}}), ids, 1);
    CHECK(r.values == Tensor<double>::matrix({{4, 5}}));
    CHECK(r.argmax == std::vector<std::int64_t>{1, 0});
  }

  TEST_CASE("empty segment is zero") {
    std::vector<std::int64_t> ids{1, 1};
    auto r = k::segmented_max(Tensor<double>::matrix({{-1, -5}, {-4, -2}}), ids, 2);
    CHECK(r.values.at(0, 0) == 0);
    CHECK(r.values.at(0, 1) == 0);
    CHECK(r.values.at(1, 0) == -1);
    CHECK(r.argmax[0] == -1);
    auto g = k::segmented_max_backward(r.argmax, Tensor<double>({2, 2}, 1.0), 2);
    CHECK(g == Tensor<double>::matrix({{1, 0}, {0, 1}}));
  }

  TEST_CASE("matches a per-segment scan") {
    auto x = random_tensor({10, 3}, 8);
    std::vector<std::int64_t> ids{2, 0, 1, 1, 0, 2, 2, 0, 1, 0};
    auto r = k::segmented_max(x, ids, 3);
    for (std::int64_t s = 0; s < 3; ++s)
      for (std::size_t c = 0; c < 3; ++c) {
        double best = -INFINITY;
        for (std::size_t n = 0; n < 10; ++n)
          if (ids[n] == s) best = std::max(best, x.at(n, c));
        CHECK(r.values.at(static_cast<std::size_t>(s), c) == best);
      }
  }

  TEST_CASE("invariant to row order within a segment") {
    auto x = random_tensor({12, 4}, 31);
    std::vector<std::int64_t> ids{0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3};
    auto base = k::segmented_max(x, ids, 4).values;
    std::vector<std::size_t> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 5; ++trial) {
      std::shuffle(perm.begin(), perm.end(), rng);
      Tensor<double> xp({12, 4});
      std::vector<std::int64_t> idp(12);
      for (std::size_t i = 0; i < 12; ++i) {
        for (std::size_t c = 0; c < 4; ++c) xp.at(i, c) = x.at(perm[i], c);
        idp[i] = ids[perm[i]];
      }
      CHECK(k::segmented_max(xp, idp, 4).values == base);
    }
  }

  TEST_CASE("ids out of range") {
    std::vector<std::int64_t> ids{0, 3};
    CHECK_THROWS_AS(k::segmented_max(Tensor<double>({2, 1}), ids, 3), IndexError);
    std::vector<std::int64_t> neg{-1, 0};
    CHECK_THROWS_AS(k::segmented_max(Tensor<double>({2, 1}), neg, 3), IndexError);
  }
}

TEST_SUITE("tape") {
  TEST_CASE("gradients accumulate over several consumers") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>::vector({2.0, -3.0}));
    auto y = ops::add(ops::scale(x, 3.0), ops::add(x, x));  // 5x
    tape.backward(ops::sum_all(y));
    CHECK(x.grad() == Tensor<double>::vector({5.0, 5.0}));
  }

  TEST_CASE("backward replays in exact reverse order") {
    Tape<double> tape;
    std::vector<int> order;
    auto x = tape.leaf(Tensor<double>::vector({1.0}));
    auto step = [&](const Var<double>& in, int id) {
      return tape.record(in.value(), {&in}, [&order, id, in](const Tensor<double>& g, const Tensor<double>&) {
        order.push_back(id);
        in.node()->accumulate(g);
      });
    };
    auto a = step(x, 1);
    auto b = step(a, 2);
    auto c = step(b, 3);
    tape.backward(c);
    CHECK(order == std::vector<int>{3, 2, 1});
    CHECK(x.grad()[0] == 1.0);
  }

  TEST_CASE("parameters share one leaf per tape") {
    ParameterSet<double> ps;
    auto* p = ps.create("w", Tensor<double>::vector({1.5}));
    Tape<double> tape;
    auto a = tape.parameter(*p);
    auto b = tape.parameter(*p);
    CHECK(a.node() == b.node());
    tape.backward(ops::sum_all(ops::add(a, ops::scale(b, 2.0))));
    CHECK(p->grad[0] == 3.0);
    CHECK_THROWS_AS(ps.create("w", Tensor<double>({1})), ConfigError);
  }

  TEST_CASE("non-recording tape keeps no rules") {
    Tape<double> tape(TapeOptions{false, false});
    auto x = tape.leaf(Tensor<double>::vector({1.0}));
    auto y = ops::sigmoid(x);
    CHECK(!y.requires_grad());
    CHECK(tape.recorded_count() == 0);
  }

  TEST_CASE("backward needs a scalar") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>::vector({1.0, 2.0}));
    CHECK_THROWS_AS(tape.backward(x), DimensionError);
  }
}

TEST_SUITE("cross_entropy") {
  TEST_CASE("uniform logits over 13 classes give ln 13") {
    auto ce = k::cross_entropy(Tensor<double>({4, 13}), std::vector<int>{0, 5, 12, 7});
    CHECK(std::abs(ce.loss - std::log(13.0)) < 1e-12);
  }

  TEST_CASE("large correct margin gives almost zero") {
    auto ce = k::cross_entropy(Tensor<double>::matrix({{500, 0, 0}}), std::vector<int>{0});
    CHECK(ce.loss < 1e-12);
    CHECK(std::isfinite(ce.loss));
  }

  TEST_CASE("matches the direct formula") {
    auto x = random_tensor({8, 5}, 17, -3, 3);
    std::vector<int> labels{0, 1, 2, 3, 4, 0, 2, 4};
    double expect = 0;
    for (std::size_t r = 0; r < 8; ++r) {
      double z = 0;
      for (std::size_t c = 0; c < 5; ++c) z += std::exp(x.at(r, c));
      expect -= std::log(std::exp(x.at(r, static_cast<std::size_t>(labels[r]))) / z);
    }
    CHECK(k::cross_entropy(x, labels).loss == doctest::Approx(expect / 8).epsilon(1e-12));
  }

  TEST_CASE("label out of range") {
    CHECK_THROWS_AS(k::cross_entropy(Tensor<double>({2, 3}), std::vector<int>{0, 3}), DataError);
    CHECK_THROWS_AS(k::cross_entropy(Tensor<double>({2, 3}), std::vector<int>{-1, 0}), DataError);
  }
}
