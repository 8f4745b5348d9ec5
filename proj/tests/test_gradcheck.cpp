#include <doctest.h>

#include <chrono>

#include "ppcnn/gradcheck.hpp"
#include "ppcnn/network.hpp"

using namespace ppcnn;

TEST_CASE("linear function with identity weights is exact") {
  ParameterSet<double> ps;
  ps.create("x", Tensor<double>::matrix({{0.3, -1.2}, {2.0, 0.7}}));
  ps.create("w", Tensor<double>::matrix({{1, 0}, {0, 1}}));
  ps.create("b", Tensor<double>::vector({0, 0}));
  auto f = [&](Tape<double>& t) {
    return ops::sum_all(ops::linear(t.parameter(ps.at("x")), t.parameter(ps.at("w")),
                                    t.parameter(ps.at("b"))));
  };
  auto r = grad_check(f, ps);
  CHECK(r.max_rel_error < 1e-8);
  CHECK(r.checked == 10);
}

TEST_CASE("two-layer MLP cross entropy") {
  Rng rng(3);
  ParameterSet<double> ps;
  auto l1 = Linear<double>::create(ps, "l1", 3, 6, rng);
  auto l2 = Linear<double>::create(ps, "l2", 6, 4, rng);
  ps.create("x", kaiming_normal<double>({4, 3}, 1, rng));
  std::vector<int> labels{0, 3, 1, 1};
  auto f = [&](Tape<double>& t) {
    return ops::cross_entropy(l2(ops::sigmoid(l1(t.parameter(ps.at("x"))))), labels);
  };
  CHECK(grad_check(f, ps).max_rel_error < 1e-4);
}

TEST_CASE("wrong backward rule is caught") {
  ParameterSet<double> ps;
  ps.create("x", Tensor<double>::matrix({{0.5, -0.25, 1.5}}));
  // square with the derivative off by a factor of 2
  auto bad_square = [](const Var<double>& x) {
    Tensor<double> y = x.value();
    for (auto& v : y.storage()) v = v * v;
    return x.tape().record(std::move(y), {&x}, [x](const Tensor<double>& g, const Tensor<double>&) {
      Tensor<double> dx(x.value().shape());
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = x.value()[i] * g[i];
      x.node()->accumulate(dx);
    });
  };
  auto f = [&](Tape<double>& t) { return ops::sum_all(bad_square(t.parameter(ps.at("x")))); };
  auto r = grad_check(f, ps);
  CHECK(r.max_rel_error > 1e-2);
  CHECK(r.worst_parameter == "x");
}

TEST_CASE("non-finite loss raises") {
  ParameterSet<double> ps;
  ps.create("x", Tensor<double>::vector({std::numeric_limits<double>::infinity()}));
  auto f = [&](Tape<double>& t) { return ops::sum_all(t.parameter(ps.at("x"))); };
  CHECK_THROWS_AS(grad_check(f, ps), NumericError);
}

TEST_CASE("entry sampling limits the work") {
  Rng rng(1);
  ParameterSet<double> ps;
  ps.create("x", kaiming_normal<double>({10, 10}, 1, rng));
  auto f = [&](Tape<double>& t) { return ops::sum_all(ops::sigmoid(t.parameter(ps.at("x")))); };
  GradCheckOptions opt;
  opt.max_entries = 7;
  auto r = grad_check(f, ps, opt);
  CHECK(r.checked == 7);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("standard units pass their thresholds") {
  auto units = standard_gradcheck_units(11);
  for (const auto& u : units) {
    auto t0 = std::chrono::steady_clock::now();
    auto r = u.run();
    double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    MESSAGE(u.name << " err=" << r.max_rel_error << " (" << r.worst_parameter << ") checked="
                   << r.checked << " " << ms << "ms");
    CHECK_MESSAGE(r.max_rel_error < u.threshold, u.name);
    CHECK(r.checked > 0);
  }
}
