#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ppcnn/tape.hpp"

namespace ppcnn {

struct GradCheckOptions {
  double step = 1e-5;
  // Entries checked per tensor; 0 checks every entry. Larger tensors are
  // sampled with a seeded generator.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
  TapeOptions tape{};  // record is forced on for the analytic pass
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

using LossFn = std::function<Var<double>(Tape<double>&)>;

// Compares tape gradients of every trainable entry of `params` against
// central differences. Error per entry: |g_ad - g_fd| / max(1, |g_fd|).
GradCheckResult grad_check(const LossFn& f, ParameterSet<double>& params,
                           const GradCheckOptions& options = {});

// sum(x * r) for a fixed tensor r of x's shape.
template <typename T>
Var<T> probe_loss(const Var<T>& x, Tensor<T> r);

struct GradCheckUnit {
  std::string name;
  double threshold = 1e-4;
  std::function<GradCheckResult()> run;
};

// One unit per kernel, projection method, backprojection mode, conv
// variant, fusion strategy, a whole PPConv layer and a toy network.
std::vector<GradCheckUnit> standard_gradcheck_units(std::uint64_t seed);

}  // namespace ppcnn
