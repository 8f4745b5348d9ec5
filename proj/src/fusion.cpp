#include "ppcnn/fusion.hpp"

namespace ppcnn {

std::string to_string(FusionStrategy f) {
  switch (f) {
    case FusionStrategy::concat: return "concat";
    case FusionStrategy::iwf: return "iwf";
    case FusionStrategy::caf: return "caf";
  }
  return "?";
}

FusionStrategy parse_fusion_strategy(const std::string& s) {
  if (s == "concat") return FusionStrategy::concat;
  if (s == "iwf") return FusionStrategy::iwf;
  if (s == "caf") return FusionStrategy::caf;
  throw ConfigError("unknown fusion strategy '" + s + "'");
}

namespace {

std::size_t half_channels(std::size_t out_channels) {
  if (out_channels == 0 || out_channels % 2 != 0) {
    throw ConfigError("fusion output channels must be even, got " + std::to_string(out_channels));
  }
  return out_channels / 2;
}

template <typename T>
std::size_t check_inputs(const FusionInputs<T>& in, std::size_t half) {
  if (in.feature_count() == 0) throw ConfigError("fusion without input features");
  const auto feats = in.features();
  const std::size_t n = feats.front().value().dim(0);
  for (const auto& f : feats) {
    const auto& s = f.value().shape();
    if (s.size() != 2 || s[0] != n || s[1] != half) {
      throw ConfigError("channel convention violated: expected N x " + std::to_string(half) +
                        ", got " + shape_str(s));
    }
  }
  return n;
}

template <typename T>
Var<T> weighted_and_lifted(const FusionInputs<T>& in, const Var<T>& weights,
                           const Linear<T>& lift) {
  const auto& w = weights.value();
  for (std::size_t r = 0; r < w.dim(0); ++r) {
    double s = 0;
    for (std::size_t b = 0; b < w.dim(1); ++b) s += w[r * w.dim(1) + b];
    if (!(std::abs(s - 1.0) < 1e-4)) {
      throw NumericError("fusion weight row " + std::to_string(r) + " sums to " +
                         std::to_string(s));
    }
  }
  return lift(ops::weighted_sum(weights, in.features()));
}

}  // namespace

template <typename T>
ConcatFusionParams<T> ConcatFusionParams<T>::create(ParameterSet<T>& ps, const std::string& name,
                                                    std::size_t out_channels, bool has_point,
                                                    bool has_branches, Rng& rng) {
  const std::size_t half = half_channels(out_channels);
  if (!has_point && !has_branches) throw ConfigError("fusion without any branch");
  const std::size_t in = (has_point && has_branches) ? out_channels : half;
  return {Dense<T>::create(ps, name + ".mlp", in, out_channels, rng)};
}

template <typename T>
IwfParams<T> IwfParams<T>::create(ParameterSet<T>& ps, const std::string& name,
                                  std::size_t out_channels, std::size_t feature_count, Rng& rng) {
  const std::size_t half = half_channels(out_channels);
  IwfParams p;
  for (std::size_t b = 0; b < feature_count; ++b) {
    p.scorers.push_back(
        Linear<T>::create(ps, name + ".score" + std::to_string(b), half, feature_count, rng));
  }
  p.lift = Linear<T>::create(ps, name + ".lift", half, out_channels, rng);
  return p;
}

template <typename T>
CafParams<T> CafParams<T>::create(ParameterSet<T>& ps, const std::string& name,
                                  std::size_t out_channels, std::size_t feature_count, Rng& rng) {
  const std::size_t half = half_channels(out_channels);
  CafParams p;
  p.local1 = Dense<T>::create(ps, name + ".local1", 3, kCafLocal1, rng, false);
  p.local2 = Dense<T>::create(ps, name + ".local2", kCafLocal1, kCafLocal2, rng, false);
  p.head1 = Dense<T>::create(ps, name + ".head1", 2 * kCafLocal2, kCafHead, rng, false);
  p.head2 = Linear<T>::create(ps, name + ".head2", kCafHead, feature_count, rng);
  p.lift = Linear<T>::create(ps, name + ".lift", half, out_channels, rng);
  return p;
}

template <typename T>
Var<T> fuse_concat(const FusionInputs<T>& in, const ConcatFusionParams<T>& p) {
  const std::size_t half = p.mlp.linear.out() / 2;
  check_inputs(in, half);
  std::vector<Var<T>> parts;
  if (in.point_feature) parts.push_back(*in.point_feature);
  if (!in.branch_features.empty()) {
    parts.push_back(in.branch_features.size() == 1 ? in.branch_features.front()
                                                   : ops::add_n(in.branch_features));
  }
  Var<T> joined = parts.size() == 1 ? parts.front() : ops::concat_cols(parts);
  if (joined.value().dim(1) != p.mlp.linear.in()) {
    throw ConfigError("concat fusion expects " + std::to_string(p.mlp.linear.in()) +
                      " channels, got " + std::to_string(joined.value().dim(1)));
  }
  return p.mlp(joined);
}

template <typename T>
Var<T> iwf_weights(const FusionInputs<T>& in, const IwfParams<T>& p) {
  const std::size_t half = p.lift.in();
  check_inputs(in, half);
  const auto feats = in.features();
  if (feats.size() != p.scorers.size()) {
    throw ConfigError("IWF built for " + std::to_string(p.scorers.size()) + " features, got " +
                      std::to_string(feats.size()));
  }
  std::vector<Var<T>> scores;
  for (std::size_t b = 0; b < feats.size(); ++b) {
    scores.push_back(ops::sigmoid(p.scorers[b](feats[b])));
  }
  Var<T> summed = scores.size() == 1 ? scores.front() : ops::add_n(scores);
  return ops::softmax_rows(summed);
}

template <typename T>
FusionOutput<T> fuse_iwf(const FusionInputs<T>& in, const IwfParams<T>& p) {
  Var<T> w = iwf_weights(in, p);
  return {weighted_and_lifted(in, w, p.lift), w};
}

template <typename T>
Var<T> caf_weights(Tape<T>& tape, const std::vector<Vec3>& coords, const CafParams<T>& p) {
  const std::size_t n = coords.size();
  Tensor<T> xyz({n, 3});
  for (std::size_t k = 0; k < n; ++k)
    for (int d = 0; d < 3; ++d) xyz[k * 3 + d] = static_cast<T>(coords[k][d]);
  Var<T> local = p.local2(p.local1(tape.constant(std::move(xyz))));
  auto one_segment = std::make_shared<const std::vector<std::int64_t>>(n, 0);
  Var<T> global = ops::segmented_max(local, one_segment, 1);
  Var<T> joined = ops::concat_cols<T>({local, ops::broadcast_rows(global, n)});
  return ops::softmax_rows(p.head2(p.head1(joined)));
}

template <typename T>
FusionOutput<T> fuse_caf(const FusionInputs<T>& in, const CafParams<T>& p) {
  if (!in.coords) throw ConfigError("context-aware fusion needs point coordinates");
  const std::size_t n = check_inputs(in, p.lift.in());
  if (in.coords->size() != n) throw ConsistencyError("coordinate count differs from feature rows");
  if (p.head2.out() != in.feature_count()) {
    throw ConfigError("CAF built for " + std::to_string(p.head2.out()) + " features, got " +
                      std::to_string(in.feature_count()));
  }
  Var<T> w = caf_weights(in.features().front().tape(), *in.coords, p);
  return {weighted_and_lifted(in, w, p.lift), w};
}

#define PPCNN_INSTANTIATE(T)                                                              \
  template struct ConcatFusionParams<T>;                                                  \
  template struct IwfParams<T>;                                                           \
  template struct CafParams<T>;                                                           \
  template Var<T> fuse_concat(const FusionInputs<T>&, const ConcatFusionParams<T>&);      \
  template Var<T> iwf_weights(const FusionInputs<T>&, const IwfParams<T>&);               \
  template FusionOutput<T> fuse_iwf(const FusionInputs<T>&, const IwfParams<T>&);         \
  template Var<T> caf_weights(Tape<T>&, const std::vector<Vec3>&, const CafParams<T>&);   \
  template FusionOutput<T> fuse_caf(const FusionInputs<T>&, const CafParams<T>&);

PPCNN_INSTANTIATE(float)
PPCNN_INSTANTIATE(double)

}  // namespace ppcnn
