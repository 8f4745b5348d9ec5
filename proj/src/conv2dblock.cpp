#include "ppcnn/conv2dblock.hpp"

namespace ppcnn {

std::string to_string(ConvVariant v) {
  switch (v) {
    case ConvVariant::plain: return "plain";
    case ConvVariant::residual: return "residual";
    case ConvVariant::residual_se: return "residual_se";
  }
  return "?";
}

ConvVariant parse_conv_variant(const std::string& s) {
  if (s == "plain") return ConvVariant::plain;
  if (s == "residual") return ConvVariant::residual;
  if (s == "residual_se") return ConvVariant::residual_se;
  throw ConfigError("unknown conv variant '" + s + "'");
}

template <typename T>
SEResBlockParams<T> SEResBlockParams<T>::create(ParameterSet<T>& ps, const std::string& name,
                                                std::size_t channels, std::size_t reduction,
                                                Rng& rng) {
  if (reduction == 0 || channels % reduction != 0) {
    throw ConfigError("SE reduction " + std::to_string(reduction) + " does not divide " +
                      std::to_string(channels) + " channels");
  }
  SEResBlockParams p;
  p.channels = channels;
  p.reduction = reduction;
  p.conv1 = Conv3x3<T>::create(ps, name + ".conv1", channels, channels, rng);
  p.bn1 = BatchNorm<T>::create(ps, name + ".bn1", channels);
  p.conv2 = Conv3x3<T>::create(ps, name + ".conv2", channels, channels, rng);
  p.bn2 = BatchNorm<T>::create(ps, name + ".bn2", channels);
  p.se_reduce = Linear<T>::create(ps, name + ".se_reduce", channels, channels / reduction, rng);
  p.se_expand = Linear<T>::create(ps, name + ".se_expand", channels / reduction, channels, rng);
  return p;
}

template <typename T>
Var<T> se_excitation(const Var<T>& branch, const SEResBlockParams<T>& p) {
  Var<T> squeezed = ops::global_avg_pool(branch);
  return ops::sigmoid(p.se_expand(ops::relu(p.se_reduce(squeezed))));
}

template <typename T>
Var<T> se_res_block(const Var<T>& x, const SEResBlockParams<T>& p, ConvVariant variant) {
  const auto& shape = x.value().shape();
  if (shape.size() != 3 || shape[0] != p.channels) {
    throw DimensionError("conv block for " + std::to_string(p.channels) + " channels got " +
                         shape_str(shape));
  }
  Var<T> h = ops::leaky_relu(p.bn1(p.conv1(x)));
  Var<T> pre = p.conv2(h);
  Var<T> branch = p.bn2(pre);
  if (variant == ConvVariant::plain) return ops::leaky_relu(branch);
  if (variant == ConvVariant::residual_se) {
    // Squeeze before normalization: in train mode every channel of
    // bn2's output averages to beta over the map.
    branch = ops::channel_scale(branch, se_excitation(pre, p));
  }
  return ops::leaky_relu(ops::add(branch, x));
}

template struct SEResBlockParams<float>;
template struct SEResBlockParams<double>;
template Var<float> se_res_block(const Var<float>&, const SEResBlockParams<float>&, ConvVariant);
template Var<double> se_res_block(const Var<double>&, const SEResBlockParams<double>&,
                                  ConvVariant);
template Var<float> se_excitation(const Var<float>&, const SEResBlockParams<float>&);
template Var<double> se_excitation(const Var<double>&, const SEResBlockParams<double>&);

}  // namespace ppcnn
