#pragma once

#include <string>

#include "ppcnn/projection.hpp"

namespace ppcnn {

enum class ConvVariant { plain, residual, residual_se };

std::string to_string(ConvVariant v);
ConvVariant parse_conv_variant(const std::string& s);

inline constexpr std::size_t kDefaultSeReduction = 4;

// Two 3x3 conv + BN layers on C_conv channels and the squeeze-and-excitation
// pair C_conv -> C_conv/r -> C_conv.
template <typename T>
struct SEResBlockParams {
  Conv3x3<T> conv1, conv2;
  BatchNorm<T> bn1, bn2;
  Linear<T> se_reduce, se_expand;
  std::size_t channels = 0;
  std::size_t reduction = kDefaultSeReduction;

  static SEResBlockParams create(ParameterSet<T>& ps, const std::string& name,
                                 std::size_t channels, std::size_t reduction, Rng& rng);
};

// plain:       lrelu(bn2(conv2(lrelu(bn1(conv1(x))))))
// residual:    lrelu(bn2(conv2(h)) + x)
// residual_se: lrelu(bn2(conv2(h)) * sigmoid(se(gap(conv2(h)))) + x)
template <typename T>
Var<T> se_res_block(const Var<T>& x, const SEResBlockParams<T>& p, ConvVariant variant);

template <typename T>
FeatureMap2D<T> se_res_block(const FeatureMap2D<T>& fm, const SEResBlockParams<T>& p,
                             ConvVariant variant) {
  return {se_res_block(fm.values, p, variant), fm.mapping};
}

// Channel excitation factors in (0,1) from a C x H x W map, 1 x C.
template <typename T>
Var<T> se_excitation(const Var<T>& branch, const SEResBlockParams<T>& p);

}  // namespace ppcnn
