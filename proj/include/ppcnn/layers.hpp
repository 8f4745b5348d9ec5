#pragma once

// Parameterized building blocks. Each layer only holds pointers into a
// ParameterSet; the set owns the tensors.

#include <cmath>
#include <optional>
#include <random>
#include <string>

#include "ppcnn/ops.hpp"

namespace ppcnn {

using Rng = std::mt19937_64;

template <typename T>
Tensor<T> kaiming_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : t.storage()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
struct Linear {
  Parameter<T>* weight = nullptr;  // in x out
  Parameter<T>* bias = nullptr;    // out

  static Linear create(ParameterSet<T>& ps, const std::string& name, std::size_t in,
                       std::size_t out, Rng& rng) {
    Linear l;
    l.weight = ps.create(name + ".weight", kaiming_normal<T>({in, out}, in, rng));
    l.bias = ps.create(name + ".bias", Tensor<T>({out}));
    return l;
  }

  std::size_t in() const { return weight->value.dim(0); }
  std::size_t out() const { return weight->value.dim(1); }

  Var<T> operator()(const Var<T>& x) const {
    Tape<T>& tape = x.tape();
    return ops::linear(x, tape.parameter(*weight), tape.parameter(*bias));
  }
};

template <typename T>
struct BatchNorm {
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;
  Parameter<T>* running_mean = nullptr;
  Parameter<T>* running_var = nullptr;

  static BatchNorm create(ParameterSet<T>& ps, const std::string& name, std::size_t channels) {
    BatchNorm bn;
    bn.gamma = ps.create(name + ".gamma", Tensor<T>({channels}, T(1)));
    bn.beta = ps.create(name + ".beta", Tensor<T>({channels}));
    bn.running_mean = ps.create(name + ".running_mean", Tensor<T>({channels}), false);
    bn.running_var = ps.create(name + ".running_var", Tensor<T>({channels}, T(1)), false);
    return bn;
  }

  Var<T> operator()(const Var<T>& x) const {
    Tape<T>& tape = x.tape();
    return ops::batchnorm(x, tape.parameter(*gamma), tape.parameter(*beta), running_mean->value,
                          running_var->value);
  }
};

// linear -> optional batch norm -> activation
template <typename T>
struct Dense {
  Linear<T> linear;
  std::optional<BatchNorm<T>> bn;
  kernels::Activation act = kernels::Activation::relu;

  static Dense create(ParameterSet<T>& ps, const std::string& name, std::size_t in,
                      std::size_t out, Rng& rng, bool with_bn = true,
                      kernels::Activation act = kernels::Activation::relu) {
    Dense d;
    d.linear = Linear<T>::create(ps, name + ".linear", in, out, rng);
    if (with_bn) d.bn = BatchNorm<T>::create(ps, name + ".bn", out);
    d.act = act;
    return d;
  }

  Var<T> operator()(const Var<T>& x) const {
    Var<T> y = linear(x);
    if (bn) y = (*bn)(y);
    return ops::activation(act, y);
  }
};

template <typename T>
struct Conv3x3 {
  Parameter<T>* kernel = nullptr;  // out x in x 3 x 3
  Parameter<T>* bias = nullptr;

  static Conv3x3 create(ParameterSet<T>& ps, const std::string& name, std::size_t in,
                        std::size_t out, Rng& rng) {
    Conv3x3 c;
    c.kernel = ps.create(name + ".kernel", kaiming_normal<T>({out, in, 3, 3}, in * 9, rng));
    c.bias = ps.create(name + ".bias", Tensor<T>({out}));
    return c;
  }

  Var<T> operator()(const Var<T>& x) const {
    Tape<T>& tape = x.tape();
    return ops::conv2d(x, tape.parameter(*kernel), tape.parameter(*bias));
  }
};

}  // namespace ppcnn
