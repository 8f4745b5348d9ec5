#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <unordered_map>

#include "ppcnn/tape.hpp"

namespace ppcnn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool cosine = true;  // decay lr to 0 over total_steps
};

// Learning rate at `step` (0-based) of `total`.
inline double cosine_lr(double base, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  const double t = static_cast<double>(step) / static_cast<double>(total);
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * t));
}

template <typename T>
class Adam {
 public:
  Adam(ParameterSet<T>& params, AdamConfig cfg, std::size_t total_steps)
      : params_(params), cfg_(cfg), total_(total_steps) {}

  double current_lr() const {
    return cfg_.cosine ? cosine_lr(cfg_.lr, step_, total_) : cfg_.lr;
  }
  std::size_t steps_taken() const { return step_; }

  // One update from the accumulated Parameter::grad values; grads are then zeroed.
  void step() {
    const double lr = current_lr();
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& [name, p] : params_) {
      if (!p.trainable) continue;
      auto& st = state_[&p];
      if (st.m.size() != p.value.size()) {
        st.m.assign(p.value.size(), 0.0);
        st.v.assign(p.value.size(), 0.0);
      }
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = static_cast<double>(p.grad[i]);
        st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g;
        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = st.m[i] / c1;
        const double vhat = st.v[i] / c2;
        p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) -
                                    lr * mhat / (std::sqrt(vhat) + cfg_.epsilon));
      }
      p.zero_grad();
    }
  }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  ParameterSet<T>& params_;
  AdamConfig cfg_;
  std::size_t total_;
  std::size_t step_ = 0;
  std::unordered_map<const Parameter<T>*, Moments> state_;
};

}  // namespace ppcnn
