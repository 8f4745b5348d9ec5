#pragma once

#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "ppcnn/tensor.hpp"

namespace ppcnn {

// A named tensor owned by a ParameterSet. Non-trainable entries hold
// buffers such as batch-norm running statistics.
template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    else grad.fill(T(0));
  }
};

// Ordered, name-keyed parameter storage. Entries never move once created, so
// modules keep raw pointers into the set.
template <typename T>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  Parameter<T>* create(const std::string& name, Tensor<T> value, bool trainable = true) {
    auto [it, inserted] = params_.try_emplace(name);
    if (!inserted) throw ConfigError("duplicate parameter name '" + name + "'");
    it->second.value = std::move(value);
    it->second.trainable = trainable;
    it->second.grad = Tensor<T>(it->second.value.shape());
    return &it->second;
  }

  Parameter<T>* find(const std::string& name) {
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : &it->second;
  }
  const Parameter<T>* find(const std::string& name) const {
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : &it->second;
  }

  Parameter<T>& at(const std::string& name) {
    auto* p = find(name);
    if (!p) throw ConfigError("unknown parameter '" + name + "'");
    return *p;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) p.zero_grad();
  }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count(bool trainable_only = true) const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) {
      if (!trainable_only || p.trainable) n += p.value.size();
    }
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Parameter<T>> params_;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  Parameter<T>* param = nullptr;
  // Receives (output gradient, output value).
  std::function<void(const Tensor<T>&, const Tensor<T>&)> backward;

  void accumulate(const Tensor<T>& g) {
    if (!requires_grad) return;
    if (grad.empty() && !value.empty()) grad = Tensor<T>(value.shape());
    grad += g;
  }

  // Mutable gradient buffer for rules that scatter into the input directly.
  Tensor<T>& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
class Tape;

// Handle to a value on a tape. Cheap to copy.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(std::shared_ptr<Node<T>> node, Tape<T>* tape) : node_(std::move(node)), tape_(tape) {}

  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tape<T>& tape() const { return *tape_; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

  // Gradient after Tape::backward; zeros if the value took no part.
  Tensor<T> grad() const {
    if (node_->grad.empty()) return Tensor<T>(node_->value.shape());
    return node_->grad;
  }

 private:
  std::shared_ptr<Node<T>> node_;
  Tape<T>* tape_ = nullptr;
};

struct TapeOptions {
  bool record = true;     // keep backward rules
  bool training = true;   // batch-norm uses batch statistics and updates running stats
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;
};

// Records kernel invocations in execution order. backward() walks the
// record in exact reverse order; gradients from several consumers add up.
// One tape belongs to one forward/backward pass and is not thread-safe.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor<T>& grad, const Tensor<T>& out)>;

  explicit Tape(TapeOptions options = {}) : options_(options) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  const TapeOptions& options() const { return options_; }
  bool recording() const { return options_.record; }
  bool training() const { return options_.training; }

  Var<T> constant(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    return Var<T>(std::move(node), this);
  }

  // A leaf whose gradient is tracked (used for inputs under test).
  Var<T> leaf(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = options_.record;
    if (options_.record) nodes_.push_back(node);
    return Var<T>(std::move(node), this);
  }

  // Leaf bound to a parameter. Repeated calls on one tape return the same
  // leaf so that all uses accumulate into one gradient.
  Var<T> parameter(Parameter<T>& p) {
    auto it = param_leaves_.find(&p);
    if (it != param_leaves_.end()) return Var<T>(it->second, this);
    auto node = std::make_shared<Node<T>>();
    node->value = p.value;
    node->requires_grad = options_.record && p.trainable;
    node->param = &p;
    if (node->requires_grad) nodes_.push_back(node);
    param_leaves_.emplace(&p, node);
    return Var<T>(std::move(node), this);
  }

  // Creates the output node of a kernel. The backward rule receives the
  // output gradient and is only kept when some input requires a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<const Var<T>*> inputs, BackwardFn fn) {
    bool needs = false;
    if (options_.record) {
      for (const Var<T>* in : inputs) needs = needs || in->requires_grad();
    }
    return finish(std::move(value), needs, std::move(fn));
  }

  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn) {
    bool needs = false;
    if (options_.record) {
      for (const Var<T>& in : inputs) needs = needs || in.requires_grad();
    }
    return finish(std::move(value), needs, std::move(fn));
  }

  // Seeds d(output)/d(output) = 1 for a single-element output and runs every
  // recorded rule in reverse. Parameter gradients are added to Parameter::grad.
  void backward(const Var<T>& output) {
    if (output.value().size() != 1) {
      throw DimensionError("backward needs a scalar output, got " +
                           shape_str(output.value().shape()));
    }
    if (!output.requires_grad()) return;
    Tensor<T> seed(output.value().shape(), T(1));
    output.node()->accumulate(seed);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>& node = **it;
      if (node.grad.empty()) continue;
      if (node.backward) node.backward(node.grad, node.value);
      if (node.param) node.param->grad += node.grad;
    }
  }

  std::size_t recorded_count() const { return nodes_.size(); }

 private:
  Var<T> finish(Tensor<T> value, bool needs, BackwardFn fn) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    if (needs) {
      node->requires_grad = true;
      node->backward = std::move(fn);
      nodes_.push_back(node);
    }
    return Var<T>(std::move(node), this);
  }

  TapeOptions options_;
  std::vector<std::shared_ptr<Node<T>>> nodes_;
  std::unordered_map<const Parameter<T>*, std::shared_ptr<Node<T>>> param_leaves_;
};

}  // namespace ppcnn
