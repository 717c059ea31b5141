#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "pnet/tensor.hpp"

namespace pnet {

/// A named learnable (or buffered) tensor with its accumulated gradient.
template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  // Buffers (batch-norm running statistics) are persisted but never optimised.
  bool trainable = true;

  void zero_grad() { grad.set_zero(); }
};

/// Owns every parameter of a model. Addresses are stable for the store's lifetime.
template <typename Scalar>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter<Scalar>& add(std::string name, Tensor<Scalar> value, bool trainable = true) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
    auto shape = value.shape();
    params_.push_back(std::make_unique<Parameter<Scalar>>(
        Parameter<Scalar>{name, std::move(value), Tensor<Scalar>(shape), trainable}));
    index_[name] = params_.size() - 1;
    return *params_.back();
  }

  Parameter<Scalar>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return *params_[it->second];
  }
  const Parameter<Scalar>& at(const std::string& name) const {
    return const_cast<ParameterStore*>(this)->at(name);
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  Parameter<Scalar>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<Scalar>& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  /// Number of trainable scalars.
  Index trainable_count() const {
    Index total = 0;
    for (const auto& p : params_)
      if (p->trainable) total += p->value.size();
    return total;
  }

 private:
  std::vector<std::unique_ptr<Parameter<Scalar>>> params_;
  std::map<std::string, std::size_t> index_;
};

template <typename Scalar>
class Graph;

/// Handle to a node recorded on a Graph.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Graph<Scalar>* graph, int id) : graph_(graph), id_(id) {}

  const Tensor<Scalar>& value() const { return graph_->value(id_); }
  const Shape4& shape() const { return value().shape(); }
  Graph<Scalar>& graph() const { return *graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph<Scalar>* graph_ = nullptr;
  int id_ = -1;
};

/// Tape for reverse-mode differentiation. One forward recording supports exactly one backward pass.
template <typename Scalar>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor<Scalar>& out_grad)>;

  /// With track_gradients == false parameters enter as constants and no backward closures are kept.
  explicit Graph(bool track_gradients = true) : track_(track_gradients) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<Scalar> constant(Tensor<Scalar> value) { return push(std::move(value), nullptr, false, {}); }

  Var<Scalar> param(Parameter<Scalar>& p) { return push(p.value, &p, track_ && p.trainable, {}); }

  /// Records an op result; it requires grad iff any input does.
  Var<Scalar> record(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || requires_grad(in.id());
    return push(std::move(value), nullptr, needs, needs ? std::move(fn) : BackwardFn{});
  }
  Var<Scalar> record(Tensor<Scalar> value, const std::vector<Var<Scalar>>& inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || requires_grad(in.id());
    return push(std::move(value), nullptr, needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor<Scalar>& value(int id) const { return nodes_.at(id).value; }
  bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer of node id, zero-allocated on first access. Only valid during backward().
  Tensor<Scalar>& grad(int id) {
    auto& node = nodes_.at(id);
    if (node.grad.shape() != node.value.shape())
      node.grad = Tensor<Scalar>(node.value.shape());
    return node.grad;
  }

  /// Propagates d(seed * loss) into every reachable Parameter::grad (accumulating).
  void backward(Var<Scalar> loss, Scalar seed = Scalar(1)) {
    if (consumed_) throw std::logic_error("backward called twice on the same recorded graph");
    if (loss.value().size() != 1)
      throw ShapeError("backward requires a scalar loss, got shape " + loss.shape().str());
    consumed_ = true;
    if (!requires_grad(loss.id())) return;
    grad(loss.id())[0] = seed;
    for (int id = loss.id(); id >= 0; --id) {
      auto& node = nodes_[id];
      if (!node.requires_grad || node.grad.empty()) continue;
      if (node.backward) node.backward(*this, node.grad);
      if (node.param) node.param->grad.array() += node.grad.array();
      node.grad = Tensor<Scalar>();
    }
  }

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    BackwardFn backward;
    Parameter<Scalar>* param = nullptr;
    bool requires_grad = false;
  };

  Var<Scalar> push(Tensor<Scalar> value, Parameter<Scalar>* p, bool needs, BackwardFn fn) {
    if (consumed_) throw std::logic_error("cannot record onto a graph after backward");
    nodes_.push_back(Node{std::move(value), Tensor<Scalar>(), std::move(fn), p, needs});
    return Var<Scalar>(this, static_cast<int>(nodes_.size() - 1));
  }

  // deque keeps value references stable while new nodes are appended.
  std::deque<Node> nodes_;
  bool track_ = true;
  bool consumed_ = false;
};

}  // namespace pnet
