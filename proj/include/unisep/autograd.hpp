#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every activation is a 2-D matrix; higher-rank tensors are stored
// with their leading axes flattened into rows.

#include <Eigen/Dense>

#include <cassert>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "unisep/errors.hpp"

namespace unisep {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace ad {

/// A named tensor owned by a module. Gradients are accumulated here by
/// `Tape::backward`.
template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Matrix<T> v, bool train = true)
      : name(std::move(n)), value(std::move(v)), trainable(train) {
    grad = Matrix<T>::Zero(value.rows(), value.cols());
  }

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename T>
class Tape;

/// Handle to a node recorded on a tape. Cheap to copy.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  const Matrix<T>& value() const { return tape_->value(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  T item() const {
    assert(rows() == 1 && cols() == 1);
    return value()(0, 0);
  }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  const Matrix<T>& grad() const { return tape_->grad(id_); }
  Tape<T>* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(const Matrix<T>& grad_out)>;

  Tape() = default;
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  /// When positive, matrix products whose left operand has a multiple of
  /// this many rows are evaluated block by block, so each block's result
  /// depends only on its own rows.
  Eigen::Index row_block() const { return row_block_; }
  void set_row_block(Eigen::Index n) { row_block_ = n; }

  Var<T> constant(Matrix<T> v) {
    nodes_.push_back(Node{std::move(v), {}, {}, nullptr, false});
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  /// Leaf for a module parameter; one node per parameter per tape.
  Var<T> parameter(Parameter<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return {this, it->second};
    const bool rg = grad_enabled_ && p.trainable;
    nodes_.push_back(Node{p.value, {}, {}, rg ? &p : nullptr, rg});
    const int id = static_cast<int>(nodes_.size()) - 1;
    param_nodes_.emplace(&p, id);
    return {this, id};
  }

  /// Records an op result. `backward` is kept only if some input needs a
  /// gradient.
  Var<T> record(Matrix<T> v, std::initializer_list<Var<T>> inputs, Backward backward) {
    bool rg = false;
    if (grad_enabled_) {
      for (const auto& in : inputs) rg = rg || requires_grad(in.id());
    }
    return record_with_flag(std::move(v), rg, std::move(backward));
  }

  Var<T> record(Matrix<T> v, const std::vector<Var<T>>& inputs, Backward backward) {
    bool rg = false;
    if (grad_enabled_) {
      for (const auto& in : inputs) rg = rg || requires_grad(in.id());
    }
    return record_with_flag(std::move(v), rg, std::move(backward));
  }

  /// Like `record`, but the closure also receives this node's own value.
  Var<T> record_with_output(Matrix<T> v, std::initializer_list<Var<T>> inputs,
                            std::function<void(const Matrix<T>& grad_out, const Matrix<T>& out)> backward) {
    Var<T> out = record(std::move(v), inputs, {});
    auto& n = nodes_[static_cast<size_t>(out.id())];
    if (n.requires_grad) {
      const int id = out.id();
      n.backward = [this, id, bw = std::move(backward)](const Matrix<T>& g) {
        bw(g, nodes_[static_cast<size_t>(id)].value);
      };
    }
    return out;
  }

  const Matrix<T>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

  const Matrix<T>& grad(int id) const {
    const auto& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.size() == 0) {
      empty_grad_ = Matrix<T>::Zero(n.value.rows(), n.value.cols());
      return empty_grad_;
    }
    return n.grad;
  }

  /// Adds `g` into the gradient of `v`; no-op if `v` needs no gradient, in
  /// which case a lazy Eigen expression is never evaluated.
  template <typename Derived>
  void accumulate(const Var<T>& v, const Eigen::MatrixBase<Derived>& g) {
    auto& n = nodes_[static_cast<size_t>(v.id())];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Mutable gradient buffer for scatter-style backward passes.
  Matrix<T>* grad_buffer(const Var<T>& v) {
    auto& n = nodes_[static_cast<size_t>(v.id())];
    if (!n.requires_grad) return nullptr;
    if (n.grad.size() == 0) n.grad = Matrix<T>::Zero(n.value.rows(), n.value.cols());
    return &n.grad;
  }

  /// Back-propagates from a 1x1 root and adds leaf gradients into their
  /// parameters.
  void backward(const Var<T>& root) {
    if (root.rows() != 1 || root.cols() != 1) {
      throw ShapeError("backward root must be a scalar");
    }
    auto& r = nodes_[static_cast<size_t>(root.id())];
    if (!r.requires_grad) return;
    r.grad = Matrix<T>::Ones(1, 1);
    for (int i = root.id(); i >= 0; --i) {
      auto& n = nodes_[static_cast<size_t>(i)];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(n.grad);
      if (n.param != nullptr) n.param->grad += n.grad;
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    Backward backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
  };

  Var<T> record_with_flag(Matrix<T> v, bool rg, Backward backward) {
    nodes_.push_back(Node{std::move(v), {}, rg ? std::move(backward) : Backward{}, nullptr, rg});
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, int> param_nodes_;
  Eigen::Index row_block_ = 0;
  bool grad_enabled_ = true;
  mutable Matrix<T> empty_grad_;
};

/// Sets a tape's row block for the lifetime of the scope.
template <typename T>
class RowBlockScope {
 public:
  RowBlockScope(Tape<T>& t, Eigen::Index rows) : t_(t), prev_(t.row_block()) { t.set_row_block(rows); }
  ~RowBlockScope() { t_.set_row_block(prev_); }
  RowBlockScope(const RowBlockScope&) = delete;
  RowBlockScope& operator=(const RowBlockScope&) = delete;

 private:
  Tape<T>& t_;
  Eigen::Index prev_;
};

}  // namespace ad
}  // namespace unisep
