// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation in creation order, which is already a
// topological order, so backward() is a single reverse sweep. A tape built
// with record=false evaluates values only and is what inference uses.

#pragma once

#include "patchcast/params.hpp"
#include "patchcast/types.hpp"

#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

namespace patchcast::ad {

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  /// Scalar value of a 1x1 node.
  double item() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value);
  /// Leaf bound to store[index]; gradients flow only to trainable tensors.
  /// Repeated calls with the same index return the same node.
  Var param(const ParamStore& store, std::size_t index);
  Var param(const ParamStore& store, const std::string& name) {
    return param(store, store.index_of(name));
  }

  /// Appends a computed node. `fn` is dropped unless some input needs a gradient.
  Var push(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var push(Matrix value, std::span<const Var> inputs, BackwardFn fn);

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  /// Gradient of the last backward() sweep; empty if none reached the node.
  const Matrix& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].grad; }

  /// Adds `g` into the gradient of node `id` (no-op for non-differentiable nodes).
  template <typename Expr>
  void add_grad(int id, const Expr& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  /// Backpropagates d(scalar)/d(node) = 1.
  void backward(Var scalar);
  /// Backpropagates from several outputs at once with explicit seed gradients.
  void backward(std::span<const std::pair<Var, Matrix>> seeds);

  /// Adds parameter-leaf gradients into `grads` (aligned with the bound store).
  void accumulate(Gradients& grads) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    bool needs_grad = false;
    std::ptrdiff_t param = -1;
  };

  bool record_;
  std::deque<Node> nodes_;
  std::unordered_map<std::size_t, int> param_nodes_;
};

// ---- operations -----------------------------------------------------------

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
/// Adds a 1 x cols row vector to every row.
Var add_row(Var a, Var row);
Var relu(Var a);
/// Row-wise layer normalization with learned gain and bias (both 1 x cols).
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var softmax_rows(Var x);
Var slice_cols(Var x, Index start, Index count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
/// Copy of x with the listed rows replaced by `row` (1 x cols).
Var replace_rows(Var x, std::span<const Index> rows, Var row);
/// out.row(i) = x.row(source[i]).
Var gather_rows(Var x, std::span<const Index> source);
/// 1 x cols mean over rows.
Var mean_rows(Var x);
/// Row-major reshape.
Var reshape(Var x, Index rows, Index cols);
/// out = w(0, k) * x
Var scale_by_entry(Var x, Var w, Index k);
/// Mean squared difference over all elements (1x1).
Var mse(Var a, Var b);
/// (1/|rows|) sum_{i in rows} mean_c (pred_ic - target_ic)^2, as 1x1.
Var masked_row_mse(Var pred, Var target, std::span<const Index> rows);
inline constexpr double kNormFloor = 1e-12;
/// x / max(||x||, kNormFloor) per row; throws NumericError on a non-finite row.
Var l2_normalize_rows(Var x);
/// Mean over rows i of -logits(i, positive[i]) + logsumexp_{j != i} logits(i, j).
Var info_nce(Var logits, std::span<const Index> positive);
/// Mean pinball loss; pred is R x Q (one column per level), target is R x 1.
Var pinball(Var pred, Var target, std::span<const double> levels);

}  // namespace patchcast::ad
