// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchcast/autodiff.hpp"

#include "patchcast/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace patchcast::ad {

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("item() on a non-scalar node");
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, -1});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(const ParamStore& store, std::size_t index) {
  if (auto it = param_nodes_.find(index); it != param_nodes_.end()) return Var(this, it->second);
  const bool needs = record_ && store[index].trainable;
  nodes_.push_back(Node{store[index].value, {}, {}, needs, static_cast<std::ptrdiff_t>(index)});
  const int id = static_cast<int>(nodes_.size() - 1);
  param_nodes_.emplace(index, id);
  return Var(this, id);
}

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::push(Matrix value, std::span<const Var> inputs, BackwardFn fn) {
  bool needs = false;
  if (record_)
    for (const Var& v : inputs) needs = needs || needs_grad(v.id());
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, needs, -1});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::backward(Var scalar) {
  if (scalar.value().size() != 1) throw ShapeError("backward() requires a scalar output");
  const std::pair<Var, Matrix> seed{scalar, Matrix::Ones(1, 1)};
  backward(std::span<const std::pair<Var, Matrix>>(&seed, 1));
}

void Tape::backward(std::span<const std::pair<Var, Matrix>> seeds) {
  if (!record_) throw std::logic_error("backward() on a non-recording tape");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  int last = -1;
  for (const auto& [v, g] : seeds) {
    if (g.rows() != v.rows() || g.cols() != v.cols()) throw ShapeError("seed gradient shape mismatch");
    add_grad(v.id(), g);
    last = std::max(last, v.id());
  }
  for (int id = last; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.backward || n.grad.size() == 0) continue;
    // Copy: the callback may touch other nodes of the deque but never this grad.
    const Matrix g = n.grad;
    n.backward(*this, g);
  }
}

void Tape::accumulate(Gradients& grads) const {
  for (const auto& n : nodes_) {
    if (n.param < 0 || n.grad.size() == 0) continue;
    Matrix& dst = grads[static_cast<std::size_t>(n.param)];
    if (dst.size() == 0)
      dst = n.grad;
    else
      dst += n.grad;
  }
}

namespace {

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw ShapeError(std::string(op) + ": " + detail);
}

std::string dims(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul", dims(a.value()) + " * " + dims(b.value()));
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() * b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.needs_grad(ia)) t.add_grad(ia, g * t.value(ib).transpose());
    if (t.needs_grad(ib)) t.add_grad(ib, t.value(ia).transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  require(a.cols() == b.cols(), "matmul_nt", dims(a.value()) + " * (" + dims(b.value()) + ")^T");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() * b.value().transpose(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.needs_grad(ia)) t.add_grad(ia, g * t.value(ib));
    if (t.needs_grad(ib)) t.add_grad(ib, g.transpose() * t.value(ia));
  });
}

Var add(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add", dims(a.value()) + " + " + dims(b.value()));
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.add_grad(ia, g);
    t.add_grad(ib, g);
  });
}

Var sub(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub", dims(a.value()) + " - " + dims(b.value()));
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.add_grad(ia, g);
    t.add_grad(ib, -g);
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.push(a.value() * s, {a}, [ia, s](Tape& t, const Matrix& g) { t.add_grad(ia, g * s); });
}

Var add_row(Var a, Var row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row", dims(a.value()) + " + " + dims(row.value()));
  Tape& t = *a.tape();
  const int ia = a.id(), ir = row.id();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t.push(std::move(out), {a, row}, [ia, ir](Tape& t, const Matrix& g) {
    t.add_grad(ia, g);
    if (t.needs_grad(ir)) t.add_grad(ir, g.colwise().sum());
  });
}

Var relu(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.push(a.value().cwiseMax(0.0), {a}, [ia](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    t.add_grad(ia, (x.array() > 0.0).select(g, 0.0));
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Index n = x.rows(), c = x.cols();
  require(gain.rows() == 1 && gain.cols() == c && bias.rows() == 1 && bias.cols() == c, "layer_norm",
          "gain/bias must be 1x" + std::to_string(c));
  const Matrix& xv = x.value();
  Matrix xhat(n, c);
  Vector inv_std(n);
  for (Index i = 0; i < n; ++i) {
    const double mu = xv.row(i).mean();
    const double var = (xv.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mu) * inv_std(i);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  Tape& t = *x.tape();
  const int ix = x.id(), ig = gain.id(), ib = bias.id();
  return t.push(std::move(out), {x, gain, bias},
                [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Matrix& g) {
                  if (t.needs_grad(ig)) t.add_grad(ig, (g.array() * xhat.array()).colwise().sum().matrix());
                  if (t.needs_grad(ib)) t.add_grad(ib, g.colwise().sum());
                  if (!t.needs_grad(ix)) return;
                  const Matrix dxhat = (g.array().rowwise() * t.value(ig).row(0).array()).matrix();
                  Matrix dx(dxhat.rows(), dxhat.cols());
                  for (Index i = 0; i < dxhat.rows(); ++i) {
                    const double m1 = dxhat.row(i).mean();
                    const double m2 = dxhat.row(i).dot(xhat.row(i)) / static_cast<double>(dxhat.cols());
                    dx.row(i) = (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2) * inv_std(i);
                  }
                  t.add_grad(ix, dx);
                });
}

Var softmax_rows(Var x) {
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  for (Index i = 0; i < xv.rows(); ++i) {
    const double m = xv.row(i).maxCoeff();
    out.row(i) = (xv.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  Tape& t = *x.tape();
  const int ix = x.id();
  const int self = static_cast<int>(t.size());
  return t.push(std::move(out), {x}, [ix, self](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(self);
    const Vector dots = (g.array() * y.array()).rowwise().sum();
    t.add_grad(ix, (y.array() * (g.colwise() - dots).array()).matrix());
  });
}

Var slice_cols(Var x, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= x.cols(), "slice_cols", "range out of bounds");
  Tape& t = *x.tape();
  const int ix = x.id();
  const Index rows = x.rows(), cols = x.cols();
  return t.push(x.value().middleCols(start, count), {x}, [ix, start, count, rows, cols](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(rows, cols);
    full.middleCols(start, count) = g;
    t.add_grad(ix, full);
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols", "no inputs");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const Var& p : parts) {
    require(p.rows() == rows, "concat_cols", "row count mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  std::vector<Index> widths;
  Index off = 0;
  for (const Var& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  Tape& t = *parts[0].tape();
  return t.push(std::move(out), parts, [ids = std::move(ids), widths = std::move(widths)](Tape& t, const Matrix& g) {
    Index off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.needs_grad(ids[k])) t.add_grad(ids[k], g.middleCols(off, widths[k]));
      off += widths[k];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows", "no inputs");
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const Var& p : parts) {
    require(p.cols() == cols, "concat_rows", "column count mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  std::vector<Index> heights;
  Index off = 0;
  for (const Var& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    off += p.rows();
    ids.push_back(p.id());
    heights.push_back(p.rows());
  }
  Tape& t = *parts[0].tape();
  return t.push(std::move(out), parts, [ids = std::move(ids), heights = std::move(heights)](Tape& t, const Matrix& g) {
    Index off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.needs_grad(ids[k])) t.add_grad(ids[k], g.middleRows(off, heights[k]));
      off += heights[k];
    }
  });
}

Var replace_rows(Var x, std::span<const Index> rows, Var row) {
  require(row.rows() == 1 && row.cols() == x.cols(), "replace_rows", "replacement must be 1x" + std::to_string(x.cols()));
  Matrix out = x.value();
  for (Index r : rows) {
    require(r >= 0 && r < x.rows(), "replace_rows", "row index " + std::to_string(r) + " out of range");
    out.row(r) = row.value().row(0);
  }
  Tape& t = *x.tape();
  const int ix = x.id(), irow = row.id();
  std::vector<Index> idx(rows.begin(), rows.end());
  return t.push(std::move(out), {x, row}, [ix, irow, idx = std::move(idx)](Tape& t, const Matrix& g) {
    if (t.needs_grad(ix)) {
      Matrix gx = g;
      for (Index r : idx) gx.row(r).setZero();
      t.add_grad(ix, gx);
    }
    if (t.needs_grad(irow)) {
      RowVector acc = RowVector::Zero(g.cols());
      // A row listed twice is replaced once, so it contributes once.
      std::vector<bool> seen(static_cast<std::size_t>(g.rows()), false);
      for (Index r : idx) {
        if (seen[static_cast<std::size_t>(r)]) continue;
        seen[static_cast<std::size_t>(r)] = true;
        acc += g.row(r);
      }
      t.add_grad(irow, acc);
    }
  });
}

Var gather_rows(Var x, std::span<const Index> source) {
  const Matrix& xv = x.value();
  Matrix out(static_cast<Index>(source.size()), xv.cols());
  for (std::size_t i = 0; i < source.size(); ++i) {
    require(source[i] >= 0 && source[i] < xv.rows(), "gather_rows", "source row out of range");
    out.row(static_cast<Index>(i)) = xv.row(source[i]);
  }
  Tape& t = *x.tape();
  const int ix = x.id();
  const Index rows = xv.rows();
  std::vector<Index> src(source.begin(), source.end());
  return t.push(std::move(out), {x}, [ix, rows, src = std::move(src)](Tape& t, const Matrix& g) {
    Matrix gx = Matrix::Zero(rows, g.cols());
    for (std::size_t i = 0; i < src.size(); ++i) gx.row(src[i]) += g.row(static_cast<Index>(i));
    t.add_grad(ix, gx);
  });
}

Var mean_rows(Var x) {
  Tape& t = *x.tape();
  const int ix = x.id();
  const Index rows = x.rows();
  return t.push(x.value().colwise().mean(), {x}, [ix, rows](Tape& t, const Matrix& g) {
    t.add_grad(ix, g.replicate(rows, 1) / static_cast<double>(rows));
  });
}

Var reshape(Var x, Index rows, Index cols) {
  require(rows * cols == x.value().size(), "reshape", dims(x.value()) + " -> " + std::to_string(rows) + "x" + std::to_string(cols));
  Tape& t = *x.tape();
  const int ix = x.id();
  const Index r0 = x.rows(), c0 = x.cols();
  Matrix out = Eigen::Map<const Matrix>(x.value().data(), rows, cols);
  return t.push(std::move(out), {x}, [ix, r0, c0](Tape& t, const Matrix& g) {
    t.add_grad(ix, Eigen::Map<const Matrix>(g.data(), r0, c0));
  });
}

Var scale_by_entry(Var x, Var w, Index k) {
  require(w.rows() == 1 && k >= 0 && k < w.cols(), "scale_by_entry", "entry index out of range");
  Tape& t = *x.tape();
  const int ix = x.id(), iw = w.id();
  const double s = w.value()(0, k);
  return t.push(x.value() * s, {x, w}, [ix, iw, k](Tape& t, const Matrix& g) {
    if (t.needs_grad(ix)) t.add_grad(ix, g * t.value(iw)(0, k));
    if (t.needs_grad(iw)) {
      Matrix gw = Matrix::Zero(1, t.value(iw).cols());
      gw(0, k) = (g.array() * t.value(ix).array()).sum();
      t.add_grad(iw, gw);
    }
  });
}

Var mse(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mse", dims(a.value()) + " vs " + dims(b.value()));
  const Matrix diff = a.value() - b.value();
  const double n = static_cast<double>(diff.size());
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() / n;
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(out), {a, b}, [ia, ib, diff, n](Tape& t, const Matrix& g) {
    const double s = 2.0 * g(0, 0) / n;
    if (t.needs_grad(ia)) t.add_grad(ia, diff * s);
    if (t.needs_grad(ib)) t.add_grad(ib, diff * -s);
  });
}

Var masked_row_mse(Var pred, Var target, std::span<const Index> rows) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(), "masked_row_mse", "shape mismatch");
  if (rows.empty()) throw std::invalid_argument("masked_row_mse: empty row set");
  const Matrix& p = pred.value();
  const Matrix& q = target.value();
  const double denom = static_cast<double>(rows.size()) * static_cast<double>(p.cols());
  double total = 0.0;
  for (Index r : rows) {
    require(r >= 0 && r < p.rows(), "masked_row_mse", "row index out of range");
    total += (p.row(r) - q.row(r)).squaredNorm();
  }
  Matrix out(1, 1);
  out(0, 0) = total / denom;
  Tape& t = *pred.tape();
  const int ip = pred.id(), it = target.id();
  std::vector<Index> idx(rows.begin(), rows.end());
  return t.push(std::move(out), {pred, target}, [ip, it, idx = std::move(idx), denom](Tape& t, const Matrix& g) {
    const Matrix& p = t.value(ip);
    const Matrix& q = t.value(it);
    Matrix gp = Matrix::Zero(p.rows(), p.cols());
    for (Index r : idx) gp.row(r) += (p.row(r) - q.row(r)) * (2.0 * g(0, 0) / denom);
    if (t.needs_grad(ip)) t.add_grad(ip, gp);
    if (t.needs_grad(it)) t.add_grad(it, -gp);
  });
}

Var l2_normalize_rows(Var x) {
  const Matrix& xv = x.value();
  Vector norms = xv.rowwise().norm();
  for (Index i = 0; i < norms.size(); ++i)
    if (!std::isfinite(norms(i))) throw NumericError("l2_normalize_rows: row " + std::to_string(i) + " is not finite");
  // Rows below the floor are divided by the floor, a linear map.
  const Vector denom = norms.cwiseMax(kNormFloor);
  Matrix out = xv.array().colwise() / denom.array();
  Tape& t = *x.tape();
  const int ix = x.id();
  const int self = static_cast<int>(t.size());
  return t.push(std::move(out), {x}, [ix, self, norms = std::move(norms), denom](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(self);
    Vector dots = (g.array() * y.array()).rowwise().sum();
    for (Index i = 0; i < dots.size(); ++i)
      if (!(norms(i) > kNormFloor)) dots(i) = 0.0;
    Matrix gx = (g - (y.array().colwise() * dots.array()).matrix()).array().colwise() / denom.array();
    t.add_grad(ix, gx);
  });
}

Var info_nce(Var logits, std::span<const Index> positive) {
  const Matrix& s = logits.value();
  const Index n = s.rows();
  require(s.cols() == n && static_cast<Index>(positive.size()) == n, "info_nce", "logits must be square with one positive per row");
  Matrix prob = Matrix::Zero(n, n);
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Index p = positive[static_cast<std::size_t>(i)];
    require(p >= 0 && p < n && p != i, "info_nce", "invalid positive index");
    double m = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < n; ++j)
      if (j != i) m = std::max(m, s(i, j));
    double z = 0.0;
    for (Index j = 0; j < n; ++j)
      if (j != i) {
        prob(i, j) = std::exp(s(i, j) - m);
        z += prob(i, j);
      }
    prob.row(i) /= z;
    total += -(s(i, p) - m) + std::log(z);
  }
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(n);
  Tape& t = *logits.tape();
  const int il = logits.id();
  std::vector<Index> pos(positive.begin(), positive.end());
  return t.push(std::move(out), {logits}, [il, prob = std::move(prob), pos = std::move(pos)](Tape& t, const Matrix& g) {
    const Index n = prob.rows();
    Matrix gl = prob;
    for (Index i = 0; i < n; ++i) gl(i, pos[static_cast<std::size_t>(i)]) -= 1.0;
    t.add_grad(il, gl * (g(0, 0) / static_cast<double>(n)));
  });
}

Var pinball(Var pred, Var target, std::span<const double> levels) {
  const Matrix& p = pred.value();
  const Matrix& y = target.value();
  require(y.cols() == 1 && y.rows() == p.rows() && p.cols() == static_cast<Index>(levels.size()), "pinball",
          "pred " + dims(p) + ", target " + dims(y));
  const double n = static_cast<double>(p.size());
  Matrix slope(p.rows(), p.cols());
  double total = 0.0;
  for (Index r = 0; r < p.rows(); ++r)
    for (Index q = 0; q < p.cols(); ++q) {
      const double tau = levels[static_cast<std::size_t>(q)];
      const double diff = y(r, 0) - p(r, q);
      if (diff > 0.0) {
        total += tau * diff;
        slope(r, q) = -tau;
      } else if (diff < 0.0) {
        total += (tau - 1.0) * diff;
        slope(r, q) = 1.0 - tau;
      } else {
        slope(r, q) = 0.0;
      }
    }
  Matrix out(1, 1);
  out(0, 0) = total / n;
  Tape& t = *pred.tape();
  const int ip = pred.id(), it = target.id();
  return t.push(std::move(out), {pred, target}, [ip, it, slope = std::move(slope), n](Tape& t, const Matrix& g) {
    if (t.needs_grad(ip)) t.add_grad(ip, slope * (g(0, 0) / n));
    if (t.needs_grad(it)) t.add_grad(it, (-slope).rowwise().sum() * (g(0, 0) / n));
  });
}

}  // namespace patchcast::ad
