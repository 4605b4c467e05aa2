#pragma once

// Differentiable operations. Every function records one node on the tape and
// installs a closure that scatters the node's gradient into its parents.
// Conventions:
//  - logical rank: 0 scalar (1x1), 1 vector (1xn), 2 matrix
//  - axis on rank-2: 0 = down each column, 1 = across each row;
//    rank-1 has the single axis 0 (its storage row)
//  - masked attention logits are *assigned* the floor value, not offset by
//    it, so masked entries are run-independent constants and exp() takes
//    them to exact +0, which is what makes the causality guarantee bitwise.

#include "ssr/tensor.hpp"

#include <cmath>
#include <cstdint>

namespace ssr {

template <class S>
inline constexpr S kMaskFloor = static_cast<S>(-1e9);

namespace detail {

template <class S>
void check_same_shape(const char* op, const Var<S>& a, const Var<S>& b) {
  if (a->rows() != b->rows() || a->cols() != b->cols())
    throw DimensionError(std::string(op) + ": operand shapes disagree: " +
                         a->shape() + " vs " + b->shape());
}

// Maps a logical axis to the storage axis (0 = columns run, 1 = along rows).
template <class S>
int storage_axis(const char* op, const Var<S>& x, int axis) {
  if (x->rank == 1) {
    if (axis != 0)
      throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                           " out of range for rank-1 operand");
    return 1;  // vectors are stored as rows
  }
  if (x->rank == 2) {
    if (axis != 0 && axis != 1)
      throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                           " out of range for rank-2 operand");
    return axis;
  }
  throw DimensionError(std::string(op) + ": operand of rank " +
                       std::to_string(x->rank) + " has no axis to reduce");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class S>
Var<S> add(Tape<S>& t, const Var<S>& a, const Var<S>& b) {
  detail::check_same_shape("add", a, b);
  auto out = t.record(a->value + b->value, std::max(a->rank, b->rank), {a, b});
  out->backprop = [self = out.get(), a, b]() {
    if (a->requires_grad) a->accumulate(self->grad);
    if (b->requires_grad) b->accumulate(self->grad);
  };
  return out;
}

template <class S>
Var<S> sub(Tape<S>& t, const Var<S>& a, const Var<S>& b) {
  detail::check_same_shape("sub", a, b);
  auto out = t.record(a->value - b->value, std::max(a->rank, b->rank), {a, b});
  out->backprop = [self = out.get(), a, b]() {
    if (a->requires_grad) a->accumulate(self->grad);
    if (b->requires_grad) b->accumulate((-self->grad).eval());
  };
  return out;
}

template <class S>
Var<S> hadamard(Tape<S>& t, const Var<S>& a, const Var<S>& b) {
  detail::check_same_shape("hadamard", a, b);
  auto out = t.record(a->value.cwiseProduct(b->value),
                      std::max(a->rank, b->rank), {a, b});
  out->backprop = [self = out.get(), a, b]() {
    if (a->requires_grad) a->accumulate(self->grad.cwiseProduct(b->value));
    if (b->requires_grad) b->accumulate(self->grad.cwiseProduct(a->value));
  };
  return out;
}

// scale * x + shift, elementwise.
template <class S>
Var<S> affine(Tape<S>& t, const Var<S>& x, S scale, S shift) {
  Mat<S> v = (x->value.array() * scale + shift).matrix();
  auto out = t.record(std::move(v), x->rank, {x});
  out->backprop = [self = out.get(), x, scale]() {
    if (x->requires_grad) x->accumulate((self->grad * scale).eval());
  };
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class S>
Var<S> matmul(Tape<S>& t, const Var<S>& a, const Var<S>& b) {
  if (a->cols() != b->rows())
    throw DimensionError("matmul: inner dimensions disagree: " + a->shape() +
                         " * " + b->shape());
  auto out = t.record(a->value * b->value, 2, {a, b});
  out->backprop = [self = out.get(), a, b]() {
    if (a->requires_grad)
      a->accumulate((self->grad * b->value.transpose()).eval());
    if (b->requires_grad)
      b->accumulate((a->value.transpose() * self->grad).eval());
  };
  return out;
}

// a * b^T without materializing the transpose on the tape.
template <class S>
Var<S> matmul_nt(Tape<S>& t, const Var<S>& a, const Var<S>& b) {
  if (a->cols() != b->cols())
    throw DimensionError("matmul_nt: inner dimensions disagree: " +
                         a->shape() + " * (" + b->shape() + ")^T");
  auto out = t.record(a->value * b->value.transpose(), 2, {a, b});
  out->backprop = [self = out.get(), a, b]() {
    if (a->requires_grad) a->accumulate((self->grad * b->value).eval());
    if (b->requires_grad)
      b->accumulate((self->grad.transpose() * a->value).eval());
  };
  return out;
}

// Adds a 1xN bias row to every row of x.
template <class S>
Var<S> add_row_broadcast(Tape<S>& t, const Var<S>& x, const Var<S>& bias) {
  if (bias->rows() != 1 || bias->cols() != x->cols())
    throw DimensionError("add_row_broadcast: bias " + bias->shape() +
                         " does not broadcast over " + x->shape());
  Mat<S> v = x->value.rowwise() + bias->value.row(0);
  auto out = t.record(std::move(v), x->rank, {x, bias});
  out->backprop = [self = out.get(), x, bias]() {
    if (x->requires_grad) x->accumulate(self->grad);
    if (bias->requires_grad)
      bias->accumulate(self->grad.colwise().sum().eval());
  };
  return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization

template <class S>
Var<S> softmax(Tape<S>& t, const Var<S>& x, int axis) {
  const int sa = detail::storage_axis("softmax", x, axis);
  if ((sa == 1 && x->cols() == 0) || (sa == 0 && x->rows() == 0))
    throw DimensionError("softmax: empty axis slice on shape " + x->shape());
  Mat<S> y(x->rows(), x->cols());
  if (sa == 1) {
    for (Eigen::Index r = 0; r < x->rows(); ++r) {
      const S mx = x->value.row(r).maxCoeff();
      y.row(r) = (x->value.row(r).array() - mx).exp().matrix();
      y.row(r) /= y.row(r).sum();
    }
  } else {
    for (Eigen::Index c = 0; c < x->cols(); ++c) {
      const S mx = x->value.col(c).maxCoeff();
      y.col(c) = (x->value.col(c).array() - mx).exp().matrix();
      y.col(c) /= y.col(c).sum();
    }
  }
  auto out = t.record(std::move(y), x->rank, {x});
  out->backprop = [self = out.get(), x, sa]() {
    if (!x->requires_grad) return;
    const Mat<S>& y = self->value;
    const Mat<S>& g = self->grad;
    Mat<S> dx(y.rows(), y.cols());
    if (sa == 1) {
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const S d = g.row(r).dot(y.row(r));
        dx.row(r) = ((g.row(r).array() - d) * y.row(r).array()).matrix();
      }
    } else {
      for (Eigen::Index c = 0; c < y.cols(); ++c) {
        const S d = g.col(c).dot(y.col(c));
        dx.col(c) = ((g.col(c).array() - d) * y.col(c).array()).matrix();
      }
    }
    x->accumulate(dx);
  };
  return out;
}

template <class S>
Var<S> log_softmax(Tape<S>& t, const Var<S>& x, int axis) {
  const int sa = detail::storage_axis("log_softmax", x, axis);
  if ((sa == 1 && x->cols() == 0) || (sa == 0 && x->rows() == 0))
    throw DimensionError("log_softmax: empty axis slice on shape " +
                         x->shape());
  Mat<S> y(x->rows(), x->cols());
  if (sa == 1) {
    for (Eigen::Index r = 0; r < x->rows(); ++r) {
      const S mx = x->value.row(r).maxCoeff();
      auto shifted = (x->value.row(r).array() - mx).eval();
      const S lse = std::log(shifted.exp().sum());
      y.row(r) = (shifted - lse).matrix();
    }
  } else {
    for (Eigen::Index c = 0; c < x->cols(); ++c) {
      const S mx = x->value.col(c).maxCoeff();
      auto shifted = (x->value.col(c).array() - mx).eval();
      const S lse = std::log(shifted.exp().sum());
      y.col(c) = (shifted - lse).matrix();
    }
  }
  auto out = t.record(std::move(y), x->rank, {x});
  out->backprop = [self = out.get(), x, sa]() {
    if (!x->requires_grad) return;
    const Mat<S>& y = self->value;
    const Mat<S>& g = self->grad;
    Mat<S> dx(y.rows(), y.cols());
    if (sa == 1) {
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const S sg = g.row(r).sum();
        dx.row(r) =
            (g.row(r).array() - y.row(r).array().exp() * sg).matrix();
      }
    } else {
      for (Eigen::Index c = 0; c < y.cols(); ++c) {
        const S sg = g.col(c).sum();
        dx.col(c) =
            (g.col(c).array() - y.col(c).array().exp() * sg).matrix();
      }
    }
    x->accumulate(dx);
  };
  return out;
}

// Normalizes each row of x with population statistics, then applies the
// learned per-feature gain and shift. eps >= 0; a row with zero variance
// under eps = 0 has no finite output and raises NumericError.
template <class S>
Var<S> layer_norm(Tape<S>& t, const Var<S>& x, const Var<S>& gamma,
                  const Var<S>& beta, S eps) {
  if (eps < S(0)) throw ContractError("layer_norm: eps must be >= 0");
  if (x->cols() == 0)
    throw DimensionError("layer_norm: empty normalization axis on shape " +
                         x->shape());
  if (gamma->rows() != 1 || gamma->cols() != x->cols())
    throw DimensionError("layer_norm: gamma " + gamma->shape() +
                         " does not match features of " + x->shape());
  if (beta->rows() != 1 || beta->cols() != x->cols())
    throw DimensionError("layer_norm: beta " + beta->shape() +
                         " does not match features of " + x->shape());
  const Eigen::Index T = x->rows(), d = x->cols();
  Mat<S> xhat(T, d);
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv(T);
  for (Eigen::Index r = 0; r < T; ++r) {
    const S mu = x->value.row(r).mean();
    const S var = (x->value.row(r).array() - mu).square().mean();
    const S denom = var + eps;
    if (!(denom > S(0)))
      throw NumericError("layer_norm: zero variance row with eps = 0");
    inv(r) = S(1) / std::sqrt(denom);
    xhat.row(r) = ((x->value.row(r).array() - mu) * inv(r)).matrix();
  }
  Mat<S> y = ((xhat.array().rowwise() * gamma->value.row(0).array())
                  .rowwise() +
              beta->value.row(0).array())
                 .matrix();
  auto out = t.record(std::move(y), x->rank, {x, gamma, beta});
  out->backprop = [self = out.get(), x, gamma, beta, xhat = std::move(xhat),
                   inv = std::move(inv)]() {
    const Mat<S>& g = self->grad;
    if (gamma->requires_grad)
      gamma->accumulate(g.cwiseProduct(xhat).colwise().sum().eval());
    if (beta->requires_grad) beta->accumulate(g.colwise().sum().eval());
    if (!x->requires_grad) return;
    Mat<S> dx(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      auto gg = (g.row(r).array() * gamma->value.row(0).array()).eval();
      const S m1 = gg.mean();
      const S m2 = (gg * xhat.row(r).array()).mean();
      dx.row(r) = ((gg - m1 - xhat.row(r).array() * m2) * inv(r)).matrix();
    }
    x->accumulate(dx);
  };
  return out;
}

// Exact GELU: x * Phi(x) with Phi the standard normal CDF.
template <class S>
Var<S> gelu(Tape<S>& t, const Var<S>& x) {
  const S inv_sqrt2 = static_cast<S>(0.70710678118654752440);
  const S inv_sqrt2pi = static_cast<S>(0.39894228040143267794);
  Mat<S> phi = x->value.unaryExpr([inv_sqrt2](S v) {
    return static_cast<S>(0.5) * (S(1) + std::erf(v * inv_sqrt2));
  });
  Mat<S> y = x->value.cwiseProduct(phi);
  auto out = t.record(std::move(y), x->rank, {x});
  out->backprop = [self = out.get(), x, phi = std::move(phi), inv_sqrt2pi]() {
    if (!x->requires_grad) return;
    auto xa = x->value.array();
    Mat<S> d =
        (phi.array() + xa * (-(xa * xa) * S(0.5)).exp() * inv_sqrt2pi).matrix();
    x->accumulate(self->grad.cwiseProduct(d));
  };
  return out;
}

// Inverted dropout: kept entries are scaled by 1/(1-p) so expectations match
// eval mode. Draws exactly one uniform per entry (row-major order) whenever
// training is set, keeping the RNG stream length shape-determined.
template <class S>
Var<S> dropout(Tape<S>& t, const Var<S>& x, double p, Rng& rng,
               bool training) {
  if (!(p >= 0.0 && p < 1.0))
    throw ContractError("dropout: rate must lie in [0, 1)");
  if (!training || p == 0.0) {
    auto out = t.record(x->value, x->rank, {x});
    out->backprop = [self = out.get(), x]() {
      if (x->requires_grad) x->accumulate(self->grad);
    };
    return out;
  }
  const S scale = static_cast<S>(1.0 / (1.0 - p));
  Mat<S> mask(x->rows(), x->cols());
  for (Eigen::Index r = 0; r < x->rows(); ++r)
    for (Eigen::Index c = 0; c < x->cols(); ++c)
      mask(r, c) = rng.real01() < p ? S(0) : scale;
  auto out = t.record(x->value.cwiseProduct(mask), x->rank, {x});
  out->backprop = [self = out.get(), x, mask = std::move(mask)]() {
    if (x->requires_grad) x->accumulate(self->grad.cwiseProduct(mask));
  };
  return out;
}

// ---------------------------------------------------------------------------
// Structure: gather / slice / concat / masking

// Rows of a learned table selected by token id; duplicate ids accumulate
// gradient on the shared row.
template <class S>
Var<S> embedding_rows(Tape<S>& t, const Var<S>& table,
                      const std::vector<int>& ids) {
  Mat<S> v(static_cast<Eigen::Index>(ids.size()), table->cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table->rows())
      throw RangeError("embedding_rows: id " + std::to_string(ids[i]) +
                       " outside table of " + std::to_string(table->rows()) +
                       " rows");
    v.row(static_cast<Eigen::Index>(i)) = table->value.row(ids[i]);
  }
  auto out = t.record(std::move(v), 2, {table});
  out->backprop = [self = out.get(), table, ids]() {
    if (!table->requires_grad) return;
    Mat<S>& g = table->grad_ref();
    for (std::size_t i = 0; i < ids.size(); ++i)
      g.row(ids[i]) += self->grad.row(static_cast<Eigen::Index>(i));
  };
  return out;
}

template <class S>
Var<S> gather_rows(Tape<S>& t, const Var<S>& x, const std::vector<int>& idx) {
  Mat<S> v(static_cast<Eigen::Index>(idx.size()), x->cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= x->rows())
      throw RangeError("gather_rows: row " + std::to_string(idx[i]) +
                       " outside " + x->shape());
    v.row(static_cast<Eigen::Index>(i)) = x->value.row(idx[i]);
  }
  auto out = t.record(std::move(v), 2, {x});
  out->backprop = [self = out.get(), x, idx]() {
    if (!x->requires_grad) return;
    Mat<S> dx = Mat<S>::Zero(x->rows(), x->cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
      dx.row(idx[i]) += self->grad.row(static_cast<Eigen::Index>(i));
    x->accumulate(dx);
  };
  return out;
}

template <class S>
Var<S> slice_rows(Tape<S>& t, const Var<S>& x, Eigen::Index start,
                  Eigen::Index n) {
  if (start < 0 || n < 0 || start + n > x->rows())
    throw RangeError("slice_rows: [" + std::to_string(start) + ", " +
                     std::to_string(start + n) + ") outside " + x->shape());
  auto out = t.record(x->value.middleRows(start, n).eval(), 2, {x});
  out->backprop = [self = out.get(), x, start, n]() {
    if (!x->requires_grad) return;
    Mat<S> dx = Mat<S>::Zero(x->rows(), x->cols());
    dx.middleRows(start, n) = self->grad;
    x->accumulate(dx);
  };
  return out;
}

template <class S>
Var<S> slice_cols(Tape<S>& t, const Var<S>& x, Eigen::Index start,
                  Eigen::Index n) {
  if (start < 0 || n < 0 || start + n > x->cols())
    throw RangeError("slice_cols: [" + std::to_string(start) + ", " +
                     std::to_string(start + n) + ") outside " + x->shape());
  auto out = t.record(x->value.middleCols(start, n).eval(), x->rank, {x});
  out->backprop = [self = out.get(), x, start, n]() {
    if (!x->requires_grad) return;
    Mat<S> dx = Mat<S>::Zero(x->rows(), x->cols());
    dx.middleCols(start, n) = self->grad;
    x->accumulate(dx);
  };
  return out;
}

template <class S>
Var<S> row(Tape<S>& t, const Var<S>& x, Eigen::Index r) {
  auto out = slice_rows(t, x, r, 1);
  out->rank = 1;
  return out;
}

template <class S>
Var<S> concat_rows(Tape<S>& t, const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no operands");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front()->cols();
  for (const auto& p : parts) {
    if (p->cols() != cols)
      throw DimensionError("concat_rows: column counts disagree: " +
                           parts.front()->shape() + " vs " + p->shape());
    rows += p->rows();
  }
  Mat<S> v(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p->rows()) = p->value;
    at += p->rows();
  }
  auto out = t.record(std::move(v), 2, parts);
  out->backprop = [self = out.get(), parts]() {
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      if (p->requires_grad)
        p->accumulate(self->grad.middleRows(at, p->rows()).eval());
      at += p->rows();
    }
  };
  return out;
}

template <class S>
Var<S> concat_cols(Tape<S>& t, const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts.front()->rows();
  for (const auto& p : parts) {
    if (p->rows() != rows)
      throw DimensionError("concat_cols: row counts disagree: " +
                           parts.front()->shape() + " vs " + p->shape());
    cols += p->cols();
  }
  Mat<S> v(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p->cols()) = p->value;
    at += p->cols();
  }
  auto out = t.record(std::move(v), 2, parts);
  out->backprop = [self = out.get(), parts]() {
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      if (p->requires_grad)
        p->accumulate(self->grad.middleCols(at, p->cols()).eval());
      at += p->cols();
    }
  };
  return out;
}

// Copies x with the listed rows replaced by zeros; their gradient is
// likewise blocked. This is how masked slots are fed to bidirectional
// stacks (the id stream stays untouched, the content is erased).
template <class S>
Var<S> zero_rows(Tape<S>& t, const Var<S>& x, const std::vector<int>& rows) {
  Mat<S> v = x->value;
  for (int r : rows) {
    if (r < 0 || r >= x->rows())
      throw RangeError("zero_rows: row " + std::to_string(r) + " outside " +
                       x->shape());
    v.row(r).setZero();
  }
  auto out = t.record(std::move(v), x->rank, {x});
  out->backprop = [self = out.get(), x, rows]() {
    if (!x->requires_grad) return;
    Mat<S> dx = self->grad;
    for (int r : rows) dx.row(r).setZero();
    x->accumulate(dx);
  };
  return out;
}

// Assigns the mask floor to entries with keep == 0. Assignment (not an
// additive penalty) makes masked logits independent of upstream values,
// which downstream softmax turns into exact zero attention weights.
template <class S>
Var<S> mask_fill(Tape<S>& t, const Var<S>& x,
                 const Eigen::Matrix<std::uint8_t, Eigen::Dynamic,
                                     Eigen::Dynamic, Eigen::RowMajor>& keep,
                 S fill = kMaskFloor<S>) {
  if (keep.rows() != x->rows() || keep.cols() != x->cols())
    throw DimensionError("mask_fill: mask " +
                         shape_str(keep.rows(), keep.cols()) +
                         " does not match " + x->shape());
  for (Eigen::Index r = 0; r < keep.rows(); ++r) {
    if ((keep.row(r).array() != 0).count() == 0)
      throw ContractError("mask_fill: row " + std::to_string(r) +
                          " has zero kept positions");
  }
  Mat<S> v = x->value;
  for (Eigen::Index r = 0; r < v.rows(); ++r)
    for (Eigen::Index c = 0; c < v.cols(); ++c)
      if (keep(r, c) == 0) v(r, c) = fill;
  auto out = t.record(std::move(v), x->rank, {x});
  out->backprop = [self = out.get(), x, keep]() {
    if (!x->requires_grad) return;
    Mat<S> dx = self->grad;
    for (Eigen::Index r = 0; r < dx.rows(); ++r)
      for (Eigen::Index c = 0; c < dx.cols(); ++c)
        if (keep(r, c) == 0) dx(r, c) = S(0);
    x->accumulate(dx);
  };
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

template <class S>
Var<S> mean_rows(Tape<S>& t, const Var<S>& x) {
  if (x->rows() == 0)
    throw DegenerateInputError("mean_rows: no rows to average");
  Mat<S> v = x->value.colwise().mean();
  auto out = t.record(std::move(v), 1, {x});
  out->backprop = [self = out.get(), x]() {
    if (!x->requires_grad) return;
    const S w = S(1) / static_cast<S>(x->rows());
    Mat<S> dx(x->rows(), x->cols());
    dx = (self->grad * w).replicate(x->rows(), 1);
    x->accumulate(dx);
  };
  return out;
}

template <class S>
Var<S> sum_all(Tape<S>& t, const Var<S>& x) {
  Mat<S> v(1, 1);
  v(0, 0) = x->value.sum();
  auto out = t.record(std::move(v), 0, {x});
  out->backprop = [self = out.get(), x]() {
    if (!x->requires_grad) return;
    x->accumulate(
        (Mat<S>::Ones(x->rows(), x->cols()) * self->grad(0, 0)).eval());
  };
  return out;
}

template <class S>
Var<S> mean_all(Tape<S>& t, const Var<S>& x) {
  if (x->value.size() == 0)
    throw DegenerateInputError("mean_all: no entries to average");
  Mat<S> v(1, 1);
  v(0, 0) = x->value.mean();
  auto out = t.record(std::move(v), 0, {x});
  out->backprop = [self = out.get(), x]() {
    if (!x->requires_grad) return;
    const S w = self->grad(0, 0) / static_cast<S>(x->value.size());
    x->accumulate((Mat<S>::Constant(x->rows(), x->cols(), w)).eval());
  };
  return out;
}

// ---------------------------------------------------------------------------
// Cosine similarity

namespace detail {

// d cos(a,b) / da with the norm product clamped below by eps. When a row's
// norm sits at or below the clamp, the norm is treated as the constant eps
// and only the numerator term survives.
template <class S>
void cosine_row_grads(const Eigen::Ref<const Eigen::Matrix<S, 1, -1>>& a,
                      const Eigen::Ref<const Eigen::Matrix<S, 1, -1>>& b,
                      S eps, S gout, Eigen::Ref<Eigen::Matrix<S, 1, -1>> da,
                      bool want_da,
                      Eigen::Ref<Eigen::Matrix<S, 1, -1>> db, bool want_db) {
  const S na_raw = a.norm(), nb_raw = b.norm();
  const S na = std::max(na_raw, eps), nb = std::max(nb_raw, eps);
  const S denom = na * nb;
  const S s = a.dot(b);
  if (want_da) {
    da += gout * (b / denom);
    if (na_raw > eps) da -= gout * (s / (denom * na * na)) * a;
  }
  if (want_db) {
    db += gout * (a / denom);
    if (nb_raw > eps) db -= gout * (s / (denom * nb * nb)) * b;
  }
}

}  // namespace detail

// Row-wise cosine between corresponding rows of a and b; result is m x 1.
template <class S>
Var<S> cosine_rows(Tape<S>& t, const Var<S>& a, const Var<S>& b, S eps) {
  if (!(eps > S(0))) throw ContractError("cosine_rows: eps must be positive");
  detail::check_same_shape("cosine_rows", a, b);
  const Eigen::Index m = a->rows();
  Mat<S> v(m, 1);
  for (Eigen::Index r = 0; r < m; ++r) {
    const S na = std::max(a->value.row(r).norm(), eps);
    const S nb = std::max(b->value.row(r).norm(), eps);
    v(r, 0) = a->value.row(r).dot(b->value.row(r)) / (na * nb);
  }
  auto out = t.record(std::move(v), 2, {a, b});
  out->backprop = [self = out.get(), a, b, eps]() {
    const bool wa = a->requires_grad, wb = b->requires_grad;
    if (!wa && !wb) return;
    Mat<S> da = Mat<S>::Zero(a->rows(), a->cols());
    Mat<S> db = Mat<S>::Zero(b->rows(), b->cols());
    for (Eigen::Index r = 0; r < a->rows(); ++r) {
      detail::cosine_row_grads<S>(a->value.row(r), b->value.row(r), eps,
                                  self->grad(r, 0), da.row(r), wa, db.row(r),
                                  wb);
    }
    if (wa) a->accumulate(da);
    if (wb) b->accumulate(db);
  };
  return out;
}

// cos(u, row_i(M)) for a differentiable u against constant rows M; n x 1.
template <class S>
Var<S> cosine_one_to_rows(Tape<S>& t, const Var<S>& u, const Mat<S>& M,
                          S eps) {
  if (!(eps > S(0)))
    throw ContractError("cosine_one_to_rows: eps must be positive");
  if (u->rows() != 1 || u->cols() != M.cols())
    throw DimensionError("cosine_one_to_rows: u " + u->shape() +
                         " vs rows of " + shape_str(M.rows(), M.cols()));
  const Eigen::Index n = M.rows();
  Mat<S> v(n, 1);
  const S nu_raw = u->value.row(0).norm();
  const S nu = std::max(nu_raw, eps);
  for (Eigen::Index i = 0; i < n; ++i) {
    const S nm = std::max(M.row(i).norm(), eps);
    v(i, 0) = u->value.row(0).dot(M.row(i)) / (nu * nm);
  }
  auto out = t.record(std::move(v), 2, {u});
  out->backprop = [self = out.get(), u, M, eps]() {
    if (!u->requires_grad) return;
    Mat<S> du = Mat<S>::Zero(1, u->cols());
    Mat<S> dm(1, u->cols());  // scratch, gradient into M is discarded
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
      dm.setZero();
      detail::cosine_row_grads<S>(u->value.row(0), M.row(i), eps,
                                  self->grad(i, 0), du.row(0), true, dm.row(0),
                                  false);
    }
    u->accumulate(du);
  };
  return out;
}

// Scalar cosine between two vectors.
template <class S>
Var<S> cosine_sim(Tape<S>& t, const Var<S>& u, const Var<S>& v, S eps) {
  if (u->rows() != 1 || v->rows() != 1)
    throw DimensionError("cosine_sim: expects row vectors, got " + u->shape() +
                         " and " + v->shape());
  auto c = cosine_rows(t, u, v, eps);
  c->rank = 0;
  return c;
}

// ---------------------------------------------------------------------------
// Negative log-likelihood over selected positions

// log_probs is T x V (rows are log-distributions); the loss is the mean of
// -log_probs(t, targets[t]) over positions with loss_mask[t] != 0.
template <class S>
Var<S> nll_loss(Tape<S>& t, const Var<S>& log_probs,
                const std::vector<int>& targets,
                const std::vector<std::uint8_t>& loss_mask) {
  const Eigen::Index T = log_probs->rows();
  if (static_cast<Eigen::Index>(targets.size()) != T ||
      static_cast<Eigen::Index>(loss_mask.size()) != T)
    throw DimensionError(
        "nll_loss: targets/mask length " + std::to_string(targets.size()) +
        "/" + std::to_string(loss_mask.size()) + " vs " +
        std::to_string(T) + " rows");
  std::vector<Eigen::Index> live;
  for (Eigen::Index i = 0; i < T; ++i)
    if (loss_mask[static_cast<std::size_t>(i)] != 0) live.push_back(i);
  if (live.empty())
    throw DegenerateInputError("nll_loss: all positions masked out");
  S acc = S(0);
  for (Eigen::Index i : live) {
    const int tgt = targets[static_cast<std::size_t>(i)];
    if (tgt < 0 || tgt >= log_probs->cols())
      throw RangeError("nll_loss: target id " + std::to_string(tgt) +
                       " outside vocabulary of " +
                       std::to_string(log_probs->cols()));
    acc -= log_probs->value(i, tgt);
  }
  Mat<S> v(1, 1);
  v(0, 0) = acc / static_cast<S>(live.size());
  auto out = t.record(std::move(v), 0, {log_probs});
  out->backprop = [self = out.get(), log_probs, targets,
                   live = std::move(live)]() {
    if (!log_probs->requires_grad) return;
    Mat<S> d = Mat<S>::Zero(log_probs->rows(), log_probs->cols());
    const S w = self->grad(0, 0) / static_cast<S>(live.size());
    for (Eigen::Index i : live)
      d(i, targets[static_cast<std::size_t>(i)]) -= w;
    log_probs->accumulate(d);
  };
  return out;
}

}  // namespace ssr
