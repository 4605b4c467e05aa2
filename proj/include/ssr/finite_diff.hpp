#pragma once

// Central-difference gradient oracle. Runs in float64 regardless of the
// scalar type under test; the loss callback is re-evaluated with each
// parameter entry displaced by +/- h, so it must be deterministic (re-seed
// any RNG it uses on every call).

#include "ssr/tensor.hpp"

#include <functional>

namespace ssr {

template <class F>
std::vector<MatD> finite_diff_grad(F&& loss_fn,
                                   const std::vector<Var<double>>& params,
                                   double h) {
  if (!(h > 0)) throw ContractError("finite_diff_grad: h must be positive");
  std::vector<MatD> grads;
  grads.reserve(params.size());
  for (const auto& p : params) {
    MatD g(p->rows(), p->cols());
    for (Eigen::Index r = 0; r < p->rows(); ++r) {
      for (Eigen::Index c = 0; c < p->cols(); ++c) {
        const double x0 = p->value(r, c);
        p->value(r, c) = x0 + h;
        const double fp = loss_fn();
        p->value(r, c) = x0 - h;
        const double fm = loss_fn();
        p->value(r, c) = x0;
        if (!std::isfinite(fp) || !std::isfinite(fm))
          throw NumericError(
              "finite_diff_grad: loss is not finite near the base point");
        g(r, c) = (fp - fm) / (2.0 * h);
      }
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

// PyTorch-style gradient agreement: |a - b| <= atol + rtol * max(|a|, |b|).
// Returns the largest violation ratio (<= 1 means every entry passed).
inline double grad_agreement_ratio(const std::vector<MatD>& analytic,
                                   const std::vector<MatD>& numeric,
                                   double atol, double rtol) {
  if (analytic.size() != numeric.size())
    throw DimensionError("grad_agreement_ratio: tensor counts disagree");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const MatD& a = analytic[i];
    const MatD& b = numeric[i];
    if (a.rows() != b.rows() || a.cols() != b.cols())
      throw DimensionError("grad_agreement_ratio: tensor " +
                           std::to_string(i) + " shapes disagree: " +
                           shape_str(a.rows(), a.cols()) + " vs " +
                           shape_str(b.rows(), b.cols()));
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      for (Eigen::Index c = 0; c < a.cols(); ++c) {
        const double diff = std::abs(a(r, c) - b(r, c));
        const double tol =
            atol + rtol * std::max(std::abs(a(r, c)), std::abs(b(r, c)));
        worst = std::max(worst, diff / tol);
      }
    }
  }
  return worst;
}

}  // namespace ssr
