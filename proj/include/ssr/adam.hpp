#pragma once

// Adam with bias correction. State rides alongside an ordered parameter
// list; the pairing by position is part of the determinism contract.

#include "ssr/tensor.hpp"

namespace ssr {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class S>
struct AdamState {
  AdamConfig cfg;
  long step_count = 0;
  std::vector<Mat<S>> m;
  std::vector<Mat<S>> v;

  AdamState(const std::vector<Var<S>>& params, AdamConfig c) : cfg(c) {
    if (!(cfg.lr > 0)) throw ContractError("adam: lr must be positive");
    if (!(cfg.beta1 >= 0 && cfg.beta1 < 1 && cfg.beta2 >= 0 && cfg.beta2 < 1))
      throw ContractError("adam: betas must lie in [0, 1)");
    m.reserve(params.size());
    v.reserve(params.size());
    for (const auto& p : params) {
      m.push_back(Mat<S>::Zero(p->rows(), p->cols()));
      v.push_back(Mat<S>::Zero(p->rows(), p->cols()));
    }
  }
};

// One update over all parameters. A parameter whose gradient was never
// touched this step contributes a zero gradient (moments decay, value
// moves only by the decayed momentum, which is zero from a fresh state).
template <class S>
void adam_step(const std::vector<Var<S>>& params, AdamState<S>& st) {
  if (params.size() != st.m.size())
    throw DimensionError("adam_step: state tracks " +
                         std::to_string(st.m.size()) + " tensors, got " +
                         std::to_string(params.size()));
  st.step_count += 1;
  const double bc1 = 1.0 - std::pow(st.cfg.beta1, st.step_count);
  const double bc2 = 1.0 - std::pow(st.cfg.beta2, st.step_count);
  const S b1 = static_cast<S>(st.cfg.beta1), b2 = static_cast<S>(st.cfg.beta2);
  const S inv_bc1 = static_cast<S>(1.0 / bc1);
  const S inv_bc2 = static_cast<S>(1.0 / bc2);
  const S lr = static_cast<S>(st.cfg.lr);
  const S eps = static_cast<S>(st.cfg.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    if (st.m[i].rows() != p.rows() || st.m[i].cols() != p.cols())
      throw DimensionError("adam_step: tensor " + std::to_string(i) +
                           " changed shape: " +
                           shape_str(st.m[i].rows(), st.m[i].cols()) +
                           " vs " + p.shape());
    const Mat<S>& g = p.grad_ref();
    st.m[i] = b1 * st.m[i] + (S(1) - b1) * g;
    st.v[i] = (b2 * st.v[i].array() + (S(1) - b2) * g.array().square()).matrix();
    p.value.array() -= lr * (st.m[i].array() * inv_bc1) /
                       ((st.v[i].array() * inv_bc2).sqrt() + eps);
  }
}

// Clears accumulated gradients of the given leaves between steps.
template <class S>
void zero_grads(const std::vector<Var<S>>& params) {
  for (const auto& p : params) p->grad.resize(0, 0);
}

}  // namespace ssr
