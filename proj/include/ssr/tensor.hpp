#pragma once

// Reverse-mode autodiff tape over dense Eigen matrices.
//
// A TensorNode wraps a value, a lazily allocated gradient, and a backprop
// closure that scatters the node's gradient into its parents. Leaves
// (parameters and constants) live off-tape; every operation result is
// recorded on the tape in creation order, so one reverse sweep visits each
// operation exactly once. Rank is a logical tag (0 scalar, 1 vector,
// 2 matrix) carried for shape reporting and checkpoint extents; storage is
// always a row-major matrix (scalars 1x1, vectors 1xn).

#include "ssr/common.hpp"

#include <functional>
#include <memory>
#include <utility>

namespace ssr {

template <class S>
struct TensorNode {
  Mat<S> value;
  Mat<S> grad;  // empty until the first accumulation
  int rank = 2;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<S>>> parents;
  std::function<void()> backprop;  // set on op results only

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }

  void accumulate(const Mat<S>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }

  // Gradient with value's shape, zero-filled if not yet touched.
  Mat<S>& grad_ref() {
    if (grad.size() == 0) grad = Mat<S>::Zero(value.rows(), value.cols());
    return grad;
  }

  std::string shape() const { return shape_str(value.rows(), value.cols()); }
};

template <class S>
using Var = std::shared_ptr<TensorNode<S>>;

// Leaf constructors; leaves are not recorded on any tape.
template <class S>
Var<S> make_leaf(Mat<S> value, bool requires_grad, int rank = 2) {
  auto n = std::make_shared<TensorNode<S>>();
  n->value = std::move(value);
  n->rank = rank;
  n->requires_grad = requires_grad;
  return n;
}

template <class S>
Var<S> make_param(Mat<S> value, int rank = 2) {
  return make_leaf<S>(std::move(value), true, rank);
}

template <class S>
Var<S> make_const(Mat<S> value, int rank = 2) {
  return make_leaf<S>(std::move(value), false, rank);
}

template <class S>
class Tape {
 public:
  // Records an op result. Only op results carry backprop closures.
  Var<S> record(Mat<S> value, int rank, std::vector<Var<S>> parents) {
    auto n = std::make_shared<TensorNode<S>>();
    n->value = std::move(value);
    n->rank = rank;
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
      if (p->requires_grad) n->requires_grad = true;
    nodes_.push_back(n);
    return n;
  }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse creation
  // order. Gradients of ops recorded on this tape are reset first, so a
  // repeated call re-propagates and leaf gradients accumulate across calls.
  void backward(const Var<S>& loss) {
    if (!loss) throw ContractError("backward: null loss");
    if (loss->value.size() != 1)
      throw ContractError("backward: loss must be a scalar, got shape " +
                          loss->shape());
    bool on_tape = false;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->get() == loss.get()) {
        on_tape = true;
        break;
      }
    }
    if (!on_tape && !loss->parents.empty())
      throw ContractError("backward: loss is not a node of this tape");
    for (const auto& n : nodes_) n->grad.resize(0, 0);
    loss->accumulate(Mat<S>::Ones(1, 1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      TensorNode<S>& n = **it;
      if (n.grad.size() != 0 && n.backprop) n.backprop();
    }
  }

  std::size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

 private:
  std::vector<Var<S>> nodes_;
};

}  // namespace ssr
