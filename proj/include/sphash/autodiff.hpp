#pragma once

#include "sphash/types.hpp"

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

// Reverse-mode differentiation over dense double matrices.
//
// A Tape records every operation applied to its Vars. Nodes are appended in
// creation order, so that order is already topological; backward() walks it in
// reverse and visits every node once. Values and gradients are 2-D (rows are
// batch items); scalars are 1x1.

namespace sphash::ad {

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  /// Gradient from the last backward(); zeros if the node was not reached.
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  /// Receives dL/d(output) and accumulates into the inputs via accumulate().
  using BackwardFn = std::function<void(Tape&, const Matrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// A tracked leaf; backward() produces its gradient.
  Var variable(Matrix value);

  /// Appends an operation node. The node requires grad if any input does.
  Var record(Matrix value, std::vector<Var> inputs, BackwardFn backward);

  /// Clears previous gradients, then propagates from a 1x1 loss.
  void backward(const Var& loss);

  void accumulate(const Var& target, const Matrix& delta);

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Matrix& grad(int id) const;
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<int> inputs;
    BackwardFn backward;
  };
  // deque keeps references returned by value() stable while recording.
  std::deque<Node> nodes_;
  mutable std::deque<Matrix> zero_cache_;
};

enum class Mode { train, eval };

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
/// Elementwise product.
Var mul(const Var& a, const Var& b);
/// Adds a 1xC row to every row of a.
Var add_row(const Var& a, const Var& row);
Var add_scalar(const Var& a, double c);
Var scale(const Var& a, double c);
Var relu(const Var& a);
/// max(x, 0); same rule as relu, named for loss code.
Var hinge(const Var& a);
/// log(max(x, eps)); zero gradient where the guard is active.
Var log(const Var& a, double eps);
Var sum(const Var& a);
Var mean(const Var& a);
/// Frobenius norm of the whole matrix, as 1x1.
Var euclidean_norm(const Var& a);
/// Per-row Euclidean norm, as Nx1. Gradient is zero at a zero row.
Var row_norm(const Var& a);

/// Each row split into consecutive blocks of `block`; each block divided by max(||v||, eps).
Var block_l2_normalize(const Var& a, Eigen::Index block, double eps = 1e-12);
/// Max-subtracted softmax within each consecutive block of `block` columns.
Var block_softmax(const Var& a, Eigen::Index block);
/// Forward: one-hot at the argmax of each block (lowest index on ties). Backward: identity.
Var straight_through_argmax(const Var& a, Eigen::Index block);

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var concat_cols(std::span<const Var> parts);
Var gather_rows(const Var& a, std::span<const Eigen::Index> rows);
/// Same value, no gradient path.
Var detach(const Var& a);

/// Entry i is min over j != i of ||a_i - a_j|| (lowest j on ties). Needs >= 2 rows.
Var nearest_neighbour_distance(const Var& a);
/// Entry i is min over rows j of `refs` of ||a_i - refs_j||. `chosen`, when given, receives the argmins.
Var nearest_row_distance(const Var& a, const Var& refs, std::vector<Eigen::Index>* chosen = nullptr);

struct BatchMoments {
  Eigen::RowVectorXd mean;
  /// Biased (1/N) variance over the batch.
  Eigen::RowVectorXd variance;
};

/// Per-feature normalization over the batch (train) or with the given running statistics (eval).
/// gamma and beta are 1xC. In train mode `moments` receives the batch statistics.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, const Eigen::RowVectorXd& running_mean,
               const Eigen::RowVectorXd& running_var, Mode mode, double eps, BatchMoments* moments = nullptr);

}  // namespace sphash::ad
