#pragma once

#include "sphash/autodiff.hpp"
#include "sphash/types.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace sphash {

struct LossWeights {
  double tri_y = 0.1;
  double koleo_y = 0.1;
  double koleo_w = 0.1;
  double quant = 0.1;
  double margin_z = 0.1;
  double margin_y = 0.1;
  double log_eps = 1e-10;

  void validate() const;
};

/// Row indices into a minibatch: anchor[i], positive[i], negative[i] form one triplet.
struct TripletBatch {
  std::vector<Eigen::Index> anchor;
  std::vector<Eigen::Index> positive;
  std::vector<Eigen::Index> negative;

  std::size_t size() const { return anchor.size(); }
};

/// mean_i [ ||a_i - p_i|| - ||a_i - n_i|| + margin ]_+
ad::Var triplet_loss(const ad::Var& anchor, const ad::Var& positive, const ad::Var& negative, double margin);

/// Triplet hinge between relaxed anchors and straight-through binarized positives/negatives.
/// Throws unless every block of the code arguments is one-hot.
ad::Var asymmetric_triplet_loss(const ad::Var& z_anchor, const ad::Var& b_positive, const ad::Var& b_negative,
                                double margin, Eigen::Index block_size);

/// Kozachenko-Leonenko surrogate: sum_i log(max(rho_i, eps)), rho_i the nearest-neighbour distance.
/// Larger is more spread out; the objective subtracts it.
ad::Var koleo_loss(const ad::Var& points, double log_eps = 1e-10);

/// Sum over blocks of koleo_loss on the rows of each W_m.
ad::Var koleo_w_loss(std::span<const ad::Var> quantiser, double log_eps = 1e-10);

/// sum over batch and blocks of ||y^(m) - w||, w the nearest row of W_m.
/// Differentiable in both arguments; the training loop routes it to W only.
ad::Var quant_pull_loss(const ad::Var& y, std::span<const ad::Var> quantiser, Eigen::Index block_size);

struct LossComponents {
  ad::Var tri_z;
  ad::Var tri_y;
  ad::Var koleo_y;
  ad::Var koleo_w;
  ad::Var quant;
};

/// L = tri_z + l1 tri_y - l2 koleo_y - l3 koleo_w + l4 quant.
ad::Var total_objective(const LossComponents& c, const LossWeights& w);

/// Plain value of the same combination.
double total_objective_value(double tri_z, double tri_y, double koleo_y, double koleo_w, double quant,
                             const LossWeights& w);

/// Mean per-block Shannon entropy in bits, with 0 log 0 = 0. `z` is one code of M blocks of K.
template <typename Derived>
double block_entropy(const Eigen::MatrixBase<Derived>& z, Eigen::Index K) {
  require(K > 0 && z.size() % K == 0, "block_entropy: length is not a multiple of K");
  const Eigen::Index M = z.size() / K;
  double h = 0.0;
  for (Eigen::Index m = 0; m < M; ++m) {
    for (Eigen::Index k = 0; k < K; ++k) {
      const double p = static_cast<double>(z(m * K + k));
      if (p > 0.0) h -= p * std::log2(p);
    }
  }
  return h / static_cast<double>(M);
}

/// block_entropy of the batch-mean code (rows are codes).
template <typename Derived>
double batch_block_entropy(const Eigen::MatrixBase<Derived>& z, Eigen::Index K) {
  require(z.rows() > 0, "batch_block_entropy: empty batch");
  const Eigen::RowVectorXd mean = z.template cast<double>().colwise().mean();
  return block_entropy(mean, K);
}

}  // namespace sphash
