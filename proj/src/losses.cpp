#include "sphash/losses.hpp"

#include <string>

namespace sphash {

void LossWeights::validate() const {
  require(tri_y >= 0 && koleo_y >= 0 && koleo_w >= 0 && quant >= 0, "LossWeights: lambdas must be non-negative");
  require(margin_z >= 0 && margin_y >= 0, "LossWeights: margins must be non-negative");
  require(log_eps > 0, "LossWeights: log guard must be positive");
}

ad::Var triplet_loss(const ad::Var& anchor, const ad::Var& positive, const ad::Var& negative, double margin) {
  require(anchor.cols() == positive.cols() && anchor.cols() == negative.cols() && anchor.rows() == positive.rows() &&
              anchor.rows() == negative.rows(),
          "triplet_loss: embedding shapes differ");
  const ad::Var d_pos = ad::row_norm(ad::sub(anchor, positive));
  const ad::Var d_neg = ad::row_norm(ad::sub(anchor, negative));
  return ad::mean(ad::hinge(ad::add_scalar(ad::sub(d_pos, d_neg), margin)));
}

namespace {

void require_one_hot(const Matrix& b, Eigen::Index K, const char* what) {
  require(K > 0 && b.cols() % K == 0, std::string(what) + ": width is not a multiple of K");
  for (Eigen::Index i = 0; i < b.rows(); ++i) {
    for (Eigen::Index m = 0; m * K < b.cols(); ++m) {
      auto blk = b.row(i).segment(m * K, K);
      const bool binary = ((blk.array() == 0.0) || (blk.array() == 1.0)).all();
      if (!binary || blk.sum() != 1.0) {
        throw ContractError(std::string(what) + ": row " + std::to_string(i) + " block " + std::to_string(m) +
                            " is not one-hot");
      }
    }
  }
}

}  // namespace

ad::Var asymmetric_triplet_loss(const ad::Var& z_anchor, const ad::Var& b_positive, const ad::Var& b_negative,
                                double margin, Eigen::Index block_size) {
  require_one_hot(b_positive.value(), block_size, "asymmetric_triplet_loss positive");
  require_one_hot(b_negative.value(), block_size, "asymmetric_triplet_loss negative");
  return triplet_loss(z_anchor, b_positive, b_negative, margin);
}

ad::Var koleo_loss(const ad::Var& points, double log_eps) {
  require(points.rows() >= 2, "koleo_loss: need a batch of at least 2 points");
  return ad::sum(ad::log(ad::nearest_neighbour_distance(points), log_eps));
}

ad::Var koleo_w_loss(std::span<const ad::Var> quantiser, double log_eps) {
  require(!quantiser.empty(), "koleo_w_loss: no quantiser blocks");
  std::vector<ad::Var> terms;
  for (const ad::Var& w : quantiser) {
    require(w.rows() >= 2, "koleo_w_loss: each W_m needs K >= 2 rows");
    terms.push_back(koleo_loss(w, log_eps));
  }
  ad::Var total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
  return total;
}

ad::Var quant_pull_loss(const ad::Var& y, std::span<const ad::Var> quantiser, Eigen::Index block_size) {
  const auto M = static_cast<Eigen::Index>(quantiser.size());
  require(M >= 1 && y.cols() == M * block_size, "quant_pull_loss: embedding width != M*K");
  ad::Var total;
  for (Eigen::Index m = 0; m < M; ++m) {
    const ad::Var& w = quantiser[static_cast<std::size_t>(m)];
    require(w.cols() == block_size, "quant_pull_loss: W_m width != K");
    const ad::Var term = ad::sum(ad::nearest_row_distance(ad::slice_cols(y, m * block_size, block_size), w));
    total = m == 0 ? term : ad::add(total, term);
  }
  return total;
}

ad::Var total_objective(const LossComponents& c, const LossWeights& w) {
  ad::Var l = c.tri_z;
  l = ad::add(l, ad::scale(c.tri_y, w.tri_y));
  l = ad::sub(l, ad::scale(c.koleo_y, w.koleo_y));
  l = ad::sub(l, ad::scale(c.koleo_w, w.koleo_w));
  l = ad::add(l, ad::scale(c.quant, w.quant));
  return l;
}

double total_objective_value(double tri_z, double tri_y, double koleo_y, double koleo_w, double quant,
                             const LossWeights& w) {
  return tri_z + w.tri_y * tri_y - w.koleo_y * koleo_y - w.koleo_w * koleo_w + w.quant * quant;
}

}  // namespace sphash
