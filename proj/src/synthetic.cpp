#include "sphash/synthetic.hpp"

#include <random>

namespace sphash {

void MixtureConfig::validate() const {
  require(dim >= 1, "mixture: dim must be positive");
  require(clusters >= 1, "mixture: need at least one cluster");
  require(intrinsic_dim >= 0 && intrinsic_dim <= dim, "mixture: intrinsic_dim must lie in [0, dim]");
  require(centre_spread >= 0.0 && cluster_spread >= 0.0 && noise >= 0.0, "mixture: spreads must be non-negative");
}

VectorSet generate_mixture(const MixtureConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = normal(rng);
    return m;
  };

  const Matrix centres = config.centre_spread * gaussian(config.clusters, config.dim);
  std::vector<Matrix> bases;
  for (int c = 0; c < config.clusters; ++c) {
    Eigen::HouseholderQR<Matrix> qr(gaussian(config.dim, config.intrinsic_dim));
    bases.push_back(qr.householderQ() * Matrix::Identity(config.dim, config.intrinsic_dim));
  }

  std::uniform_int_distribution<int> pick(0, config.clusters - 1);
  VectorSet out;
  out.dim = config.dim;
  out.data.resize(static_cast<Eigen::Index>(config.count), config.dim);
  for (std::size_t i = 0; i < config.count; ++i) {
    const int c = pick(rng);
    Vector x = centres.row(c).transpose();
    x += bases[static_cast<std::size_t>(c)] * (config.cluster_spread * gaussian(config.intrinsic_dim, 1));
    x += config.noise * gaussian(config.dim, 1);
    out.data.row(static_cast<Eigen::Index>(i)) = x.transpose().cast<float>();
  }
  return out;
}

}  // namespace sphash
