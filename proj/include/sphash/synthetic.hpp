#pragma once

#include "sphash/data_io.hpp"

#include <cstddef>
#include <cstdint>

namespace sphash {

/// Gaussian mixture whose clusters each live near a random low-dimensional affine subspace.
struct MixtureConfig {
  Eigen::Index dim = 128;
  std::size_t count = 16000;
  int clusters = 32;
  /// Rank of each cluster's principal subspace.
  int intrinsic_dim = 8;
  /// Std of cluster centres around the origin, per coordinate.
  double centre_spread = 1.0;
  /// Std along each in-cluster principal direction.
  double cluster_spread = 1.0;
  /// Isotropic noise std per coordinate.
  double noise = 0.1;

  void validate() const;
};

/// count x dim float vectors, deterministic in `seed`.
VectorSet generate_mixture(const MixtureConfig& config, std::uint64_t seed);

}  // namespace sphash
