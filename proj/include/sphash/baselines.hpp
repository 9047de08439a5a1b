#pragma once

#include "sphash/codec.hpp"
#include "sphash/types.hpp"

#include <cstdint>
#include <span>
#include <vector>

// Reference hashing methods. LSH and ITQ emit B one-bit codes, stored as
// CodeMatrix with K = 2 so the codec's symmetric distance ranks them by
// Hamming distance. PQ emits M* indices into 256-entry codebooks.

namespace sphash {

struct LshModel {
  Vector mean;
  /// B x d, unit rows.
  Matrix directions;

  int bits() const { return static_cast<int>(directions.rows()); }
};

LshModel lsh_train(const Matrix& data, int bits, std::uint64_t seed);

template <typename Derived>
CodeMatrix lsh_encode(const LshModel& model, const Eigen::MatrixBase<Derived>& x) {
  require(x.cols() == model.mean.size(), "lsh_encode: input dim mismatch");
  const Matrix proj = (x.template cast<double>().rowwise() - model.mean.transpose()) * model.directions.transpose();
  return (proj.array() >= 0.0).template cast<std::uint32_t>().matrix();
}

struct ItqModel {
  Vector mean;
  /// d x B principal directions (orthonormal columns, descending variance).
  Matrix projection;
  /// B x B orthogonal rotation.
  Matrix rotation;
  /// ||sign(VR) - VR||^2 for the initial rotation and after every iteration.
  std::vector<double> quantization_error;
  /// Max |R^T R - I| observed after every iteration.
  std::vector<double> orthogonality_error;

  int bits() const { return static_cast<int>(rotation.rows()); }
};

/// PCA to B dims, then alternate sign assignment and orthogonal Procrustes. If fewer than B
/// principal directions carry variance, B is reduced (with a warning on stderr).
ItqModel itq_train(const Matrix& data, int bits, int iterations, std::uint64_t seed);

template <typename Derived>
CodeMatrix itq_encode(const ItqModel& model, const Eigen::MatrixBase<Derived>& x) {
  require(x.cols() == model.mean.size(), "itq_encode: input dim mismatch");
  const Matrix v = (x.template cast<double>().rowwise() - model.mean.transpose()) * model.projection * model.rotation;
  return (v.array() >= 0.0).template cast<std::uint32_t>().matrix();
}

struct KMeansResult {
  /// k x d.
  Matrix centroids;
  std::vector<int> assignment;
  /// SSE after every assignment step and every centroid update, in order. Non-increasing.
  std::vector<double> sse_history;
};

/// Lloyd iterations from k-means++ seeding. An emptied cluster is re-seeded at the point
/// farthest from its centroid.
KMeansResult kmeans(const Matrix& data, int k, int iterations, std::uint64_t seed);

struct PqModel {
  Eigen::Index dim = 0;
  int subquantizers = 0;  // M*
  int centroids = 256;    // K*
  /// One K* x (dim / M*) codebook per contiguous subspace.
  std::vector<Matrix> codebooks;
  std::vector<std::vector<double>> sse_history;

  Eigen::Index sub_dim() const { return dim / subquantizers; }
  int bits() const { return subquantizers * bits_per_index(centroids); }
};

PqModel pq_train(const Matrix& data, int subquantizers, int centroids, int iterations, std::uint64_t seed);

CodeMatrix pq_encode(const PqModel& model, const Matrix& x);

/// table(m, k) = ||q^(m) - c_{m,k}||^2.
AdcTable<double> pq_adc_table(const PqModel& model, const Vector& query);

/// sqrt(sum_m ||q^(m) - c_{m, code_m}||^2).
double pq_adc(const PqModel& model, const Vector& query, const Code& code);

/// Exhaustive ADC scan, ascending by distance then index.
std::vector<SearchHit> pq_search(const PqModel& model, const Vector& query, const CodeMatrix& codes, std::size_t n);

/// Reconstruction from a code: the concatenated centroids.
Vector pq_decode(const PqModel& model, const Code& code);

std::vector<std::uint8_t> serialize_lsh(const LshModel& model);
LshModel parse_lsh(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_itq(const ItqModel& model);
ItqModel parse_itq(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_pq(const PqModel& model);
PqModel parse_pq(std::span<const std::uint8_t> bytes);

}  // namespace sphash
