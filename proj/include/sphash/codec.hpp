#pragma once

#include "sphash/types.hpp"

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

namespace sphash {

/// ceil(log2 K): bits needed to store one block index.
int bits_per_index(int K);

/// ceil(M * ceil(log2 K) / 8).
std::size_t bytes_per_code(int M, int K);

/// Writes the M indices of `code` LSB-first into `out`, zero-padding the final byte.
void pack(const Code& code, int M, int K, std::span<std::uint8_t> out);
std::vector<std::uint8_t> pack(const Code& code, int M, int K);
Code unpack(std::span<const std::uint8_t> bytes, int M, int K);

/// A flat store of packed codes.
struct CodeDatabase {
  int M = 0;
  int K = 0;
  std::size_t count = 0;
  std::vector<std::uint8_t> payload;

  std::size_t code_bytes() const { return bytes_per_code(M, K); }
  Code code(std::size_t i) const;
  CodeMatrix unpack_all() const;

  static CodeDatabase from_codes(const CodeMatrix& codes, int M, int K);
};

/// Euclidean distance between the one-hot embeddings of two codes: sqrt(2 * mismatched blocks).
double symmetric_distance(const Code& a, const Code& b);

/// table(m, k) is the squared distance contributed by picking index k in block m.
template <typename Scalar>
struct AdcTable {
  int M = 0;
  int K = 0;
  MatrixX<Scalar> table;
};

template <typename Derived>
AdcTable<typename Derived::Scalar> build_adc_table(const Eigen::MatrixBase<Derived>& y, int M, int K) {
  using Scalar = typename Derived::Scalar;
  require(y.size() == static_cast<Eigen::Index>(M) * K, "build_adc_table: query length != M*K");
  AdcTable<Scalar> t{M, K, MatrixX<Scalar>(M, K)};
  for (int m = 0; m < M; ++m) {
    auto block = y.derived().segment(static_cast<Eigen::Index>(m) * K, K);
    const Scalar sq = block.squaredNorm();
    // ||y_m - e_k||^2 = ||y_m||^2 + 1 - 2 y_m[k]; equals 2 - 2 y_m[k] on the unit sphere.
    for (int k = 0; k < K; ++k) t.table(m, k) = sq + Scalar(1) - Scalar(2) * block(k);
  }
  return t;
}

template <typename Scalar, typename CodeDerived>
Scalar adc_squared_distance(const AdcTable<Scalar>& t, const Eigen::MatrixBase<CodeDerived>& code) {
  Scalar acc = 0;
  for (int m = 0; m < t.M; ++m) acc += t.table(m, code(m));
  return acc > Scalar(0) ? acc : Scalar(0);
}

template <typename Scalar, typename CodeDerived>
Scalar adc_distance(const AdcTable<Scalar>& t, const Eigen::MatrixBase<CodeDerived>& code) {
  require(code.size() == t.M, "adc_distance: code length != M");
  return std::sqrt(adc_squared_distance(t, code));
}

/// Direct form: ||y - onehot(code)||.
template <typename Derived>
typename Derived::Scalar adc_distance(const Eigen::MatrixBase<Derived>& y, const Code& code, int M, int K) {
  return adc_distance(build_adc_table(y, M, K), code);
}

enum class DistanceMode { symmetric, adc };

/// A query is either a binarized code (symmetric mode) or a continuous embedding (ADC).
using QueryRepr = std::variant<Code, Vector>;

struct SearchHit {
  std::uint32_t index = 0;
  double distance = 0.0;
};

/// Exhaustive scan returning the n closest codes, ascending by distance then index.
std::vector<SearchHit> search(const QueryRepr& query, const CodeMatrix& codes, int M, int K, std::size_t n,
                              DistanceMode mode);
std::vector<SearchHit> search(const QueryRepr& query, const CodeDatabase& db, std::size_t n, DistanceMode mode);

/// Exhaustive scan against a precomputed per-query table.
std::vector<SearchHit> search(const AdcTable<double>& table, const CodeMatrix& codes, std::size_t n);

/// Keeps the n smallest keys (ties by index) out of `keys`, sorted ascending.
std::vector<std::uint32_t> top_n_indices(std::span<const double> keys, std::size_t n);

}  // namespace sphash
