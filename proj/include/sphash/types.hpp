#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace sphash {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using RowMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

/// One index per block; entry m lies in [0, K).
using Code = Eigen::Matrix<std::uint32_t, Eigen::Dynamic, 1>;

/// A batch of codes, one per row.
using CodeMatrix = Eigen::Matrix<std::uint32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed on-disk data. `offset` is the byte position where parsing failed, or -1.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what, std::int64_t offset = -1)
      : Error(offset >= 0 ? what + " (at byte offset " + std::to_string(offset) + ")" : what),
        offset_(offset) {}

  std::int64_t offset() const noexcept { return offset_; }

 private:
  std::int64_t offset_;
};

/// A caller broke an operation's precondition (shapes, ranges, modes).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values surfaced during optimization.
class NumericalError : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractError(message);
}

}  // namespace sphash
