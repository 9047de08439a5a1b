#pragma once

#include "sphash/types.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// Little-endian framing shared by the checkpoint formats: a 4-byte magic, a
// u32 version, then a method-specific sequence of scalars and matrices.

namespace sphash {

class ByteWriter {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  /// rows, cols, then values in row-major order.
  template <typename Derived>
  void matrix(const Eigen::MatrixBase<Derived>& m) {
    u32(static_cast<std::uint32_t>(m.rows()));
    u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) f64(static_cast<double>(m(i, j)));
  }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void expect_magic(std::string_view m) {
    need(m.size());
    if (!std::equal(m.begin(), m.end(), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_))) {
      throw FormatError("bad magic (expected " + std::string(m) + ")", static_cast<std::int64_t>(pos_));
    }
    pos_ += m.size();
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }

  Matrix matrix() {
    const std::size_t at = pos_;
    const std::uint32_t rows = u32();
    const std::uint32_t cols = u32();
    if (static_cast<std::uint64_t>(rows) * cols * 8 > remaining()) {
      throw FormatError("matrix payload truncated", static_cast<std::int64_t>(at));
    }
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = f64();
    return m;
  }

  /// Reads a matrix and checks its shape.
  Matrix matrix(Eigen::Index rows, Eigen::Index cols, const std::string& what) {
    const std::size_t at = pos_;
    Matrix m = matrix();
    if (m.rows() != rows || m.cols() != cols) {
      throw FormatError(what + ": stored shape " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                            ", expected " + std::to_string(rows) + "x" + std::to_string(cols),
                        static_cast<std::int64_t>(at));
    }
    return m;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

  void expect_end() const {
    if (pos_ != bytes_.size()) throw FormatError("trailing bytes", static_cast<std::int64_t>(pos_));
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("unexpected end of data", static_cast<std::int64_t>(pos_));
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace sphash
