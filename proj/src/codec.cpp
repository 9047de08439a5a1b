#include "sphash/codec.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace sphash {

int bits_per_index(int K) {
  require(K >= 2, "K must be at least 2, got " + std::to_string(K));
  int bits = 0;
  while ((std::int64_t{1} << bits) < K) ++bits;
  return bits;
}

std::size_t bytes_per_code(int M, int K) {
  require(M >= 1, "M must be at least 1, got " + std::to_string(M));
  const std::size_t bits = static_cast<std::size_t>(M) * static_cast<std::size_t>(bits_per_index(K));
  return (bits + 7) / 8;
}

void pack(const Code& code, int M, int K, std::span<std::uint8_t> out) {
  require(code.size() == M, "pack: code has " + std::to_string(code.size()) + " blocks, expected " +
                                std::to_string(M));
  const std::size_t nbytes = bytes_per_code(M, K);
  require(out.size() >= nbytes, "pack: output buffer too short");
  const int width = bits_per_index(K);
  std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(nbytes), std::uint8_t{0});
  std::size_t bit = 0;
  for (int m = 0; m < M; ++m) {
    const std::uint32_t v = code(m);
    require(v < static_cast<std::uint32_t>(K),
            "pack: index " + std::to_string(v) + " in block " + std::to_string(m) + " is >= K");
    for (int b = 0; b < width; ++b, ++bit) {
      if ((v >> b) & 1U) out[bit / 8] |= static_cast<std::uint8_t>(1U << (bit % 8));
    }
  }
}

std::vector<std::uint8_t> pack(const Code& code, int M, int K) {
  std::vector<std::uint8_t> out(bytes_per_code(M, K));
  pack(code, M, K, out);
  return out;
}

Code unpack(std::span<const std::uint8_t> bytes, int M, int K) {
  const std::size_t nbytes = bytes_per_code(M, K);
  require(bytes.size() >= nbytes, "unpack: payload has " + std::to_string(bytes.size()) + " bytes, need " +
                                      std::to_string(nbytes));
  const int width = bits_per_index(K);
  Code code(M);
  std::size_t bit = 0;
  for (int m = 0; m < M; ++m) {
    std::uint32_t v = 0;
    for (int b = 0; b < width; ++b, ++bit) {
      if ((bytes[bit / 8] >> (bit % 8)) & 1U) v |= 1U << b;
    }
    if (v >= static_cast<std::uint32_t>(K)) {
      throw ContractError("unpack: decoded index " + std::to_string(v) + " in block " + std::to_string(m) +
                          " is >= K");
    }
    code(m) = v;
  }
  return code;
}

Code CodeDatabase::code(std::size_t i) const {
  require(i < count, "CodeDatabase::code: index out of range");
  const std::size_t w = code_bytes();
  return unpack(std::span(payload).subspan(i * w, w), M, K);
}

CodeMatrix CodeDatabase::unpack_all() const {
  CodeMatrix out(static_cast<Eigen::Index>(count), M);
  for (std::size_t i = 0; i < count; ++i) out.row(static_cast<Eigen::Index>(i)) = code(i).transpose();
  return out;
}

CodeDatabase CodeDatabase::from_codes(const CodeMatrix& codes, int M, int K) {
  require(codes.cols() == M, "CodeDatabase::from_codes: column count != M");
  CodeDatabase db{M, K, static_cast<std::size_t>(codes.rows()), {}};
  const std::size_t w = db.code_bytes();
  db.payload.resize(db.count * w);
  for (std::size_t i = 0; i < db.count; ++i) {
    Code c = codes.row(static_cast<Eigen::Index>(i)).transpose();
    pack(c, M, K, std::span(db.payload).subspan(i * w, w));
  }
  return db;
}

double symmetric_distance(const Code& a, const Code& b) {
  require(a.size() == b.size(), "symmetric_distance: block count mismatch");
  const auto mismatches = (a.array() != b.array()).count();
  return std::sqrt(2.0 * static_cast<double>(mismatches));
}

std::vector<std::uint32_t> top_n_indices(std::span<const double> keys, std::size_t n) {
  std::vector<std::uint32_t> order(keys.size());
  std::iota(order.begin(), order.end(), 0U);
  n = std::min(n, keys.size());
  auto less = [&](std::uint32_t a, std::uint32_t b) { return keys[a] < keys[b] || (keys[a] == keys[b] && a < b); };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(), less);
  order.resize(n);
  return order;
}

std::vector<SearchHit> search(const QueryRepr& query, const CodeMatrix& codes, int M, int K, std::size_t n,
                              DistanceMode mode) {
  require(codes.rows() > 0, "search: empty database");
  require(codes.cols() == M, "search: database block count != M");
  require(n <= static_cast<std::size_t>(codes.rows()), "search: n exceeds database size");
  const auto count = static_cast<std::size_t>(codes.rows());
  std::vector<double> keys(count);

  if (mode == DistanceMode::symmetric) {
    const Code* q = std::get_if<Code>(&query);
    require(q != nullptr, "search: symmetric mode requires a binarized query code");
    require(q->size() == M, "search: query block count != M");
    for (std::size_t i = 0; i < count; ++i) {
      const auto row = codes.row(static_cast<Eigen::Index>(i));
      keys[i] = 2.0 * static_cast<double>((row.transpose().array() != q->array()).count());
    }
  } else {
    const Vector* y = std::get_if<Vector>(&query);
    require(y != nullptr, "search: adc mode requires a continuous query embedding, got a binarized code");
    return search(build_adc_table(*y, M, K), codes, n);
  }

  std::vector<SearchHit> hits;
  hits.reserve(n);
  for (std::uint32_t idx : top_n_indices(keys, n)) hits.push_back({idx, std::sqrt(keys[idx])});
  return hits;
}

std::vector<SearchHit> search(const AdcTable<double>& table, const CodeMatrix& codes, std::size_t n) {
  require(codes.rows() > 0, "search: empty database");
  require(codes.cols() == table.M, "search: database block count != M");
  require(n <= static_cast<std::size_t>(codes.rows()), "search: n exceeds database size");
  std::vector<double> keys(static_cast<std::size_t>(codes.rows()));
  for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = adc_squared_distance(table, codes.row(static_cast<Eigen::Index>(i)));
  std::vector<SearchHit> hits;
  hits.reserve(n);
  for (std::uint32_t idx : top_n_indices(keys, n)) hits.push_back({idx, std::sqrt(keys[idx])});
  return hits;
}

std::vector<SearchHit> search(const QueryRepr& query, const CodeDatabase& db, std::size_t n, DistanceMode mode) {
  return search(query, db.unpack_all(), db.M, db.K, n, mode);
}

}  // namespace sphash
