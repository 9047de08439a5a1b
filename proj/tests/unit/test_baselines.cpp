#include "sphash/baselines.hpp"

#include "oracles.hpp"

#include <catch_amalgamated.hpp>

#include <numbers>
#include <random>

using namespace sphash;

TEST_CASE("LSH: antisymmetry about the mean and determinism") {
  std::mt19937_64 rng(1);
  const Matrix data = testing::random_matrix(500, 12, rng) + Matrix::Constant(500, 12, 3.0);
  const LshModel m = lsh_train(data, 32, 7);
  CHECK(m.bits() == 32);
  CHECK((m.directions.rowwise().norm().array() - 1.0).abs().maxCoeff() < 1e-12);
  const Matrix x = testing::random_matrix(50, 12, rng);
  const Matrix mirrored = (-x).rowwise() + 2.0 * m.mean.transpose();
  const CodeMatrix a = lsh_encode(m, x), b = lsh_encode(m, mirrored);
  CHECK(((a.array() + b.array()) == 1u).all());
  CHECK(lsh_encode(m, x) == a);
  CHECK(serialize_lsh(lsh_train(data, 32, 7)) == serialize_lsh(m));
}

TEST_CASE("LSH: per-bit collision rate is 1 - angle/pi") {
  // Fresh directions on every trial; one pair at a fixed angle per angle setting.
  for (double theta : {0.3, 1.0, 2.0}) {
    Matrix pair = Matrix::Zero(2, 6);
    pair(0, 0) = 1.0;
    pair(1, 0) = std::cos(theta);
    pair(1, 1) = std::sin(theta);
    const Matrix centred = Matrix::Zero(2, 6);
    LshModel m = lsh_train(centred, 100000, 11);
    m.mean.setZero();
    const CodeMatrix c = lsh_encode(m, pair);
    const double rate = static_cast<double>((c.row(0).array() == c.row(1).array()).count()) / 100000.0;
    CHECK(std::abs(rate - (1.0 - theta / std::numbers::pi)) < 0.02);
  }
}

TEST_CASE("ITQ: monotone error, orthogonal rotation, deterministic") {
  std::mt19937_64 rng(2);
  const Matrix data = testing::random_matrix(2000, 16, rng) * testing::random_matrix(16, 16, rng);
  const ItqModel m = itq_train(data, 8, 50, 3);
  REQUIRE(m.quantization_error.size() == 51);
  for (std::size_t i = 1; i < m.quantization_error.size(); ++i) {
    CHECK(m.quantization_error[i] <= m.quantization_error[i - 1] * (1.0 + 1e-12));
  }
  REQUIRE(m.orthogonality_error.size() == 50);
  for (double e : m.orthogonality_error) CHECK(e < 1e-6);
  CHECK(((m.projection.transpose() * m.projection) - Matrix::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(serialize_itq(itq_train(data, 8, 50, 3)) == serialize_itq(m));
  CHECK(itq_encode(m, data).cols() == 8);
}

TEST_CASE("ITQ: data already at the hypercube vertices is a fixed point") {
  // Rows are sign patterns in a rotated 4-dim subspace of 6-dim space.
  std::mt19937_64 rng(4);
  Matrix signs(256, 4);
  for (Eigen::Index i = 0; i < 256; ++i) {
    for (Eigen::Index j = 0; j < 4; ++j) signs(i, j) = ((i >> j) & 1) ? 1.0 : -1.0;
  }
  Eigen::HouseholderQR<Matrix> qr(testing::random_matrix(6, 6, rng));
  const Matrix basis = Matrix(qr.householderQ()).leftCols(4);
  const Matrix data = signs * basis.transpose();
  const ItqModel m = itq_train(data, 4, 50, 5);
  CHECK(m.quantization_error.back() < 1e-12);
  // R maps the principal coordinates onto the cube axes: a signed permutation up to the PCA basis.
  const Matrix v = (data.rowwise() - m.mean.transpose()) * m.projection * m.rotation;
  CHECK((v.cwiseAbs().array() - 1.0).abs().maxCoeff() < 1e-6);
}

TEST_CASE("ITQ: degenerate covariance reduces the bit count") {
  std::mt19937_64 rng(5);
  Matrix data = Matrix::Zero(100, 6);
  data.leftCols(2) = testing::random_matrix(100, 2, rng);
  const ItqModel m = itq_train(data, 4, 10, 1);
  CHECK(m.bits() == 2);
}

TEST_CASE("k-means: SSE never increases and exact centroids give zero error") {
  std::mt19937_64 rng(6);
  const Matrix data = testing::random_matrix(600, 4, rng);
  const KMeansResult r = kmeans(data, 16, 25, 2);
  for (std::size_t i = 1; i < r.sse_history.size(); ++i) CHECK(r.sse_history[i] <= r.sse_history[i - 1] * (1.0 + 1e-12));

  const Matrix points = testing::random_matrix(8, 3, rng);
  Matrix repeated(80, 3);
  for (Eigen::Index i = 0; i < 80; ++i) repeated.row(i) = points.row(i % 8);
  CHECK(kmeans(repeated, 8, 25, 1).sse_history.back() < 1e-20);
}

TEST_CASE("PQ: exact sub-vectors, own-code ADC, errors") {
  std::mt19937_64 rng(7);
  // Each subspace carries exactly K* = 4 distinct sub-vectors.
  const Matrix atoms0 = testing::random_matrix(4, 3, rng), atoms1 = testing::random_matrix(4, 3, rng);
  Matrix data(200, 6);
  for (Eigen::Index i = 0; i < 200; ++i) {
    data.row(i).head(3) = atoms0.row(static_cast<Eigen::Index>(rng() % 4));
    data.row(i).tail(3) = atoms1.row(static_cast<Eigen::Index>(rng() % 4));
  }
  const PqModel pq = pq_train(data, 2, 4, 25, 3);
  CHECK(pq.bits() == 4);
  for (const auto& h : pq.sse_history) {
    CHECK(h.back() < 1e-20);
    for (std::size_t i = 1; i < h.size(); ++i) CHECK(h[i] <= h[i - 1] * (1.0 + 1e-12) + 1e-20);
  }
  const CodeMatrix codes = pq_encode(pq, data);
  for (Eigen::Index i = 0; i < 20; ++i) {
    const Code c = codes.row(i).transpose();
    CHECK(pq_adc(pq, data.row(i).transpose(), c) < 1e-10);
    const Vector centroid_tuple = pq_decode(pq, c);
    CHECK(pq_adc(pq, centroid_tuple, c) == 0.0);
  }
  const Vector q = testing::random_matrix(1, 6, rng).row(0).transpose();
  const auto hits = pq_search(pq, q, codes, 5);
  for (std::size_t r = 1; r < hits.size(); ++r) CHECK(hits[r - 1].distance <= hits[r].distance);
  CHECK(hits[0].distance == Catch::Approx(pq_adc(pq, q, codes.row(hits[0].index).transpose())));

  CHECK_THROWS_AS(pq_train(data, 4, 4, 5, 1), ContractError);
  CHECK(serialize_pq(pq_train(data, 2, 4, 25, 3)) == serialize_pq(pq));
}

TEST_CASE("baseline checkpoints roundtrip and reject foreign magic") {
  std::mt19937_64 rng(8);
  const Matrix data = testing::random_matrix(300, 8, rng);
  const LshModel lsh = lsh_train(data, 16, 1);
  const ItqModel itq = itq_train(data, 8, 5, 1);
  const PqModel pq = pq_train(data, 2, 8, 5, 1);
  const auto l = serialize_lsh(lsh), i = serialize_itq(itq), p = serialize_pq(pq);
  CHECK(serialize_lsh(parse_lsh(l)) == l);
  CHECK(serialize_itq(parse_itq(i)) == i);
  CHECK(serialize_pq(parse_pq(p)) == p);
  CHECK(lsh_encode(parse_lsh(l), data) == lsh_encode(lsh, data));
  CHECK(itq_encode(parse_itq(i), data) == itq_encode(itq, data));
  CHECK(pq_encode(parse_pq(p), data) == pq_encode(pq, data));
  CHECK_THROWS_AS(parse_itq(l), FormatError);
  CHECK_THROWS_AS(parse_pq(i), FormatError);
  auto cut = p;
  cut.resize(cut.size() / 2);
  CHECK_THROWS_AS(parse_pq(cut), FormatError);
}
