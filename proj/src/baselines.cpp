#include "sphash/baselines.hpp"

#include "sphash/serialization.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <string>

namespace sphash {
namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = normal(rng);
  return m;
}

Matrix random_orthogonal(Eigen::Index n, std::mt19937_64& rng) {
  Eigen::HouseholderQR<Matrix> qr(gaussian(n, n, rng));
  return qr.householderQ() * Matrix::Identity(n, n);
}

Matrix sign_of(const Matrix& v) { return (v.array() >= 0.0).select(Matrix::Ones(v.rows(), v.cols()), -1.0); }

// Squared distances from every row of `x` to every row of `c`.
Matrix squared_distances(const Matrix& x, const Matrix& c) {
  const Vector xn = x.rowwise().squaredNorm();
  const Vector cn = c.rowwise().squaredNorm();
  Matrix d = -2.0 * x * c.transpose();
  d.colwise() += xn;
  d.rowwise() += cn.transpose();
  return d;
}

double exact_sse(const Matrix& x, const Matrix& c, const std::vector<int>& assign) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) s += (x.row(i) - c.row(assign[static_cast<std::size_t>(i)])).squaredNorm();
  return s;
}

}  // namespace

LshModel lsh_train(const Matrix& data, int bits, std::uint64_t seed) {
  require(bits >= 1, "lsh_train: need at least one bit");
  require(data.rows() >= 1 && data.cols() >= 1, "lsh_train: empty data");
  std::mt19937_64 rng(seed);
  LshModel m;
  m.mean = data.colwise().mean().transpose();
  m.directions = gaussian(bits, data.cols(), rng);
  for (Eigen::Index i = 0; i < m.directions.rows(); ++i) {
    double n = m.directions.row(i).norm();
    while (n == 0.0) {
      m.directions.row(i) = gaussian(1, data.cols(), rng);
      n = m.directions.row(i).norm();
    }
    m.directions.row(i) /= n;
  }
  return m;
}

ItqModel itq_train(const Matrix& data, int bits, int iterations, std::uint64_t seed) {
  require(bits >= 1, "itq_train: need at least one bit");
  require(iterations >= 0, "itq_train: iterations must be non-negative");
  require(data.rows() >= bits, "itq_train: need at least B training points");
  require(bits <= data.cols(), "itq_train: B exceeds the input dimension");

  ItqModel m;
  m.mean = data.colwise().mean().transpose();
  const Matrix centered = data.rowwise() - m.mean.transpose();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(data.rows());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Vector& values = eig.eigenvalues();  // ascending
  const double largest = values(values.size() - 1);
  int usable = 0;
  for (int b = 0; b < bits; ++b) {
    const double v = values(values.size() - 1 - b);
    if (v > 1e-10 * std::max(largest, 0.0) && v > 0.0) ++usable;
  }
  if (usable < bits) {
    std::cerr << "warning: itq_train: covariance has only " << usable << " non-degenerate directions; reducing B from "
              << bits << " to " << usable << "\n";
    require(usable >= 1, "itq_train: data has no variance");
  }
  m.projection.resize(data.cols(), usable);
  for (int b = 0; b < usable; ++b) m.projection.col(b) = eig.eigenvectors().col(values.size() - 1 - b);

  const Matrix v = centered * m.projection;
  std::mt19937_64 rng(seed);
  m.rotation = random_orthogonal(usable, rng);
  const Matrix identity = Matrix::Identity(usable, usable);

  auto error_of = [&](const Matrix& r) {
    const Matrix vr = v * r;
    return (sign_of(vr) - vr).squaredNorm();
  };
  m.quantization_error.push_back(error_of(m.rotation));
  for (int it = 0; it < iterations; ++it) {
    const Matrix codes = sign_of(v * m.rotation);
    // argmin_R ||codes - V R|| over orthogonal R: R = U W^T from svd(V^T codes).
    Eigen::JacobiSVD<Matrix> svd(v.transpose() * codes, Eigen::ComputeFullU | Eigen::ComputeFullV);
    m.rotation = svd.matrixU() * svd.matrixV().transpose();
    m.quantization_error.push_back(error_of(m.rotation));
    m.orthogonality_error.push_back((m.rotation.transpose() * m.rotation - identity).cwiseAbs().maxCoeff());
  }
  return m;
}

KMeansResult kmeans(const Matrix& data, int k, int iterations, std::uint64_t seed) {
  require(k >= 1, "kmeans: k must be positive");
  require(data.rows() >= k, "kmeans: need at least k points");
  std::mt19937_64 rng(seed);
  const Eigen::Index n = data.rows();

  // k-means++ seeding.
  KMeansResult r;
  r.centroids.resize(k, data.cols());
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  r.centroids.row(0) = data.row(first(rng));
  Vector d2 = (data.rowwise() - r.centroids.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (d2(i) <= 0.0) continue;
        target -= d2(i);
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
      while (d2(pick) <= 0.0) --pick;
    } else {
      pick = first(rng);
    }
    r.centroids.row(c) = data.row(pick);
    d2 = d2.cwiseMin((data.rowwise() - r.centroids.row(c)).rowwise().squaredNorm());
  }

  r.assignment.assign(static_cast<std::size_t>(n), -1);
  auto assign = [&] {
    const Matrix dist = squared_distances(data, r.centroids);
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      dist.row(i).minCoeff(&best);
      int& a = r.assignment[static_cast<std::size_t>(i)];
      // Switch only on an exact improvement so rounding in the expanded form cannot raise the SSE.
      if (a < 0 || (data.row(i) - r.centroids.row(best)).squaredNorm() < (data.row(i) - r.centroids.row(a)).squaredNorm()) {
        a = static_cast<int>(best);
      }
    }
    r.sse_history.push_back(exact_sse(data, r.centroids, r.assignment));
  };

  assign();
  for (int it = 0; it < iterations; ++it) {
    Matrix sums = Matrix::Zero(k, data.cols());
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int a = r.assignment[static_cast<std::size_t>(i)];
      sums.row(a) += data.row(i);
      ++counts[static_cast<std::size_t>(a)];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        r.centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      }
    }
    r.sse_history.push_back(exact_sse(data, r.centroids, r.assignment));
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) continue;
      // Re-seed an empty cluster at the worst-served point.
      Eigen::Index far = 0;
      double worst = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double e = (data.row(i) - r.centroids.row(r.assignment[static_cast<std::size_t>(i)])).squaredNorm();
        if (e > worst) {
          worst = e;
          far = i;
        }
      }
      r.centroids.row(c) = data.row(far);
    }
    assign();
  }
  return r;
}

PqModel pq_train(const Matrix& data, int subquantizers, int centroids, int iterations, std::uint64_t seed) {
  require(subquantizers >= 1, "pq_train: need at least one subquantizer");
  require(data.cols() % subquantizers == 0, "pq_train: dim " + std::to_string(data.cols()) +
                                                " is not divisible by M*=" + std::to_string(subquantizers));
  require(data.rows() >= centroids, "pq_train: need at least K* training points");
  PqModel m;
  m.dim = data.cols();
  m.subquantizers = subquantizers;
  m.centroids = centroids;
  const Eigen::Index sd = m.sub_dim();
  for (int s = 0; s < subquantizers; ++s) {
    KMeansResult km = kmeans(data.middleCols(s * sd, sd), centroids, iterations, seed + static_cast<std::uint64_t>(s));
    m.codebooks.push_back(std::move(km.centroids));
    m.sse_history.push_back(std::move(km.sse_history));
  }
  return m;
}

CodeMatrix pq_encode(const PqModel& model, const Matrix& x) {
  require(x.cols() == model.dim, "pq_encode: input dim mismatch");
  const Eigen::Index sd = model.sub_dim();
  CodeMatrix codes(x.rows(), model.subquantizers);
  for (int s = 0; s < model.subquantizers; ++s) {
    const Matrix sub = x.middleCols(s * sd, sd);
    const Matrix dist = squared_distances(sub, model.codebooks[static_cast<std::size_t>(s)]);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      Eigen::Index best = 0;
      dist.row(i).minCoeff(&best);
      codes(i, s) = static_cast<std::uint32_t>(best);
    }
  }
  return codes;
}

AdcTable<double> pq_adc_table(const PqModel& model, const Vector& query) {
  require(query.size() == model.dim, "pq_adc_table: query dim mismatch");
  const Eigen::Index sd = model.sub_dim();
  AdcTable<double> t{model.subquantizers, model.centroids, Matrix(model.subquantizers, model.centroids)};
  for (int s = 0; s < model.subquantizers; ++s) {
    const auto& book = model.codebooks[static_cast<std::size_t>(s)];
    t.table.row(s) = (book.rowwise() - query.segment(s * sd, sd).transpose()).rowwise().squaredNorm().transpose();
  }
  return t;
}

double pq_adc(const PqModel& model, const Vector& query, const Code& code) {
  return adc_distance(pq_adc_table(model, query), code);
}

std::vector<SearchHit> pq_search(const PqModel& model, const Vector& query, const CodeMatrix& codes, std::size_t n) {
  return search(pq_adc_table(model, query), codes, n);
}

Vector pq_decode(const PqModel& model, const Code& code) {
  require(code.size() == model.subquantizers, "pq_decode: code width != M*");
  const Eigen::Index sd = model.sub_dim();
  Vector out(model.dim);
  for (int s = 0; s < model.subquantizers; ++s) {
    out.segment(s * sd, sd) = model.codebooks[static_cast<std::size_t>(s)].row(code(s)).transpose();
  }
  return out;
}

namespace {
constexpr std::uint32_t kBaselineVersion = 1;
}

std::vector<std::uint8_t> serialize_lsh(const LshModel& model) {
  ByteWriter w;
  w.magic("SPHL");
  w.u32(kBaselineVersion);
  w.matrix(model.mean);
  w.matrix(model.directions);
  return w.take();
}

LshModel parse_lsh(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("SPHL");
  if (r.u32() != kBaselineVersion) throw FormatError("unsupported LSH model version", 4);
  LshModel m;
  m.mean = r.matrix();
  m.directions = r.matrix();
  if (m.mean.size() != m.directions.cols()) throw FormatError("LSH model: direction width != mean length");
  r.expect_end();
  return m;
}

std::vector<std::uint8_t> serialize_itq(const ItqModel& model) {
  ByteWriter w;
  w.magic("SPHI");
  w.u32(kBaselineVersion);
  w.matrix(model.mean);
  w.matrix(model.projection);
  w.matrix(model.rotation);
  return w.take();
}

ItqModel parse_itq(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("SPHI");
  if (r.u32() != kBaselineVersion) throw FormatError("unsupported ITQ model version", 4);
  ItqModel m;
  m.mean = r.matrix();
  m.projection = r.matrix();
  m.rotation = r.matrix();
  if (m.projection.rows() != m.mean.size() || m.rotation.rows() != m.projection.cols() ||
      m.rotation.cols() != m.rotation.rows()) {
    throw FormatError("ITQ model: inconsistent shapes");
  }
  r.expect_end();
  return m;
}

std::vector<std::uint8_t> serialize_pq(const PqModel& model) {
  ByteWriter w;
  w.magic("SPHP");
  w.u32(kBaselineVersion);
  w.u32(static_cast<std::uint32_t>(model.dim));
  w.u32(static_cast<std::uint32_t>(model.subquantizers));
  w.u32(static_cast<std::uint32_t>(model.centroids));
  for (const Matrix& book : model.codebooks) w.matrix(book);
  return w.take();
}

PqModel parse_pq(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("SPHP");
  if (r.u32() != kBaselineVersion) throw FormatError("unsupported PQ model version", 4);
  PqModel m;
  m.dim = r.u32();
  m.subquantizers = static_cast<int>(r.u32());
  m.centroids = static_cast<int>(r.u32());
  if (m.subquantizers < 1 || m.centroids < 2 || m.dim % m.subquantizers != 0) {
    throw FormatError("PQ model: invalid header", 8);
  }
  for (int s = 0; s < m.subquantizers; ++s) {
    m.codebooks.push_back(r.matrix(m.centroids, m.sub_dim(), "PQ codebook"));
  }
  r.expect_end();
  return m;
}

}  // namespace sphash
