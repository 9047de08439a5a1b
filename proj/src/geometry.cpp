#include "sphash/geometry.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <numbers>
#include <random>
#include <thread>

namespace sphash::geometry {
namespace {

constexpr std::size_t kChunkRows = 4096;
constexpr double kQuadratureTolerance = 1e-8;

// Every chunk of kChunkRows rows gets its own stream, so output does not depend on the thread count.
template <typename Fill>
Matrix sample_chunked(int n, std::size_t count, std::uint64_t seed, Fill fill) {
  Matrix out(static_cast<Eigen::Index>(count), n);
  const std::size_t chunks = (count + kChunkRows - 1) / kChunkRows;
  const unsigned workers = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(), static_cast<unsigned>(chunks)));
  auto run = [&](unsigned w) {
    for (std::size_t c = w; c < chunks; c += workers) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
      std::mt19937_64 rng(seq);
      const std::size_t end = std::min(count, (c + 1) * kChunkRows);
      for (std::size_t i = c * kChunkRows; i < end; ++i) fill(out.row(static_cast<Eigen::Index>(i)), rng);
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run, w);
  }
  return out;
}

// Integrand after d = 2 sin(u): the density becomes 2 sin^{n-2}(2u) on [0, pi/2].
double substituted(double u, int n) {
  if (n == 2) return 2.0;
  return 2.0 * std::pow(std::sin(2.0 * u), n - 2);
}

double integrate_substituted(double upper_u, int n) {
  if (upper_u <= 0.0) return 0.0;
  auto f = [n](double u) { return substituted(u, n); };
  double error = 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, 0.0, upper_u, 20, kQuadratureTolerance, &error);
}

}  // namespace

Shape parse_shape(const std::string& name) {
  if (name == "simplex") return Shape::simplex;
  if (name == "sphere") return Shape::sphere;
  if (name == "cube") return Shape::cube;
  throw ContractError("unknown shape '" + name + "' (expected simplex, sphere or cube)");
}

std::string to_string(Shape shape) {
  switch (shape) {
    case Shape::simplex: return "simplex";
    case Shape::sphere: return "sphere";
    case Shape::cube: return "cube";
  }
  return "?";
}

Matrix sample_simplex(int n, std::size_t count, std::uint64_t seed) {
  require(n >= 2, "sample_simplex: n must be at least 2");
  return sample_chunked(n, count, seed, [n](auto row, std::mt19937_64& rng) {
    std::exponential_distribution<double> expo(1.0);
    for (int j = 0; j < n; ++j) row(j) = expo(rng);
    row /= row.sum();
  });
}

Matrix sample_sphere(int n, std::size_t count, std::uint64_t seed) {
  require(n >= 2, "sample_sphere: n must be at least 2");
  return sample_chunked(n, count, seed, [n](auto row, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    double norm = 0.0;
    while (norm == 0.0) {
      for (int j = 0; j < n; ++j) row(j) = normal(rng);
      norm = row.norm();
    }
    row /= norm;
  });
}

Matrix sample_cube(int n, std::size_t count, std::uint64_t seed) {
  require(n >= 1, "sample_cube: n must be at least 1");
  return sample_chunked(n, count, seed, [n](auto row, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int j = 0; j < n; ++j) row(j) = unit(rng);
  });
}

Matrix sample(Shape shape, int n, std::size_t count, std::uint64_t seed) {
  switch (shape) {
    case Shape::simplex: return sample_simplex(n, count, seed);
    case Shape::sphere: return sample_sphere(n, count, seed);
    case Shape::cube: return sample_cube(n, count, seed);
  }
  throw ContractError("unknown shape");
}

double max_distance(Shape shape, int n) {
  switch (shape) {
    case Shape::simplex: return std::numbers::sqrt2;
    case Shape::sphere: return 2.0;
    case Shape::cube: return std::sqrt(static_cast<double>(n));
  }
  return 0.0;
}

std::vector<double> sample_pair_distances(Shape shape, int n, std::size_t count, std::uint64_t seed) {
  const Matrix points = sample(shape, n, 2 * count, seed);
  std::vector<double> d(count);
  for (std::size_t i = 0; i < count; ++i) {
    d[i] = (points.row(static_cast<Eigen::Index>(2 * i)) - points.row(static_cast<Eigen::Index>(2 * i + 1))).norm();
  }
  return d;
}

double sphere_distance_density_unnormalized(double d, int n) {
  require(n >= 2, "sphere_distance_pdf: n must be at least 2");
  if (!(d >= 0.0 && d <= 2.0)) throw ContractError("sphere_distance_pdf: d must lie in [0, 2]");
  const double rest = 1.0 - d * d / 4.0;
  if (n == 2) return rest > 0.0 ? 1.0 / std::sqrt(rest) : std::numeric_limits<double>::infinity();
  if (n == 3) return d;
  if (d == 0.0 || rest <= 0.0) return 0.0;
  return std::exp((n - 2) * std::log(d) + 0.5 * (n - 3) * std::log(rest));
}

double sphere_distance_normalizer(int n) {
  require(n >= 2, "sphere_distance_normalizer: n must be at least 2");
  return integrate_substituted(std::numbers::pi / 2.0, n);
}

SphereDistance::SphereDistance(int n) : n_(n), normalizer_(sphere_distance_normalizer(n)) {}

double SphereDistance::pdf(double d) const { return sphere_distance_density_unnormalized(d, n_) / normalizer_; }

double SphereDistance::cdf(double d) const {
  if (!(d >= 0.0 && d <= 2.0)) throw ContractError("sphere_distance_cdf: d must lie in [0, 2]");
  return std::min(1.0, integrate_substituted(std::asin(d / 2.0), n_) / normalizer_);
}

double sphere_distance_pdf(double d, int n) { return SphereDistance(n).pdf(d); }

double sphere_distance_cdf(double d, int n) { return SphereDistance(n).cdf(d); }

SimplexLandmarks simplex_landmarks(int n) {
  require(n >= 2, "simplex_landmarks: n must be at least 2");
  return {std::sqrt(static_cast<double>(n - 1) / n), std::numbers::sqrt2};
}

DistanceHistogram distance_histogram(const std::vector<double>& distances, int dim, std::size_t bins, double upper) {
  require(!distances.empty(), "distance_histogram: no distances");
  require(bins >= 1, "distance_histogram: need at least one bin");
  require(upper > 0.0, "distance_histogram: upper bound must be positive");
  DistanceHistogram h;
  h.dim = dim;
  h.samples = distances.size();
  h.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = upper * static_cast<double>(b) / static_cast<double>(bins);
  h.masses.assign(bins, 0.0);
  double sum = 0.0;
  for (double d : distances) {
    require(d >= 0.0 && d <= upper * (1.0 + 1e-12), "distance_histogram: distance outside [0, upper]");
    auto b = static_cast<std::size_t>(d / upper * static_cast<double>(bins));
    h.masses[std::min(b, bins - 1)] += 1.0;
    sum += d;
  }
  const double count = static_cast<double>(distances.size());
  for (double& m : h.masses) m /= count;
  h.mean = sum / count;
  double sq = 0.0;
  for (double d : distances) sq += (d - h.mean) * (d - h.mean);
  h.variance = distances.size() > 1 ? sq / (count - 1.0) : 0.0;
  return h;
}

DistanceHistogram pairwise_histogram(const Matrix& points, std::size_t bins, double upper, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(points.rows());
  require(n >= 2, "pairwise_histogram: need at least 2 points");
  const std::size_t pairs = n * (n - 1) / 2;
  std::vector<double> d;
  if (pairs <= kMaxHistogramPairs) {
    d.reserve(pairs);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      for (Eigen::Index j = i + 1; j < points.rows(); ++j) d.push_back((points.row(i) - points.row(j)).norm());
    }
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Eigen::Index> pick(0, points.rows() - 1);
    d.reserve(kMaxHistogramPairs);
    while (d.size() < kMaxHistogramPairs) {
      const Eigen::Index i = pick(rng);
      const Eigen::Index j = pick(rng);
      if (i != j) d.push_back((points.row(i) - points.row(j)).norm());
    }
  }
  return distance_histogram(d, static_cast<int>(points.cols()), bins, upper);
}

}  // namespace sphash::geometry
