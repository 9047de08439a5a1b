#pragma once

#include "sphash/types.hpp"

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

// Sampling studies of pairwise distances on the simplex interior, the unit
// sphere and the unit cube.

namespace sphash::geometry {

enum class Shape { simplex, sphere, cube };

Shape parse_shape(const std::string& name);
std::string to_string(Shape shape);

/// count x n points, uniform on the (n-1)-simplex. Each row sums to 1.
Matrix sample_simplex(int n, std::size_t count, std::uint64_t seed);
/// count x n points, uniform on the unit sphere S^{n-1}.
Matrix sample_sphere(int n, std::size_t count, std::uint64_t seed);
/// count x n points, uniform in [0,1]^n.
Matrix sample_cube(int n, std::size_t count, std::uint64_t seed);

Matrix sample(Shape shape, int n, std::size_t count, std::uint64_t seed);

/// Largest distance two points of the shape can have.
double max_distance(Shape shape, int n);

/// Distances between `count` independent pairs of fresh samples.
std::vector<double> sample_pair_distances(Shape shape, int n, std::size_t count, std::uint64_t seed);

/// d^{n-2} (1 - d^2/4)^{(n-3)/2}; density of the distance between two uniform points on S^{n-1}, up to scale.
double sphere_distance_density_unnormalized(double d, int n);

/// Integral of the unnormalized density over [0, 2].
double sphere_distance_normalizer(int n);

/// Normalized density.
double sphere_distance_pdf(double d, int n);

/// P(D <= d) by quadrature of the normalized density.
double sphere_distance_cdf(double d, int n);

/// Holds the normalizer for one n so repeated pdf/cdf calls skip the outer quadrature.
class SphereDistance {
 public:
  explicit SphereDistance(int n);

  int dim() const { return n_; }
  double normalizer() const { return normalizer_; }
  double pdf(double d) const;
  double cdf(double d) const;

 private:
  int n_;
  double normalizer_;
};

struct SimplexLandmarks {
  double vertex_to_center = 0.0;
  double vertex_to_vertex = 0.0;
};

SimplexLandmarks simplex_landmarks(int n);

struct DistanceHistogram {
  int dim = 0;
  std::size_t samples = 0;  // number of distances binned
  std::vector<double> edges;
  std::vector<double> masses;
  double mean = 0.0;
  double variance = 0.0;
};

inline constexpr std::size_t kMaxHistogramPairs = 1'000'000;

/// Histogram over [0, upper] of distances between unordered pairs of rows. When the pair
/// count exceeds kMaxHistogramPairs, that many pairs are drawn uniformly with replacement.
DistanceHistogram pairwise_histogram(const Matrix& points, std::size_t bins, double upper, std::uint64_t seed);

/// Histogram of precomputed distances over [0, upper].
DistanceHistogram distance_histogram(const std::vector<double>& distances, int dim, std::size_t bins, double upper);

/// sup |F_empirical - F| for a continuous reference CDF.
template <typename Cdf>
double ks_statistic(std::vector<double> values, Cdf&& cdf) {
  require(!values.empty(), "ks_statistic: no samples");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double f = cdf(values[i]);
    worst = std::max({worst, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return worst;
}

}  // namespace sphash::geometry
