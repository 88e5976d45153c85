#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "pudm/data.hpp"

namespace pudm {

// Analytic ground-truth classifier for the synthetic families.
//   two_gaussians: nearest center (ties go to normal)
//   two_moons:     nearest moon arc
//   checkerboard:  parity of the cell containing the point
int oracle_label(const Eigen::Ref<const Vector>& point, DatasetKind kind,
                 const Geometry& geometry);

// Fraction of samples (columns) the oracle labels normal.
double non_sensitive_rate(const Matrix& samples, DatasetKind kind, const Geometry& geometry);

// 1-D 2-Wasserstein distance between two empirical distributions, computed
// exactly from their quantile functions (equal sizes reduce to sorted matching).
double wasserstein_1d(std::vector<double> a, std::vector<double> b);

// Mean over n_proj seed-fixed random unit directions of the projected 1-D
// 2-Wasserstein distance. Points are columns.
double sliced_wasserstein(const Matrix& a, const Matrix& b, int n_proj, std::uint64_t seed);

inline constexpr int kDefaultProjections = 128;

struct EvalReport {
  double non_sensitive_rate = 0.0;
  double sw_distance = 0.0;
  std::size_t n_samples = 0;
  DatasetKind kind = DatasetKind::kTwoGaussians;
  std::string run;  // free-form run label (method, beta, seed)

  static std::string csv_header();
  std::string csv_row() const;
  std::string text() const;
};

}  // namespace pudm
