#include "pudm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "pudm/rng.hpp"

namespace pudm {

namespace {

// Distance from p to the unit-radius arc centered at c spanning angles
// [lo, hi] (radians, lo < hi, measured with atan2 then shifted into range).
double arc_distance(double px, double py, double cx, double cy, double lo, double hi) {
  const double vx = px - cx;
  const double vy = py - cy;
  double phi = std::atan2(vy, vx);
  if (phi < lo) phi += 2.0 * M_PI;
  if (phi >= lo && phi <= hi) return std::abs(std::hypot(vx, vy) - 1.0);
  const double d_lo = std::hypot(px - (cx + std::cos(lo)), py - (cy + std::sin(lo)));
  const double d_hi = std::hypot(px - (cx + std::cos(hi)), py - (cy + std::sin(hi)));
  return std::min(d_lo, d_hi);
}

}  // namespace

int oracle_label(const Eigen::Ref<const Vector>& p, DatasetKind kind, const Geometry& g) {
  if (p.size() != 2) throw std::invalid_argument("oracle expects 2-D points");
  switch (kind) {
    case DatasetKind::kTwoGaussians: {
      const double dn = std::hypot(p[0] + g.center_offset, p[1]);
      const double ds = std::hypot(p[0] - g.center_offset, p[1]);
      return ds < dn ? kSensitive : kNormal;
    }
    case DatasetKind::kTwoMoons: {
      // Upper moon: center (0, 0), angles [0, pi]. Lower moon: center (1, 0.5),
      // angles [pi, 2 pi].
      const double du = arc_distance(p[0], p[1], 0.0, 0.0, 0.0, M_PI);
      const double dl = arc_distance(p[0], p[1], 1.0, 0.5, M_PI, 2.0 * M_PI);
      return dl < du ? kSensitive : kNormal;
    }
    case DatasetKind::kCheckerboard: {
      const double width = 2.0 * g.checker_extent / g.checker_cells;
      const auto i = static_cast<long>(std::floor((p[0] + g.checker_extent) / width));
      const auto j = static_cast<long>(std::floor((p[1] + g.checker_extent) / width));
      return ((i + j) % 2 + 2) % 2 == 0 ? kNormal : kSensitive;
    }
  }
  throw std::invalid_argument("unknown dataset kind");
}

double non_sensitive_rate(const Matrix& samples, DatasetKind kind, const Geometry& g) {
  if (samples.cols() == 0) throw std::invalid_argument("no samples to evaluate");
  std::size_t normal = 0;
  for (Eigen::Index i = 0; i < samples.cols(); ++i) {
    if (oracle_label(samples.col(i), kind, g) == kNormal) ++normal;
  }
  return static_cast<double>(normal) / static_cast<double>(samples.cols());
}

double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("empty point set");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  // Walk the merged breakpoints of both quantile step functions.
  double acc = 0.0;
  double u = 0.0;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < a.size() && j < b.size()) {
    const double next_a = static_cast<double>(i + 1) / na;
    const double next_b = static_cast<double>(j + 1) / nb;
    const double next = std::min(next_a, next_b);
    const double diff = a[i] - b[j];
    acc += (next - u) * diff * diff;
    u = next;
    // Integer comparison avoids drifting when both steps end together.
    const auto lhs = static_cast<unsigned long long>(i + 1) * b.size();
    const auto rhs = static_cast<unsigned long long>(j + 1) * a.size();
    if (lhs <= rhs) ++i;
    if (rhs <= lhs) ++j;
  }
  return std::sqrt(std::max(acc, 0.0));
}

double sliced_wasserstein(const Matrix& a, const Matrix& b, int n_proj, std::uint64_t seed) {
  if (a.cols() == 0 || b.cols() == 0) throw std::invalid_argument("empty point set");
  if (a.rows() != b.rows()) throw std::invalid_argument("point dimensions differ");
  if (n_proj < 1) throw std::invalid_argument("need at least one projection");
  Rng rng = make_rng(seed, Stream::kProjections);
  std::normal_distribution<double> n01(0.0, 1.0);
  double total = 0.0;
  std::vector<double> pa(a.cols());
  std::vector<double> pb(b.cols());
  for (int k = 0; k < n_proj; ++k) {
    Vector dir(a.rows());
    do {
      for (Eigen::Index i = 0; i < dir.size(); ++i) dir[i] = n01(rng);
    } while (dir.norm() == 0.0);
    dir.normalize();
    Eigen::Map<Vector>(pa.data(), a.cols()) = a.transpose() * dir;
    Eigen::Map<Vector>(pb.data(), b.cols()) = b.transpose() * dir;
    total += wasserstein_1d(pa, pb);
  }
  return total / n_proj;
}

std::string EvalReport::csv_header() { return "run,kind,n_samples,non_sensitive_rate,sw_distance"; }

std::string EvalReport::csv_row() const {
  std::ostringstream os;
  os << run << ',' << to_string(kind) << ',' << n_samples << ',' << format_double(non_sensitive_rate)
     << ',' << format_double(sw_distance);
  return os.str();
}

std::string EvalReport::text() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "run:                 " << run << '\n'
     << "dataset:             " << to_string(kind) << '\n'
     << "samples:             " << n_samples << '\n'
     << "non-sensitive rate:  " << non_sensitive_rate << '\n'
     << "sliced Wasserstein:  " << sw_distance << '\n';
  return os.str();
}

}  // namespace pudm
