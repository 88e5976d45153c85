#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "pudm/diffusion.hpp"
#include "pudm/samplers.hpp"
#include "pudm/tensor_nn.hpp"

namespace testutil {

// Random small net, well under 500 parameters with the defaults.
inline pudm::DenoiserParams small_net(std::uint64_t seed, int width = 8, int hidden = 2,
                                      int time_dim = 4, int classes = 0, int cond_dim = 0,
                                      int data_dim = 2) {
  pudm::MlpSpec spec;
  spec.data_dim = data_dim;
  spec.time_dim = time_dim;
  spec.hidden_width = width;
  spec.hidden_layers = hidden;
  spec.cond_classes = classes;
  spec.cond_dim = cond_dim;
  return pudm::init_params(spec, seed);
}

inline pudm::Matrix random_points(int dim, int n, std::uint64_t seed, double scale = 1.0) {
  pudm::Rng rng(seed);
  std::normal_distribution<double> n01(0.0, scale);
  pudm::Matrix m(dim, n);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n01(rng);
  return m;
}

struct FdResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Central differences of f against the analytic gradient, one parameter at a
// time. The relative error uses max(|analytic|, |numeric|, floor) as the scale
// so exact zeros do not divide by zero.
inline FdResult fd_check(pudm::DenoiserParams params, const pudm::DenoiserParams& grad,
                         const std::function<double(const pudm::DenoiserParams&)>& f,
                         double h = 1e-5, double floor = 1e-7) {
  FdResult r;
  const pudm::DenoiserParams* self = &params;
  pudm::for_each_tensor(params, grad,
                        [&](Eigen::Ref<pudm::Matrix> x, const Eigen::Ref<const pudm::Matrix>& g) {
                          for (Eigen::Index j = 0; j < x.cols(); ++j) {
                            for (Eigen::Index i = 0; i < x.rows(); ++i) {
                              const double orig = x(i, j);
                              x(i, j) = orig + h;
                              const double fp = f(*self);
                              x(i, j) = orig - h;
                              const double fm = f(*self);
                              x(i, j) = orig;
                              const double num = (fp - fm) / (2.0 * h);
                              const double scale =
                                  std::max({std::abs(num), std::abs(g(i, j)), floor});
                              r.max_rel_error =
                                  std::max(r.max_rel_error, std::abs(num - g(i, j)) / scale);
                              ++r.checked;
                            }
                          }
                        });
  return r;
}

inline double max_abs_diff(const pudm::DenoiserParams& a, const pudm::DenoiserParams& b) {
  double m = 0.0;
  pudm::DenoiserParams copy = a;
  pudm::for_each_tensor(copy, b,
                        [&](Eigen::Ref<pudm::Matrix> x, const Eigen::Ref<const pudm::Matrix>& y) {
                          m = std::max(m, (x - y).cwiseAbs().maxCoeff());
                        });
  return m;
}

inline bool bit_identical(const pudm::DenoiserParams& a, const pudm::DenoiserParams& b) {
  if (!a.same_shape(b)) return false;
  bool same = true;
  pudm::DenoiserParams copy = a;
  pudm::for_each_tensor(copy, b,
                        [&](Eigen::Ref<pudm::Matrix> x, const Eigen::Ref<const pudm::Matrix>& y) {
                          same = same && std::equal(x.data(), x.data() + x.size(), y.data());
                        });
  return same;
}

// Optimal noise predictor for 1-D data x0 ~ N(mu, s^2) under the given
// schedule: eps* = E[eps | x_t], which is affine in x_t.
inline pudm::EpsFn gaussian_optimal_eps(const pudm::NoiseSchedule& sched, double mu, double s) {
  return [sched, mu, s](const pudm::Matrix& x_t, int t) {
    const double ab = sched.alpha_bar(t);
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    const double gain = b / (ab * s * s + b * b);
    return pudm::Matrix((gain * (x_t.array() - a * mu)).matrix());
  };
}

}  // namespace testutil
