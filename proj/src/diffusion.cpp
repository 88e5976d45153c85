#include "pudm/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "pudm/errors.hpp"

namespace pudm {

NoiseSchedule::NoiseSchedule(std::vector<double> alphas) : alphas_(std::move(alphas)) {
  if (alphas_.empty()) throw std::invalid_argument("schedule needs at least one step");
  alpha_bars_.resize(alphas_.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < alphas_.size(); ++i) {
    const double a = alphas_[i];
    if (!(a > 0.0 && a < 1.0)) {
      throw std::invalid_argument("alpha_" + std::to_string(i + 1) + " must lie in (0, 1)");
    }
    prod *= a;
    alpha_bars_[i] = prod;
  }
}

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("schedule needs T >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw std::invalid_argument("need 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> alphas(steps);
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    alphas[i] = 1.0 - (beta_start + (beta_end - beta_start) * frac);
  }
  return NoiseSchedule(std::move(alphas));
}

NoiseSchedule NoiseSchedule::from_alphas(std::vector<double> alphas) {
  return NoiseSchedule(std::move(alphas));
}

std::size_t NoiseSchedule::index(int t) const {
  if (t < 1 || t > steps()) {
    throw std::invalid_argument("step " + std::to_string(t) + " outside [1, " +
                                std::to_string(steps()) + "]");
  }
  return static_cast<std::size_t>(t - 1);
}

Matrix q_sample(const Matrix& x0, int t, const Matrix& eps, const NoiseSchedule& sched) {
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) {
    throw std::invalid_argument("x0 and eps shapes differ");
  }
  const double ab = sched.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

Vector q_sample(const Vector& x0, int t, const Vector& eps, const NoiseSchedule& sched) {
  if (x0.size() != eps.size()) throw std::invalid_argument("x0 and eps shapes differ");
  const double ab = sched.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

LossDraws draw_loss_noise(int batch, int draws_per_example, int data_dim,
                          const NoiseSchedule& sched, Rng& rng) {
  if (batch < 1) throw std::invalid_argument("empty batch");
  if (draws_per_example < 1) throw std::invalid_argument("need at least one draw per example");
  LossDraws d;
  d.draws_per_example = draws_per_example;
  const int cols = batch * draws_per_example;
  d.ts.resize(cols);
  d.eps.resize(data_dim, cols);
  std::uniform_int_distribution<int> ut(1, sched.steps());
  std::normal_distribution<double> n01(0.0, 1.0);
  // t first, then the noise vector, one column at a time.
  for (int j = 0; j < cols; ++j) {
    d.ts[j] = ut(rng);
    for (int i = 0; i < data_dim; ++i) d.eps(i, j) = n01(rng);
  }
  return d;
}

std::vector<int> drop_conditions(std::span<const int> conds, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("dropout probability must be in [0, 1]");
  std::bernoulli_distribution drop(p);
  std::vector<int> out(conds.begin(), conds.end());
  for (int& c : out) {
    if (drop(rng)) c = kNoCondition;
  }
  return out;
}

LossBatch loss_from_draws(const DenoiserParams& params, const Matrix& x0, LossDraws draws,
                          const NoiseSchedule& sched, std::span<const int> conds) {
  const Eigen::Index batch = x0.cols();
  const int k = draws.draws_per_example;
  if (batch < 1) throw std::invalid_argument("empty batch");
  if (x0.rows() != params.data_dim) throw std::invalid_argument("x0 dimension mismatch");
  if (k < 1 || draws.eps.cols() != batch * k || draws.eps.rows() != x0.rows() ||
      static_cast<Eigen::Index>(draws.ts.size()) != batch * k) {
    throw std::invalid_argument("loss draws do not match batch");
  }
  if (!conds.empty() && static_cast<Eigen::Index>(conds.size()) != batch) {
    throw std::invalid_argument("condition count does not match batch");
  }
  if (!x0.allFinite()) throw NumericError("non-finite data point in loss evaluation");

  LossBatch out;
  Matrix x_t(x0.rows(), batch * k);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int j = 0; j < k; ++j) {
      const Eigen::Index col = b * k + j;
      const double ab = sched.alpha_bar(draws.ts[col]);
      x_t.col(col) = std::sqrt(ab) * x0.col(b) + std::sqrt(1.0 - ab) * draws.eps.col(col);
    }
  }
  if (!conds.empty()) {
    out.conds.resize(batch * k);
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (int j = 0; j < k; ++j) out.conds[b * k + j] = conds[b];
    }
  }
  const Matrix eps_hat = mlp_forward(params, x_t, draws.ts, out.conds, &out.cache);
  out.residual = draws.eps - eps_hat;
  const double d = static_cast<double>(x0.rows());
  out.ell.resize(batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    double acc = 0.0;
    for (int j = 0; j < k; ++j) acc += out.residual.col(b * k + j).squaredNorm() / d;
    out.ell[b] = acc / k;
    if (!std::isfinite(out.ell[b])) throw NumericError("non-finite loss value");
  }
  out.draws = std::move(draws);
  return out;
}

LossBatch loss_ell(const DenoiserParams& params, const Matrix& x0, const NoiseSchedule& sched,
                   Rng& rng, int draws_per_example, std::span<const int> conds) {
  LossDraws draws = draw_loss_noise(static_cast<int>(x0.cols()), draws_per_example,
                                    static_cast<int>(x0.rows()), sched, rng);
  return loss_from_draws(params, x0, std::move(draws), sched, conds);
}

LossSample loss_ell(const DenoiserParams& params, const Vector& x0, const NoiseSchedule& sched,
                    Rng& rng, std::optional<int> cond) {
  const int c[1] = {cond.value_or(kNoCondition)};
  const Matrix x = x0;
  LossSample s;
  s.batch = loss_ell(params, x, sched, rng, 1,
                     cond ? std::span<const int>(c) : std::span<const int>());
  s.ell_hat = s.batch.ell[0];
  s.t = s.batch.draws.ts[0];
  s.eps = s.batch.draws.eps.col(0);
  return s;
}

DenoiserParams loss_backward(const DenoiserParams& params, const LossBatch& batch,
                             std::span<const double> multipliers) {
  if (multipliers.size() != batch.examples()) {
    throw std::invalid_argument("one multiplier per example required");
  }
  const int k = batch.draws.draws_per_example;
  const double d = static_cast<double>(batch.residual.rows());
  // ell = (1/K) sum_k (1/d) |eps - eps_hat|^2  =>  d ell / d eps_hat = -(2/(K d)) residual
  Matrix grad(batch.residual.rows(), batch.residual.cols());
  for (std::size_t b = 0; b < batch.examples(); ++b) {
    const double scale = -2.0 * multipliers[b] / (d * k);
    for (int j = 0; j < k; ++j) {
      const Eigen::Index col = static_cast<Eigen::Index>(b) * k + j;
      grad.col(col) = scale * batch.residual.col(col);
    }
  }
  return mlp_backward(params, batch.cache, grad);
}

double bce_loss(double ell, int y) {
  if (!(ell >= 0.0)) throw std::invalid_argument("loss value must be >= 0");
  if (y == 0) return ell;
  if (y != 1) throw std::invalid_argument("label must be 0 or 1");
  const double l = std::max(ell, kEllMin);
  return -std::log(-std::expm1(-l));
}

double bce_dloss(double ell, int y) {
  if (!(ell >= 0.0)) throw std::invalid_argument("loss value must be >= 0");
  if (y == 0) return 1.0;
  if (y != 1) throw std::invalid_argument("label must be 0 or 1");
  const double l = std::max(ell, kEllMin);
  // exp(-l) / (1 - exp(-l)) == 1 / expm1(l)
  const double m = -1.0 / std::expm1(l);
  return std::max(m, -kMultiplierClamp);
}

DenoiserParams bce_backward(const DenoiserParams& params, const LossSample& sample, int y) {
  const double m[1] = {bce_dloss(sample.ell_hat, y)};
  return loss_backward(params, sample.batch, m);
}

}  // namespace pudm
