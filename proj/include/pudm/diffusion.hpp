#pragma once

#include <span>
#include <vector>

#include "pudm/rng.hpp"
#include "pudm/tensor_nn.hpp"

namespace pudm {

// Linear-beta DDPM schedule. Step t is 1-based; alpha(t) = 1 - beta(t),
// alpha_bar(t) = prod_{s <= t} alpha(s).
class NoiseSchedule {
 public:
  static NoiseSchedule linear(int steps, double beta_start, double beta_end);
  static NoiseSchedule from_alphas(std::vector<double> alphas);

  int steps() const { return static_cast<int>(alphas_.size()); }
  double alpha(int t) const { return alphas_.at(index(t)); }
  double beta(int t) const { return 1.0 - alphas_.at(index(t)); }
  double alpha_bar(int t) const { return alpha_bars_.at(index(t)); }
  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

 private:
  explicit NoiseSchedule(std::vector<double> alphas);
  std::size_t index(int t) const;

  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
};

inline NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
  return NoiseSchedule::linear(steps, beta_start, beta_end);
}

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps. Works column-wise.
Matrix q_sample(const Matrix& x0, int t, const Matrix& eps, const NoiseSchedule& sched);
Vector q_sample(const Vector& x0, int t, const Vector& eps, const NoiseSchedule& sched);

// Frozen Monte-Carlo draws for a batch of B examples with K draws each.
// Column j = b * K + k holds draw k of example b.
struct LossDraws {
  int draws_per_example = 1;
  std::vector<int> ts;
  Matrix eps;  // data_dim x (B * K)
};

// Per-example single- or K-draw estimate of the denoising loss
//   ell(x0) = mean_d (eps - eps_theta(x_t, t))^2
// with t ~ U{1..T}, eps ~ N(0, I). When K > 1, the K squared-error values are
// averaged before any nonlinearity is applied by the caller.
struct LossBatch {
  LossDraws draws;
  std::vector<int> conds;  // per column (empty for unconditional)
  std::vector<double> ell;  // per example
  Matrix residual;          // eps - eps_hat, data_dim x (B * K)
  MlpCache cache;

  std::size_t examples() const { return ell.size(); }
};

// Single-example view, kept for the single-point API.
struct LossSample {
  double ell_hat = 0.0;
  int t = 0;
  Vector eps;
  LossBatch batch;
};

// Condition dropout for classifier-free guidance training: each id is
// replaced by kNoCondition with probability p.
inline constexpr double kCondDropout = 0.1;
std::vector<int> drop_conditions(std::span<const int> conds, double p, Rng& rng);

LossDraws draw_loss_noise(int batch, int draws_per_example, int data_dim,
                          const NoiseSchedule& sched, Rng& rng);

// Evaluates the loss for frozen draws. conds (per example, may be empty) are
// repeated over the K draws.
LossBatch loss_from_draws(const DenoiserParams& params, const Matrix& x0, LossDraws draws,
                          const NoiseSchedule& sched, std::span<const int> conds = {});

LossBatch loss_ell(const DenoiserParams& params, const Matrix& x0, const NoiseSchedule& sched,
                   Rng& rng, int draws_per_example = 1, std::span<const int> conds = {});

LossSample loss_ell(const DenoiserParams& params, const Vector& x0, const NoiseSchedule& sched,
                    Rng& rng, std::optional<int> cond = std::nullopt);

// Gradient of sum_b multiplier[b] * ell[b] with respect to the parameters.
DenoiserParams loss_backward(const DenoiserParams& params, const LossBatch& batch,
                             std::span<const double> multipliers);

// Clamp constants for the y = 1 branch.
inline constexpr double kEllMin = 1e-9;
inline constexpr double kMultiplierClamp = 1e4;

// Binary cross entropy of p(y | x) with p(y=0|x) = exp(-ell):
//   y = 0: ell
//   y = 1: -log(1 - exp(-max(ell, kEllMin)))
double bce_loss(double ell, int y);

// d bce / d ell. 1 for y = 0; -1 / expm1(ell) for y = 1, clamped to
// magnitude kMultiplierClamp.
double bce_dloss(double ell, int y);

DenoiserParams bce_backward(const DenoiserParams& params, const LossSample& sample, int y);

}  // namespace pudm
