#pragma once

#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "pudm/diffusion.hpp"

namespace pudm {

// Noise predictor over a batch: x_t (d x n), step t -> eps_hat (d x n).
using EpsFn = std::function<Matrix(const Matrix& x_t, int t)>;

enum class Scheduler { kDdpm, kDdim };

Scheduler parse_scheduler(std::string_view s);
std::string_view to_string(Scheduler s);

struct SampleRunSpec {
  int n_samples = 1;
  Scheduler scheduler = Scheduler::kDdpm;
  int ddim_steps = 50;
  std::optional<int> cond;       // class id for conditional models
  double guidance_weight = 0.0;  // classifier-free guidance, conditional only
  std::uint64_t seed = 0;

  void validate(const NoiseSchedule& sched) const;
};

// Classifier-free guidance: (1 + w) eps(x, t, c) - w eps(x, t, null).
Matrix guided_predict(const DenoiserParams& params, const Matrix& x_t, int t, int cond, double w);

// Wraps the MLP (optionally guided) as an EpsFn.
EpsFn make_eps_fn(const DenoiserParams& params, std::optional<int> cond = std::nullopt,
                  double guidance_weight = 0.0);

// Ancestral sampling, sigma_t^2 = beta_t, no noise on the final step.
Matrix ddpm_sample(const EpsFn& eps, const NoiseSchedule& sched, int n, int dim, Rng& rng);

// Retained DDIM steps: evenly strided from T down to 1 (both included).
std::vector<int> ddim_timesteps(int total_steps, int ddim_steps);

// Deterministic DDIM (eta = 0) over ddim_timesteps(); returns x0_hat of the
// last retained step.
Matrix ddim_sample(const EpsFn& eps, const NoiseSchedule& sched, int n, int dim, int ddim_steps,
                   Rng& rng);

// Same, starting from a given x_T.
Matrix ddim_from(const EpsFn& eps, const NoiseSchedule& sched, Matrix x, int ddim_steps);

// Runs the scheduler selected by spec with the model.
Matrix sample(const DenoiserParams& params, const NoiseSchedule& sched, const SampleRunSpec& spec);

}  // namespace pudm
