#include "pudm/samplers.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "pudm/errors.hpp"

namespace pudm {

namespace {

Matrix standard_normal(int rows, int cols, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix m(rows, cols);
  // Column-major fill: one sample at a time.
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n01(rng);
  return m;
}

void check_finite(const Matrix& x, int t) {
  if (!x.allFinite()) {
    throw NumericError("non-finite sampler state at step t=" + std::to_string(t));
  }
}

Matrix predict(const EpsFn& eps, const Matrix& x, int t) {
  Matrix e = eps(x, t);
  if (e.rows() != x.rows() || e.cols() != x.cols()) {
    throw std::invalid_argument("noise predictor returned wrong shape");
  }
  check_finite(e, t);
  return e;
}

}  // namespace

Scheduler parse_scheduler(std::string_view s) {
  if (s == "ddpm") return Scheduler::kDdpm;
  if (s == "ddim") return Scheduler::kDdim;
  throw std::invalid_argument("unknown scheduler '" + std::string(s) + "' (expected ddpm|ddim)");
}

std::string_view to_string(Scheduler s) { return s == Scheduler::kDdpm ? "ddpm" : "ddim"; }

void SampleRunSpec::validate(const NoiseSchedule& sched) const {
  if (n_samples <= 0) throw std::invalid_argument("n_samples must be positive");
  if (scheduler == Scheduler::kDdim && (ddim_steps < 1 || ddim_steps > sched.steps())) {
    throw std::invalid_argument("ddim_steps must lie in [1, T]");
  }
  if (!(guidance_weight >= 0.0)) throw std::invalid_argument("guidance weight must be >= 0");
  if (guidance_weight > 0.0 && !cond) {
    throw std::invalid_argument("guidance requires a condition");
  }
}

Matrix guided_predict(const DenoiserParams& params, const Matrix& x_t, int t, int cond,
                      double w) {
  if (!params.conditional()) throw std::invalid_argument("model has no condition embedding");
  if (cond == kNoCondition) throw std::invalid_argument("guided prediction needs a condition");
  const std::vector<int> ts(x_t.cols(), t);
  const std::vector<int> cs(x_t.cols(), cond);
  Matrix e_cond = mlp_forward(params, x_t, ts, cs, nullptr);
  if (w == 0.0) return e_cond;
  const std::vector<int> null_cs(x_t.cols(), kNoCondition);
  const Matrix e_uncond = mlp_forward(params, x_t, ts, null_cs, nullptr);
  return (1.0 + w) * e_cond - w * e_uncond;
}

EpsFn make_eps_fn(const DenoiserParams& params, std::optional<int> cond, double guidance_weight) {
  if (cond) {
    if (!params.conditional()) throw std::invalid_argument("model has no condition embedding");
    const int c = *cond;
    return [&params, c, guidance_weight](const Matrix& x, int t) {
      return guided_predict(params, x, t, c, guidance_weight);
    };
  }
  return [&params](const Matrix& x, int t) {
    const std::vector<int> ts(x.cols(), t);
    return mlp_forward(params, x, ts, {}, nullptr);
  };
}

Matrix ddpm_sample(const EpsFn& eps, const NoiseSchedule& sched, int n, int dim, Rng& rng) {
  if (n <= 0 || dim <= 0) throw std::invalid_argument("sample count and dim must be positive");
  Matrix x = standard_normal(dim, n, rng);
  for (int t = sched.steps(); t >= 1; --t) {
    const double a = sched.alpha(t);
    const double ab = sched.alpha_bar(t);
    const Matrix e = predict(eps, x, t);
    Matrix mean = (x - ((1.0 - a) / std::sqrt(1.0 - ab)) * e) / std::sqrt(a);
    if (t > 1) {
      mean += std::sqrt(sched.beta(t)) * standard_normal(dim, n, rng);
    }
    x = std::move(mean);
    check_finite(x, t);
  }
  return x;
}

std::vector<int> ddim_timesteps(int total_steps, int ddim_steps) {
  if (ddim_steps < 1 || ddim_steps > total_steps) {
    throw std::invalid_argument("ddim_steps must lie in [1, T]");
  }
  if (ddim_steps == 1) return {total_steps};
  std::vector<int> ts;
  ts.reserve(ddim_steps);
  for (int i = 0; i < ddim_steps; ++i) {
    const double pos = static_cast<double>(total_steps - 1) * i / (ddim_steps - 1);
    ts.push_back(total_steps - static_cast<int>(std::lround(pos)));
  }
  return ts;
}

Matrix ddim_from(const EpsFn& eps, const NoiseSchedule& sched, Matrix x, int ddim_steps) {
  const auto ts = ddim_timesteps(sched.steps(), ddim_steps);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const double ab = sched.alpha_bar(t);
    const Matrix e = predict(eps, x, t);
    Matrix x0_hat = (x - std::sqrt(1.0 - ab) * e) / std::sqrt(ab);
    if (i + 1 == ts.size()) {
      x = std::move(x0_hat);
    } else {
      const double ab_next = sched.alpha_bar(ts[i + 1]);
      x = std::sqrt(ab_next) * x0_hat + std::sqrt(1.0 - ab_next) * e;
    }
    check_finite(x, t);
  }
  return x;
}

Matrix ddim_sample(const EpsFn& eps, const NoiseSchedule& sched, int n, int dim, int ddim_steps,
                   Rng& rng) {
  if (n <= 0 || dim <= 0) throw std::invalid_argument("sample count and dim must be positive");
  return ddim_from(eps, sched, standard_normal(dim, n, rng), ddim_steps);
}

Matrix sample(const DenoiserParams& params, const NoiseSchedule& sched,
              const SampleRunSpec& spec) {
  spec.validate(sched);
  // Without spec.cond a conditional model is queried with its null embedding.
  Rng rng = make_rng(spec.seed, Stream::kSample);
  const EpsFn eps = make_eps_fn(params, spec.cond, spec.guidance_weight);
  if (spec.scheduler == Scheduler::kDdpm) {
    return ddpm_sample(eps, sched, spec.n_samples, params.data_dim, rng);
  }
  return ddim_sample(eps, sched, spec.n_samples, params.data_dim, spec.ddim_steps, rng);
}

}  // namespace pudm
