#include "pudm/pu_objective.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "pudm/errors.hpp"

namespace pudm {

namespace {

std::vector<double> constant(std::size_t n, double v) { return std::vector<double>(n, v); }

void require_nonempty(const LossBatch& b, const char* name) {
  if (b.examples() == 0) throw std::invalid_argument(std::string("empty batch: ") + name);
}

void require_nonempty(const Matrix& m, const char* name) {
  if (m.cols() == 0) throw std::invalid_argument(std::string("empty batch: ") + name);
}

}  // namespace

Correction parse_correction(std::string_view s) {
  if (s == "max") return Correction::kMax;
  if (s == "abs") return Correction::kAbs;
  throw std::invalid_argument("unknown correction '" + std::string(s) + "' (expected max|abs)");
}

std::string_view to_string(Correction c) { return c == Correction::kMax ? "max" : "abs"; }

void PuConfig::validate() const {
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must lie in [0, 1]");
  if (batch_u <= 0 || batch_s <= 0) throw std::invalid_argument("batch sizes must be positive");
  if (mc_draws < 1) throw std::invalid_argument("mc_draws must be >= 1");
}

double mean_bce(const LossBatch& batch, int y) {
  double acc = 0.0;
  for (double l : batch.ell) acc += bce_loss(l, y);
  return acc / static_cast<double>(batch.examples());
}

PuTerms pu_terms(LossBatch u, LossBatch s) {
  require_nonempty(u, "U");
  require_nonempty(s, "S");
  PuTerms t;
  t.u_minus = mean_bce(u, 0);
  t.s_plus = mean_bce(s, 1);
  t.s_minus = mean_bce(s, 0);
  t.u = std::move(u);
  t.s = std::move(s);
  return t;
}

PuTerms pu_terms(const DenoiserParams& params, const Matrix& batch_u, const Matrix& batch_s,
                 const NoiseSchedule& sched, Rng& rng_u, Rng& rng_s, const PuConfig& cfg) {
  cfg.validate();
  require_nonempty(batch_u, "U");
  require_nonempty(batch_s, "S");
  return pu_terms(loss_ell(params, batch_u, sched, rng_u, cfg.mc_draws),
                  loss_ell(params, batch_s, sched, rng_s, cfg.mc_draws));
}

double pu_loss(double s_plus, double u_minus, double s_minus, const PuConfig& cfg) {
  const double deficit = u_minus - cfg.beta * s_minus;
  const double correction =
      cfg.correction == Correction::kMax ? std::max(0.0, deficit) : std::abs(deficit);
  return cfg.beta * s_plus + correction;
}

PuGradient pu_gradient(const DenoiserParams& params, const PuTerms& terms, const PuConfig& cfg) {
  cfg.validate();
  const double beta = cfg.beta;
  const double deficit = terms.deficit(beta);
  const double inv_u = 1.0 / static_cast<double>(terms.u.examples());
  const double inv_s = 1.0 / static_cast<double>(terms.s.examples());

  PuGradient out;
  out.branch = deficit >= 0.0 ? Branch::kPositive : Branch::kNegative;
  // Per-example multipliers d(objective)/d(ell_i).
  double u_mult = inv_u;
  bool use_s_plus = true;
  double s_minus_sign = -1.0;
  if (out.branch == Branch::kPositive) {
    out.objective = beta * terms.s_plus + deficit;
  } else if (cfg.correction == Correction::kMax) {
    u_mult = -inv_u;
    use_s_plus = false;
    s_minus_sign = 1.0;
    out.objective = -deficit;
  } else {
    u_mult = -inv_u;
    s_minus_sign = 1.0;
    out.objective = beta * terms.s_plus - deficit;
  }

  const auto um = constant(terms.u.examples(), u_mult);
  out.grad = loss_backward(params, terms.u, um);
  // beta == 0 leaves the U-only gradient untouched (bit-identical to the
  // unsupervised step).
  if (beta != 0.0) {
    std::vector<double> sm(terms.s.examples());
    for (std::size_t i = 0; i < sm.size(); ++i) {
      const double plus = use_s_plus ? bce_dloss(terms.s.ell[i], 1) : 0.0;
      sm[i] = beta * inv_s * (plus + s_minus_sign);
    }
    add_scaled(out.grad, loss_backward(params, terms.s, sm), 1.0);
  }
  return out;
}

ObjectiveValue unsupervised_objective(const DenoiserParams& params, const LossBatch& u) {
  require_nonempty(u, "U");
  ObjectiveValue out;
  out.value = mean_bce(u, 0);
  const auto um = constant(u.examples(), 1.0 / static_cast<double>(u.examples()));
  out.grad = loss_backward(params, u, um);
  return out;
}

ObjectiveValue unsupervised_objective(const DenoiserParams& params, const Matrix& batch_u,
                                      const NoiseSchedule& sched, Rng& rng_u, int mc_draws) {
  require_nonempty(batch_u, "U");
  return unsupervised_objective(params, loss_ell(params, batch_u, sched, rng_u, mc_draws));
}

ObjectiveValue supervised_objective(const DenoiserParams& params, const LossBatch& u,
                                    const LossBatch& s) {
  require_nonempty(u, "U");
  require_nonempty(s, "S");
  ObjectiveValue out;
  out.value = mean_bce(u, 0) + mean_bce(s, 1);
  const auto um = constant(u.examples(), 1.0 / static_cast<double>(u.examples()));
  std::vector<double> sm(s.examples());
  for (std::size_t i = 0; i < sm.size(); ++i) {
    sm[i] = bce_dloss(s.ell[i], 1) / static_cast<double>(s.examples());
  }
  out.grad = loss_backward(params, u, um);
  add_scaled(out.grad, loss_backward(params, s, sm), 1.0);
  return out;
}

ObjectiveValue supervised_objective(const DenoiserParams& params, const Matrix& batch_u,
                                    const Matrix& batch_s, const NoiseSchedule& sched, Rng& rng_u,
                                    Rng& rng_s, int mc_draws) {
  require_nonempty(batch_u, "U");
  require_nonempty(batch_s, "S");
  auto u = loss_ell(params, batch_u, sched, rng_u, mc_draws);
  auto s = loss_ell(params, batch_s, sched, rng_s, mc_draws);
  return supervised_objective(params, u, s);
}

ObjectiveValue pn_objective(const DenoiserParams& params, const LossBatch& s, const LossBatch& n,
                            double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must lie in [0, 1]");
  require_nonempty(s, "S");
  require_nonempty(n, "N");
  ObjectiveValue out;
  out.value = beta * mean_bce(s, 1) + (1.0 - beta) * mean_bce(n, 0);
  std::vector<double> sm(s.examples());
  for (std::size_t i = 0; i < sm.size(); ++i) {
    sm[i] = beta * bce_dloss(s.ell[i], 1) / static_cast<double>(s.examples());
  }
  const auto nm = constant(n.examples(), (1.0 - beta) / static_cast<double>(n.examples()));
  out.grad = loss_backward(params, n, nm);
  add_scaled(out.grad, loss_backward(params, s, sm), 1.0);
  return out;
}

ObjectiveValue pn_objective(const DenoiserParams& params, const Matrix& batch_s,
                            const Matrix& batch_n, const NoiseSchedule& sched, Rng& rng_s,
                            Rng& rng_n, double beta, int mc_draws) {
  require_nonempty(batch_s, "S");
  require_nonempty(batch_n, "N");
  auto s = loss_ell(params, batch_s, sched, rng_s, mc_draws);
  auto n = loss_ell(params, batch_n, sched, rng_n, mc_draws);
  return pn_objective(params, s, n, beta);
}

StepDiagnostics pu_gradient_step(const Matrix& batch_u, const Matrix& batch_s,
                                 DenoiserParams& params, AdamWState& opt, double lr,
                                 const PuConfig& cfg, const NoiseSchedule& sched, Rng& rng_u,
                                 Rng& rng_s) {
  PuTerms terms = pu_terms(params, batch_u, batch_s, sched, rng_u, rng_s, cfg);
  PuGradient g = pu_gradient(params, terms, cfg);
  StepDiagnostics diag;
  diag.lr = lr;
  diag.s_plus = terms.s_plus;
  diag.u_minus = terms.u_minus;
  diag.s_minus = terms.s_minus;
  diag.branch = g.branch;
  diag.objective = pu_loss(terms, cfg);
  if (!std::isfinite(diag.objective) || !all_finite(g.grad)) {
    throw NumericError("non-finite PU loss or gradient");
  }
  adamw_step(params, g.grad, opt, lr);
  return diag;
}

}  // namespace pudm
