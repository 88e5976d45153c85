#pragma once

#include <string>
#include <string_view>

#include "pudm/diffusion.hpp"

namespace pudm {

enum class Correction { kMax, kAbs };

Correction parse_correction(std::string_view s);
std::string_view to_string(Correction c);

struct PuConfig {
  double beta = 0.1;  // fraction of sensitive data inside U
  Correction correction = Correction::kMax;
  int batch_u = 128;
  int batch_s = 32;
  int mc_draws = 1;  // K draws averaged inside ell before the BCE nonlinearity

  void validate() const;
};

// The three empirical risks of the PU estimator:
//   L_S^+ = mean_S bce(x, 1)     L_U^- = mean_U bce(x, 0)     L_S^- = mean_S bce(x, 0)
// Each sensitive example uses one shared (t, eps) draw for both of its terms.
struct PuTerms {
  double s_plus = 0.0;
  double u_minus = 0.0;
  double s_minus = 0.0;
  LossBatch u;
  LossBatch s;

  // L_U^- - beta L_S^-, the estimate of (1 - beta) E_N[bce(x, 0)].
  double deficit(double beta) const { return u_minus - beta * s_minus; }
};

struct ObjectiveValue {
  double value = 0.0;
  DenoiserParams grad;
};

double mean_bce(const LossBatch& batch, int y);

// Builds the terms from already evaluated loss batches.
PuTerms pu_terms(LossBatch u, LossBatch s);
PuTerms pu_terms(const DenoiserParams& params, const Matrix& batch_u, const Matrix& batch_s,
                 const NoiseSchedule& sched, Rng& rng_u, Rng& rng_s, const PuConfig& cfg);

// Corrected objective: beta L_S^+ + max{0, deficit} (Max) or + |deficit| (Abs).
double pu_loss(double s_plus, double u_minus, double s_minus, const PuConfig& cfg);
inline double pu_loss(const PuTerms& t, const PuConfig& cfg) {
  return pu_loss(t.s_plus, t.u_minus, t.s_minus, cfg);
}

enum class Branch { kPositive, kNegative };

struct PuGradient {
  Branch branch = Branch::kPositive;
  double objective = 0.0;  // value of the function whose gradient is returned
  DenoiserParams grad;
};

// Gradient selected by the non-negative correction.
//   deficit >= 0:        grad(beta L_S^+ + L_U^- - beta L_S^-)
//   deficit <  0, Max:   grad(-(L_U^- - beta L_S^-))
//   deficit <  0, Abs:   grad(beta L_S^+ - (L_U^- - beta L_S^-))
PuGradient pu_gradient(const DenoiserParams& params, const PuTerms& terms, const PuConfig& cfg);

ObjectiveValue unsupervised_objective(const DenoiserParams& params, const LossBatch& u);
ObjectiveValue unsupervised_objective(const DenoiserParams& params, const Matrix& batch_u,
                                      const NoiseSchedule& sched, Rng& rng_u, int mc_draws = 1);

// mean_U bce(x, 0) + mean_S bce(x, 1)
ObjectiveValue supervised_objective(const DenoiserParams& params, const LossBatch& u,
                                    const LossBatch& s);
ObjectiveValue supervised_objective(const DenoiserParams& params, const Matrix& batch_u,
                                    const Matrix& batch_s, const NoiseSchedule& sched, Rng& rng_u,
                                    Rng& rng_s, int mc_draws = 1);

// beta mean_S bce(x, 1) + (1 - beta) mean_N bce(x, 0). Needs true normal data.
ObjectiveValue pn_objective(const DenoiserParams& params, const LossBatch& s, const LossBatch& n,
                            double beta);
ObjectiveValue pn_objective(const DenoiserParams& params, const Matrix& batch_s,
                            const Matrix& batch_n, const NoiseSchedule& sched, Rng& rng_s,
                            Rng& rng_n, double beta, int mc_draws = 1);

struct StepDiagnostics {
  double lr = 0.0;
  double s_plus = 0.0;
  double u_minus = 0.0;
  double s_minus = 0.0;
  Branch branch = Branch::kPositive;
  double objective = 0.0;
};

// One iteration of the PU training loop: compute terms on the mini-batches,
// select the branch, apply AdamW with the selected gradient.
// Throws NumericError if any term or gradient is non-finite; params and state
// are left untouched in that case.
StepDiagnostics pu_gradient_step(const Matrix& batch_u, const Matrix& batch_s,
                                 DenoiserParams& params, AdamWState& opt, double lr,
                                 const PuConfig& cfg, const NoiseSchedule& sched, Rng& rng_u,
                                 Rng& rng_s);

}  // namespace pudm
