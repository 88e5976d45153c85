#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "pudm/rng.hpp"

namespace pudm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Condition id meaning "no condition": selects the learned null embedding row.
inline constexpr int kNoCondition = -1;

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

// MLP noise predictor eps_theta(x_t, t[, c]).
//
// The input to the first layer is [x_t ; time_embedding(t) ; cond_table[c]].
// Hidden layers use SiLU; the output layer is linear. cond_table has
// cond_classes + 1 rows; the last row is the null (unconditional) embedding.
// The same type doubles as the gradient container.
struct DenoiserParams {
  int data_dim = 0;
  int time_dim = 0;
  int cond_classes = 0;
  std::vector<Layer> layers;
  Matrix cond_table;  // (cond_classes + 1) x cond_dim, or empty

  int cond_dim() const { return static_cast<int>(cond_table.cols()); }
  int input_dim() const { return data_dim + time_dim + cond_dim(); }
  bool conditional() const { return cond_classes > 0; }
  std::size_t parameter_count() const;

  // Throws std::invalid_argument if the layer chain is inconsistent.
  void validate() const;
  bool same_shape(const DenoiserParams& other) const;
};

struct MlpSpec {
  int data_dim = 2;
  int time_dim = 32;
  int hidden_width = 128;
  int hidden_layers = 3;
  int cond_classes = 0;
  int cond_dim = 0;
};

DenoiserParams init_params(const MlpSpec& spec, std::uint64_t seed);
DenoiserParams zeros_like(const DenoiserParams& p);

// Visits matching tensors of two same-shaped parameter sets, in a fixed order
// (layer weights, layer biases, cond table). Used by the optimizer, the
// checkpoint writer and finite-difference tests.
void for_each_tensor(DenoiserParams& a, const DenoiserParams& b,
                     const std::function<void(Eigen::Ref<Matrix>, const Eigen::Ref<const Matrix>&)>& fn);
void for_each_tensor(DenoiserParams& a,
                     const std::function<void(Eigen::Ref<Matrix>)>& fn);
void for_each_tensor(const DenoiserParams& a,
                     const std::function<void(const Eigen::Ref<const Matrix>&)>& fn);

// a += scale * b
void add_scaled(DenoiserParams& a, const DenoiserParams& b, double scale);
bool all_finite(const DenoiserParams& p);

// Interleaved [sin(f0 t), cos(f0 t), sin(f1 t), ...] with frequencies
// geometrically spaced from 1 down to 1e-4.
Vector time_embedding(int t, int dim);

struct MlpCache {
  Matrix input;                    // input_dim x B
  std::vector<Matrix> pre_act;     // hidden pre-activations, one per hidden layer
  std::vector<Matrix> act;         // hidden activations
  std::vector<int> conds;          // per column, kNoCondition allowed
  std::size_t param_layers = 0;    // layer count of the producing params
};

// Batched forward: x_t is data_dim x B, ts has B entries. conds may be empty
// (unconditional model) or have B entries. Returns eps_hat (data_dim x B).
Matrix mlp_forward(const DenoiserParams& params, const Matrix& x_t,
                   std::span<const int> ts, std::span<const int> conds,
                   MlpCache* cache);

// Single-example convenience wrapper.
Vector mlp_forward(const DenoiserParams& params, const Vector& x_t, int t,
                   std::optional<int> cond = std::nullopt,
                   MlpCache* cache = nullptr);

// Reverse mode: gradient of sum_b <eps_hat[:, b], grad_eps_hat[:, b]> w.r.t.
// every parameter.
DenoiserParams mlp_backward(const DenoiserParams& params, const MlpCache& cache,
                            const Matrix& grad_eps_hat);

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  DenoiserParams m;
  DenoiserParams v;
  std::int64_t step = 0;
  AdamWHyper hyper;
};

AdamWState make_adamw(const DenoiserParams& params, const AdamWHyper& hyper = {});

// Decoupled weight decay: p <- p (1 - lr wd) - lr mhat / (sqrt(vhat) + eps).
void adamw_step(DenoiserParams& params, const DenoiserParams& grads,
                AdamWState& state, double lr);

struct LrSchedule {
  double base_lr = 1e-4;
  std::int64_t warmup_steps = 500;
  std::int64_t total_steps = 1000;
};

// Linear warmup 0 -> base_lr, then half-cosine decay to 0 at total_steps.
double lr_at(const LrSchedule& schedule, std::int64_t step);

}  // namespace pudm
