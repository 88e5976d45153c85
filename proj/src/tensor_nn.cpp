#include "pudm/tensor_nn.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "pudm/errors.hpp"

namespace pudm {

namespace {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Matrix silu(const Matrix& z) {
  return z.unaryExpr([](double v) { return v * sigmoid(v); });
}

// d/dz [z * sigmoid(z)] = s (1 + z (1 - s))
Matrix silu_grad(const Matrix& z) {
  return z.unaryExpr([](double v) {
    const double s = sigmoid(v);
    return s * (1.0 + v * (1.0 - s));
  });
}

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

std::size_t DenoiserParams::parameter_count() const {
  std::size_t n = static_cast<std::size_t>(cond_table.size());
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

void DenoiserParams::validate() const {
  if (layers.empty()) throw std::invalid_argument("denoiser has no layers");
  if (data_dim <= 0) throw std::invalid_argument("data_dim must be positive");
  if (cond_classes > 0 && cond_table.rows() != cond_classes + 1) {
    throw std::invalid_argument("cond_table must have cond_classes + 1 rows");
  }
  if (cond_classes == 0 && cond_table.size() != 0) {
    throw std::invalid_argument("cond_table present on unconditional model");
  }
  long expected_in = input_dim();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.weight.cols() != expected_in) {
      throw std::invalid_argument("layer " + std::to_string(i) + " expects input " +
                                  std::to_string(expected_in) + ", weight is " +
                                  shape_str(l.weight));
    }
    if (l.bias.size() != l.weight.rows()) {
      throw std::invalid_argument("layer " + std::to_string(i) + " bias size mismatch");
    }
    expected_in = l.weight.rows();
  }
  if (expected_in != data_dim) {
    throw std::invalid_argument("output layer must produce data_dim outputs");
  }
}

bool DenoiserParams::same_shape(const DenoiserParams& o) const {
  if (data_dim != o.data_dim || time_dim != o.time_dim ||
      cond_classes != o.cond_classes || layers.size() != o.layers.size() ||
      cond_table.rows() != o.cond_table.rows() ||
      cond_table.cols() != o.cond_table.cols()) {
    return false;
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].weight.rows() != o.layers[i].weight.rows() ||
        layers[i].weight.cols() != o.layers[i].weight.cols()) {
      return false;
    }
  }
  return true;
}

DenoiserParams init_params(const MlpSpec& spec, std::uint64_t seed) {
  if (spec.data_dim <= 0 || spec.hidden_width <= 0 || spec.hidden_layers < 0 ||
      spec.time_dim < 0 || spec.time_dim % 2 != 0 || spec.cond_classes < 0 ||
      (spec.cond_classes > 0) != (spec.cond_dim > 0)) {
    throw std::invalid_argument("invalid MLP spec");
  }
  Rng rng = make_rng(seed, Stream::kInit);
  DenoiserParams p;
  p.data_dim = spec.data_dim;
  p.time_dim = spec.time_dim;
  p.cond_classes = spec.cond_classes;
  if (spec.cond_classes > 0) {
    std::normal_distribution<double> n01(0.0, 1.0);
    p.cond_table = Matrix(spec.cond_classes + 1, spec.cond_dim);
    for (Eigen::Index i = 0; i < p.cond_table.size(); ++i) p.cond_table.data()[i] = n01(rng);
  }
  int in = p.input_dim();
  for (int i = 0; i <= spec.hidden_layers; ++i) {
    const int out = (i == spec.hidden_layers) ? spec.data_dim : spec.hidden_width;
    // Uniform(-1/sqrt(in), 1/sqrt(in)), as in the usual Linear default.
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Layer l{Matrix(out, in), Vector(out)};
    for (Eigen::Index k = 0; k < l.weight.size(); ++k) l.weight.data()[k] = u(rng);
    for (Eigen::Index k = 0; k < l.bias.size(); ++k) l.bias[k] = u(rng);
    p.layers.push_back(std::move(l));
    in = out;
  }
  return p;
}

DenoiserParams zeros_like(const DenoiserParams& p) {
  DenoiserParams z = p;
  for (auto& l : z.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  z.cond_table.setZero();
  return z;
}

void for_each_tensor(
    DenoiserParams& a, const DenoiserParams& b,
    const std::function<void(Eigen::Ref<Matrix>, const Eigen::Ref<const Matrix>&)>& fn) {
  if (!a.same_shape(b)) throw std::invalid_argument("parameter shape mismatch");
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    fn(a.layers[i].weight, b.layers[i].weight);
    fn(a.layers[i].bias, b.layers[i].bias);
  }
  if (a.cond_table.size() > 0) fn(a.cond_table, b.cond_table);
}

void for_each_tensor(DenoiserParams& a, const std::function<void(Eigen::Ref<Matrix>)>& fn) {
  for (auto& l : a.layers) {
    fn(l.weight);
    fn(l.bias);
  }
  if (a.cond_table.size() > 0) fn(a.cond_table);
}

void for_each_tensor(const DenoiserParams& a,
                     const std::function<void(const Eigen::Ref<const Matrix>&)>& fn) {
  for (const auto& l : a.layers) {
    fn(l.weight);
    fn(l.bias);
  }
  if (a.cond_table.size() > 0) fn(a.cond_table);
}

void add_scaled(DenoiserParams& a, const DenoiserParams& b, double scale) {
  for_each_tensor(a, b, [scale](Eigen::Ref<Matrix> x, const Eigen::Ref<const Matrix>& y) {
    x += scale * y;
  });
}

bool all_finite(const DenoiserParams& p) {
  bool ok = true;
  for_each_tensor(p, [&ok](const Eigen::Ref<const Matrix>& m) { ok = ok && m.allFinite(); });
  return ok;
}

Vector time_embedding(int t, int dim) {
  if (dim <= 0 || dim % 2 != 0) {
    throw std::invalid_argument("time embedding dim must be positive and even, got " +
                                std::to_string(dim));
  }
  if (t < 1) throw std::invalid_argument("time step must be >= 1, got " + std::to_string(t));
  const int half = dim / 2;
  Vector e(dim);
  for (int k = 0; k < half; ++k) {
    const double freq =
        half == 1 ? 1.0 : std::pow(1e4, -static_cast<double>(k) / static_cast<double>(half - 1));
    const double arg = static_cast<double>(t) * freq;
    e[2 * k] = std::sin(arg);
    e[2 * k + 1] = std::cos(arg);
  }
  return e;
}

Matrix mlp_forward(const DenoiserParams& params, const Matrix& x_t, std::span<const int> ts,
                   std::span<const int> conds, MlpCache* cache) {
  const Eigen::Index batch = x_t.cols();
  if (x_t.rows() != params.data_dim) {
    throw std::invalid_argument("x_t has " + std::to_string(x_t.rows()) +
                                " rows, model data_dim is " + std::to_string(params.data_dim));
  }
  if (static_cast<Eigen::Index>(ts.size()) != batch) {
    throw std::invalid_argument("time step count does not match batch size");
  }
  if (!conds.empty() && static_cast<Eigen::Index>(conds.size()) != batch) {
    throw std::invalid_argument("condition count does not match batch size");
  }
  if (!conds.empty() && !params.conditional()) {
    throw std::invalid_argument("conditions given to an unconditional model");
  }
  if (params.layers.empty() || params.layers.front().weight.cols() != params.input_dim()) {
    throw std::invalid_argument("denoiser parameters are inconsistent");
  }

  Matrix input(params.input_dim(), batch);
  input.topRows(params.data_dim) = x_t;
  for (Eigen::Index b = 0; b < batch; ++b) {
    if (params.time_dim > 0) {
      // Samplers query a whole batch at one t; reuse the previous column then.
      if (b > 0 && ts[b] == ts[b - 1]) {
        input.block(params.data_dim, b, params.time_dim, 1) =
            input.block(params.data_dim, b - 1, params.time_dim, 1);
      } else {
        input.block(params.data_dim, b, params.time_dim, 1) = time_embedding(ts[b], params.time_dim);
      }
    }
    if (params.conditional()) {
      const int c = conds.empty() ? kNoCondition : conds[b];
      if (c != kNoCondition && (c < 0 || c >= params.cond_classes)) {
        throw std::invalid_argument("condition id out of range: " + std::to_string(c));
      }
      const int row = c == kNoCondition ? params.cond_classes : c;
      input.block(params.data_dim + params.time_dim, b, params.cond_dim(), 1) =
          params.cond_table.row(row).transpose();
    }
  }

  std::vector<Matrix> pre;
  std::vector<Matrix> act;
  const std::size_t n_layers = params.layers.size();
  const Matrix* a = &input;
  Matrix out;
  for (std::size_t i = 0; i < n_layers; ++i) {
    const auto& l = params.layers[i];
    if (l.weight.cols() != a->rows()) throw std::invalid_argument("layer shape chain broken");
    Matrix z = l.weight * (*a);
    z.colwise() += l.bias;
    if (i + 1 == n_layers) {
      out = std::move(z);
    } else {
      act.push_back(silu(z));
      pre.push_back(std::move(z));
      a = &act.back();
    }
  }
  if (!out.allFinite()) throw NumericError("denoiser produced a non-finite output");

  if (cache != nullptr) {
    cache->input = std::move(input);
    cache->pre_act = std::move(pre);
    cache->act = std::move(act);
    cache->conds.clear();
    if (params.conditional()) {
      cache->conds.assign(batch, kNoCondition);
      if (!conds.empty()) std::copy(conds.begin(), conds.end(), cache->conds.begin());
    }
    cache->param_layers = n_layers;
  }
  return out;
}

Vector mlp_forward(const DenoiserParams& params, const Vector& x_t, int t,
                   std::optional<int> cond, MlpCache* cache) {
  const int ts[1] = {t};
  const int cs[1] = {cond.value_or(kNoCondition)};
  const Matrix x = x_t;
  return mlp_forward(params, x, ts, cond ? std::span<const int>(cs) : std::span<const int>(),
                     cache)
      .col(0);
}

DenoiserParams mlp_backward(const DenoiserParams& params, const MlpCache& cache,
                            const Matrix& grad_eps_hat) {
  const std::size_t n_layers = params.layers.size();
  if (cache.param_layers != n_layers || cache.pre_act.size() + 1 != n_layers ||
      cache.input.rows() != params.input_dim()) {
    throw std::invalid_argument("MLP cache does not match parameters");
  }
  if (grad_eps_hat.rows() != params.data_dim || grad_eps_hat.cols() != cache.input.cols()) {
    throw std::invalid_argument("upstream gradient shape mismatch");
  }
  DenoiserParams grads = zeros_like(params);
  Matrix delta = grad_eps_hat;
  for (std::size_t k = n_layers; k-- > 0;) {
    const Matrix& a_prev = k == 0 ? cache.input : cache.act[k - 1];
    grads.layers[k].weight.noalias() = delta * a_prev.transpose();
    grads.layers[k].bias = delta.rowwise().sum();
    Matrix back = params.layers[k].weight.transpose() * delta;
    if (k > 0) {
      delta = back.cwiseProduct(silu_grad(cache.pre_act[k - 1]));
    } else if (params.conditional()) {
      const int off = params.data_dim + params.time_dim;
      for (Eigen::Index b = 0; b < back.cols(); ++b) {
        const int c = cache.conds[b];
        const int row = c == kNoCondition ? params.cond_classes : c;
        grads.cond_table.row(row) += back.block(off, b, params.cond_dim(), 1).transpose();
      }
    }
  }
  return grads;
}

AdamWState make_adamw(const DenoiserParams& params, const AdamWHyper& hyper) {
  if (hyper.beta1 < 0 || hyper.beta1 >= 1 || hyper.beta2 < 0 || hyper.beta2 >= 1 ||
      hyper.eps <= 0 || hyper.weight_decay < 0) {
    throw std::invalid_argument("invalid AdamW hyperparameters");
  }
  return AdamWState{zeros_like(params), zeros_like(params), 0, hyper};
}

void adamw_step(DenoiserParams& params, const DenoiserParams& grads, AdamWState& state,
                double lr) {
  if (!(lr >= 0)) throw std::invalid_argument("learning rate must be >= 0");
  if (!params.same_shape(grads) || !params.same_shape(state.m) || !params.same_shape(state.v)) {
    throw std::invalid_argument("AdamW shape mismatch between params, grads and state");
  }
  state.step += 1;
  const auto& h = state.hyper;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  const double decay = 1.0 - lr * h.weight_decay;

  auto update = [&](Eigen::Ref<Matrix> p, const Eigen::Ref<const Matrix>& g, Eigen::Ref<Matrix> m,
                    Eigen::Ref<Matrix> v) {
    m = h.beta1 * m + (1.0 - h.beta1) * g;
    v = h.beta2 * v + (1.0 - h.beta2) * g.cwiseProduct(g);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double mhat = m.data()[i] / bc1;
      const double vhat = v.data()[i] / bc2;
      p.data()[i] = p.data()[i] * decay - lr * mhat / (std::sqrt(vhat) + h.eps);
    }
  };
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    update(params.layers[i].weight, grads.layers[i].weight, state.m.layers[i].weight,
           state.v.layers[i].weight);
    update(params.layers[i].bias, grads.layers[i].bias, state.m.layers[i].bias,
           state.v.layers[i].bias);
  }
  if (params.cond_table.size() > 0) {
    update(params.cond_table, grads.cond_table, state.m.cond_table, state.v.cond_table);
  }
}

double lr_at(const LrSchedule& s, std::int64_t step) {
  if (!(s.base_lr > 0) || s.warmup_steps < 0 || s.total_steps <= s.warmup_steps) {
    throw std::invalid_argument("invalid learning-rate schedule");
  }
  if (step < 0 || step > s.total_steps) {
    throw std::invalid_argument("step " + std::to_string(step) + " outside [0, " +
                                std::to_string(s.total_steps) + "]");
  }
  if (step < s.warmup_steps) {
    return s.base_lr * (static_cast<double>(step) / static_cast<double>(s.warmup_steps));
  }
  const double progress = static_cast<double>(step - s.warmup_steps) /
                          static_cast<double>(s.total_steps - s.warmup_steps);
  return s.base_lr * (0.5 * (1.0 + std::cos(M_PI * progress)));
}

}  // namespace pudm
