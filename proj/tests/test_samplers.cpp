#include <doctest.h>

#include <cmath>

#include "pudm/errors.hpp"
#include "pudm/samplers.hpp"
#include "support.hpp"

using namespace pudm;

namespace {

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

Moments moments(const Matrix& x) {
  Moments m;
  const double n = static_cast<double>(x.size());
  m.mean = x.sum() / n;
  m.var = (x.array() - m.mean).square().sum() / (n - 1);
  return m;
}

// Independent scalar propagation of DDIM with the affine optimal denoiser:
// returns (A, c) with output = A x_T + c.
std::pair<double, double> ddim_affine(const NoiseSchedule& s, int steps, double mu, double sd) {
  const auto ts = ddim_timesteps(s.steps(), steps);
  double A = 1.0, c = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double ab = s.alpha_bar(ts[i]);
    const double a = std::sqrt(ab), b = std::sqrt(1 - ab);
    const double g = b / (ab * sd * sd + b * b);
    // e = g (x - a mu); x0 = (x - b e) / a
    const double eA = g * A, ec = g * (c - a * mu);
    const double x0A = (A - b * eA) / a, x0c = (c - b * ec) / a;
    if (i + 1 == ts.size()) return {x0A, x0c};
    const double abn = s.alpha_bar(ts[i + 1]);
    A = std::sqrt(abn) * x0A + std::sqrt(1 - abn) * eA;
    c = std::sqrt(abn) * x0c + std::sqrt(1 - abn) * ec;
  }
  return {A, c};
}

const NoiseSchedule& sched() {
  static const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  return s;
}

}  // namespace

TEST_CASE("single-step DDPM with zero predictor") {
  const NoiseSchedule s = NoiseSchedule::from_alphas({0.81});
  const EpsFn zero = [](const Matrix& x, int) { return Matrix::Zero(x.rows(), x.cols()).eval(); };
  Rng rng(5);
  const Matrix out = ddpm_sample(zero, s, 7, 2, rng);
  Rng replay(5);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int j = 0; j < 7; ++j) {
    for (int i = 0; i < 2; ++i) CHECK(out(i, j) == doctest::Approx(n01(replay) / 0.9).epsilon(1e-15));
  }
}

TEST_CASE("DDPM with the optimal Gaussian denoiser reproduces the target moments") {
  for (auto [mu, sd] : std::vector<std::pair<double, double>>{{0.5, 1.0}, {-1.0, 0.5}}) {
    CAPTURE(mu);
    CAPTURE(sd);
    Rng rng(11);
    const int n = 100000;
    const Moments m = moments(ddpm_sample(testutil::gaussian_optimal_eps(sched(), mu, sd), sched(),
                                          n, 1, rng));
    CHECK(std::abs(m.mean - mu) < 3.0 * sd / std::sqrt(n));
    CHECK(std::abs(m.var - sd * sd) < 3.0 * sd * sd * std::sqrt(2.0 / (n - 1)));
  }
}

TEST_CASE("DDIM with T steps and the optimal denoiser reproduces the target moments") {
  const double mu = 0.5, sd = 1.0;
  const int n = 100000;
  Rng rng(12);
  const Moments m = moments(ddim_sample(testutil::gaussian_optimal_eps(sched(), mu, sd), sched(),
                                        n, 1, 1000, rng));
  CHECK(std::abs(m.mean - mu) < 3.0 * sd / std::sqrt(n));
  CHECK(std::abs(m.var - sd * sd) < 3.0 * sd * sd * std::sqrt(2.0 / (n - 1)));
}

TEST_CASE("DDIM(50) matches its analytic pushforward") {
  // A 50-step deterministic sampler contracts the variance by a few percent
  // even with the exact denoiser; the affine recursion predicts how much.
  for (auto [mu, sd] : std::vector<std::pair<double, double>>{{0.5, 1.0}, {1.0, 0.5}}) {
    const auto [A, c] = ddim_affine(sched(), 50, mu, sd);
    const int n = 100000;
    Rng rng(13);
    const Moments m = moments(ddim_sample(testutil::gaussian_optimal_eps(sched(), mu, sd), sched(),
                                          n, 1, 50, rng));
    CHECK(std::abs(m.mean - c) < 3.0 * std::abs(A) / std::sqrt(n));
    CHECK(std::abs(m.var - A * A) < 3.0 * A * A * std::sqrt(2.0 / (n - 1)));
    CHECK(A * A < sd * sd);
  }
}

TEST_CASE("DDIM with a perfect denoiser recovers x0 at every step") {
  const Matrix x0 = testutil::random_points(2, 9, 21);
  const Matrix eps = testutil::random_points(2, 9, 22);
  std::vector<Matrix> x0_hats;
  const EpsFn perfect = [&](const Matrix& x, int t) {
    const double ab = sched().alpha_bar(t);
    const Matrix e = (x - std::sqrt(ab) * x0) / std::sqrt(1 - ab);
    x0_hats.push_back((x - std::sqrt(1 - ab) * e) / std::sqrt(ab));
    return e;
  };
  const Matrix out = ddim_from(perfect, sched(), q_sample(x0, 1000, eps, sched()), 50);
  REQUIRE(x0_hats.size() == 50);
  for (const auto& h : x0_hats) CHECK((h - x0).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((out - x0).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("DDIM timestep subsets") {
  const auto ts = ddim_timesteps(1000, 50);
  REQUIRE(ts.size() == 50);
  CHECK(ts.front() == 1000);
  CHECK(ts.back() == 1);
  for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] < ts[i - 1]);
  const auto all = ddim_timesteps(10, 10);
  for (int i = 0; i < 10; ++i) CHECK(all[i] == 10 - i);
  CHECK(ddim_timesteps(10, 1) == std::vector<int>{10});
  CHECK_THROWS_AS(ddim_timesteps(10, 0), std::invalid_argument);
  CHECK_THROWS_AS(ddim_timesteps(10, 11), std::invalid_argument);
}

TEST_CASE("sampling is deterministic given the seed") {
  const DenoiserParams p = testutil::small_net(30);
  const NoiseSchedule s = make_schedule(100, 1e-4, 0.02);
  for (auto sch : {Scheduler::kDdpm, Scheduler::kDdim}) {
    SampleRunSpec spec;
    spec.n_samples = 50;
    spec.scheduler = sch;
    spec.ddim_steps = 10;
    spec.seed = 3;
    const Matrix a = sample(p, s, spec);
    CHECK(a == sample(p, s, spec));
    CHECK(a.allFinite());
    spec.seed = 4;
    CHECK(a != sample(p, s, spec));
  }
}

TEST_CASE("sample run spec validation") {
  SampleRunSpec spec;
  spec.n_samples = 0;
  CHECK_THROWS_AS(spec.validate(sched()), std::invalid_argument);
  spec.n_samples = 5;
  spec.scheduler = Scheduler::kDdim;
  spec.ddim_steps = 1001;
  CHECK_THROWS_AS(spec.validate(sched()), std::invalid_argument);
  spec.ddim_steps = 50;
  spec.guidance_weight = 2.0;
  CHECK_THROWS_AS(spec.validate(sched()), std::invalid_argument);
  spec.cond = 1;
  CHECK_NOTHROW(spec.validate(sched()));
  CHECK(parse_scheduler("ddim") == Scheduler::kDdim);
  CHECK_THROWS_AS(parse_scheduler("euler"), std::invalid_argument);
}

TEST_CASE("non-finite sampler state names the step") {
  const EpsFn bad = [](const Matrix& x, int t) {
    Matrix e = Matrix::Zero(x.rows(), x.cols());
    if (t == 500) e(0, 0) = std::nan("");
    return e;
  };
  Rng rng(1);
  try {
    ddpm_sample(bad, sched(), 3, 2, rng);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("t=500") != std::string::npos);
  }
}

TEST_CASE("classifier-free guidance") {
  DenoiserParams p = testutil::small_net(40, 8, 2, 4, 3, 2);
  const Matrix x = testutil::random_points(2, 5, 41);
  const std::vector<int> ts(5, 123);
  const std::vector<int> c1(5, 1);
  const std::vector<int> cn(5, kNoCondition);
  const Matrix e_c = mlp_forward(p, x, ts, c1, nullptr);
  const Matrix e_u = mlp_forward(p, x, ts, cn, nullptr);

  CHECK(guided_predict(p, x, 123, 1, 0.0) == e_c);
  const Matrix g1 = guided_predict(p, x, 123, 1, 1.0);
  for (Eigen::Index i = 0; i < g1.size(); ++i) {
    CHECK(g1.data()[i] == doctest::Approx(2.0 * e_c.data()[i] - e_u.data()[i]).epsilon(1e-14));
  }

  p.cond_table.row(3) = p.cond_table.row(1);
  const Matrix same = mlp_forward(p, x, ts, c1, nullptr);
  for (double w : {0.5, 3.0, 10.0}) {
    CHECK((guided_predict(p, x, 123, 1, w) - same).cwiseAbs().maxCoeff() < 1e-12);
  }

  CHECK_THROWS_AS(guided_predict(testutil::small_net(1), x, 1, 0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(guided_predict(p, x, 1, kNoCondition, 1.0), std::invalid_argument);

  SampleRunSpec spec;
  spec.n_samples = 20;
  spec.cond = 2;
  spec.guidance_weight = 1.5;
  const NoiseSchedule s = make_schedule(50, 1e-4, 0.02);
  CHECK(sample(p, s, spec).allFinite());
}
