#include <doctest.h>

#include <cmath>

#include "pudm/diffusion.hpp"
#include "pudm/errors.hpp"
#include "support.hpp"

using namespace pudm;

TEST_CASE("schedule built from alphas") {
  const NoiseSchedule s = NoiseSchedule::from_alphas({0.9, 0.8});
  CHECK(s.steps() == 2);
  CHECK(s.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(s.alpha_bar(2) == doctest::Approx(0.72).epsilon(1e-15));
  CHECK(s.beta(2) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK_THROWS_AS(s.alpha_bar(0), std::invalid_argument);
  CHECK_THROWS_AS(s.alpha_bar(3), std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule::from_alphas({0.9, 1.0}), std::invalid_argument);
}

TEST_CASE("default linear schedule") {
  const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  // Regression constant, computed once from the float product.
  CHECK(s.alpha_bar(1000) == doctest::Approx(4.035829765375676e-05).epsilon(1e-12));
  CHECK(s.alpha_bar(1000) < 1e-4);
  CHECK(s.beta(1) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(s.beta(1000) == doctest::Approx(0.02).epsilon(1e-12));
  double log_sum = 0.0;
  for (int t = 1; t <= 1000; ++t) {
    CHECK(s.alpha(t) > 0.0);
    CHECK(s.alpha(t) < 1.0);
    if (t > 1) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    log_sum += std::log(s.alpha(t));
    CHECK(std::abs(s.alpha_bar(t) - std::exp(log_sum)) <= 1e-12 * s.alpha_bar(t));
  }
}

TEST_CASE("schedule argument checks") {
  CHECK_THROWS_AS(make_schedule(1000, 0.02, 1e-4), std::invalid_argument);
  CHECK_THROWS_AS(make_schedule(0, 1e-4, 0.02), std::invalid_argument);
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.02), std::invalid_argument);
  CHECK_THROWS_AS(make_schedule(10, 1e-4, 1.0), std::invalid_argument);
  CHECK_NOTHROW(make_schedule(1, 0.01, 0.01));
}

TEST_CASE("q_sample closed form") {
  const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  Vector x0(2);
  x0 << 1.5, -0.5;
  const Vector zero = Vector::Zero(2);
  CHECK((q_sample(x0, 300, zero, s) - std::sqrt(s.alpha_bar(300)) * x0).norm() == 0.0);
  const Vector eps = testutil::random_points(2, 1, 3).col(0);
  CHECK((q_sample(x0, 1, eps, s) - x0).cwiseAbs().maxCoeff() < 0.02);
  CHECK_THROWS_AS(q_sample(x0, 0, eps, s), std::invalid_argument);
  CHECK_THROWS_AS(q_sample(x0, 1001, eps, s), std::invalid_argument);
}

TEST_CASE("q_sample moments over 1e5 draws") {
  const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  const int n = 100000;
  const int t = 400;
  Matrix x0(2, n);
  x0.row(0).setConstant(1.5);
  x0.row(1).setConstant(-0.5);
  const Matrix xt = q_sample(x0, t, testutil::random_points(2, n, 4), s);
  const double ab = s.alpha_bar(t);
  for (int d = 0; d < 2; ++d) {
    const double mean = xt.row(d).mean();
    const double var = (xt.row(d).array() - mean).square().sum() / (n - 1);
    const double target_var = 1.0 - ab;
    CHECK(std::abs(mean - std::sqrt(ab) * x0(d, 0)) < 3.0 * std::sqrt(target_var / n));
    // Var of the sample variance of a Gaussian is 2 sigma^4 / (n - 1).
    CHECK(std::abs(var - target_var) < 3.0 * target_var * std::sqrt(2.0 / (n - 1)));
  }
}

TEST_CASE("zero net has expected loss 1") {
  const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  const DenoiserParams p = zeros_like(testutil::small_net(1));
  const int n = 100000;
  Rng rng(5);
  const LossBatch b = loss_ell(p, testutil::random_points(2, n, 6), s, rng);
  double mean = 0.0;
  for (double v : b.ell) mean += v;
  mean /= n;
  // ell = (e1^2 + e2^2) / 2 has variance 1.
  CHECK(std::abs(mean - 1.0) < 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("perfect predictor gives zero loss") {
  // x0 = 0 and a single step: x_1 = sqrt(1 - abar) eps, so eps = x_1 / sqrt(1 - abar)
  // is exactly representable by a linear layer.
  const NoiseSchedule s = NoiseSchedule::from_alphas({0.75});
  DenoiserParams p;
  p.data_dim = 2;
  p.time_dim = 2;
  Matrix w = Matrix::Zero(2, 4);
  w.leftCols(2) = Matrix::Identity(2, 2) / 0.5;
  p.layers.push_back({w, Vector::Zero(2)});
  Rng rng(7);
  const LossBatch b = loss_ell(p, Matrix(Matrix::Zero(2, 50)), s, rng);
  for (double v : b.ell) CHECK(v < 1e-28);
}

TEST_CASE("loss replay from the recorded draw") {
  const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  const DenoiserParams p = testutil::small_net(8);
  Vector x0(2);
  x0 << -2.0, 0.3;
  Rng rng(9);
  const LossSample ls = loss_ell(p, x0, s, rng);
  CHECK(ls.t >= 1);
  CHECK(ls.t <= 1000);
  const Vector xt = q_sample(x0, ls.t, ls.eps, s);
  const Vector eh = mlp_forward(p, xt, ls.t);
  CHECK(ls.ell_hat == doctest::Approx((ls.eps - eh).squaredNorm() / 2.0).epsilon(1e-14));

  Rng again(9);
  CHECK(loss_ell(p, x0, s, again).ell_hat == ls.ell_hat);
}

TEST_CASE("K draws average inside ell") {
  const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  const DenoiserParams p = testutil::small_net(10);
  const Matrix x0 = testutil::random_points(2, 3, 11);
  Rng rng(12);
  const LossBatch b = loss_ell(p, x0, s, rng, 4);
  REQUIRE(b.ell.size() == 3);
  REQUIRE(b.draws.ts.size() == 12);
  for (int e = 0; e < 3; ++e) {
    double acc = 0.0;
    for (int k = 0; k < 4; ++k) acc += b.residual.col(e * 4 + k).squaredNorm() / 2.0;
    CHECK(b.ell[e] == doctest::Approx(acc / 4.0).epsilon(1e-14));
  }
}

TEST_CASE("bce values") {
  CHECK(bce_loss(std::log(2.0), 1) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  for (double l : {0.0, 0.2, 3.0, 40.0}) CHECK(bce_loss(l, 0) == l);
  // -log(1 - e^-x) with the series 1 - e^-x = x (1 - x/2 + x^2/6 - ...).
  const double x = 1e-9;
  const double oracle = -std::log(x) - std::log1p(-x / 2.0 + x * x / 6.0);
  CHECK(bce_loss(1e-9, 1) == doctest::Approx(oracle).epsilon(1e-14));
  CHECK(bce_loss(1e-9, 1) == doctest::Approx(20.7232658).epsilon(1e-8));
  CHECK(bce_loss(0.0, 1) == bce_loss(kEllMin, 1));
  CHECK(std::isfinite(bce_loss(0.0, 1)));
  CHECK_THROWS_AS(bce_loss(-1e-3, 0), std::invalid_argument);
  CHECK_THROWS_AS(bce_loss(0.5, 2), std::invalid_argument);
}

TEST_CASE("bce properties on a grid") {
  double prev0 = -1.0;
  double prev1 = std::numeric_limits<double>::infinity();
  for (int i = 1; i <= 400; ++i) {
    const double l = 0.01 * i;
    const double p0 = std::exp(-bce_loss(l, 0));
    const double p1 = std::exp(-bce_loss(l, 1));
    CHECK(p0 + p1 == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(bce_loss(l, 0) > prev0);
    CHECK(bce_loss(l, 1) < prev1);
    CHECK(bce_loss(l, 1) >= 0.0);
    prev0 = bce_loss(l, 0);
    prev1 = bce_loss(l, 1);
  }
}

TEST_CASE("bce derivative") {
  CHECK(bce_dloss(0.37, 0) == 1.0);
  CHECK(bce_dloss(std::log(2.0), 1) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(bce_dloss(1e-12, 1) == -kMultiplierClamp);
  for (double l : {0.05, 0.5, 2.0, 7.0}) {
    const double h = 1e-6;
    const double num = (bce_loss(l + h, 1) - bce_loss(l - h, 1)) / (2 * h);
    CHECK(bce_dloss(l, 1) == doctest::Approx(num).epsilon(1e-7));
  }
}

TEST_CASE("bce backward") {
  const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  const DenoiserParams p = testutil::small_net(13);
  Vector x0(2);
  x0 << 1.7, 0.4;
  Rng rng(14);
  const LossSample ls = loss_ell(p, x0, s, rng);

  SUBCASE("y = 0 is the plain loss gradient") {
    const double one[1] = {1.0};
    CHECK(testutil::bit_identical(bce_backward(p, ls, 0), loss_backward(p, ls.batch, one)));
  }
  for (int y : {0, 1}) {
    CAPTURE(y);
    auto f = [&](const DenoiserParams& q) {
      return bce_loss(loss_from_draws(q, x0, ls.batch.draws, s).ell[0], y);
    };
    const auto r = testutil::fd_check(p, bce_backward(p, ls, y), f);
    CHECK(r.max_rel_error <= 1e-4);
  }
}

TEST_CASE("loss gradient with K draws and conditions matches finite differences") {
  const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  const DenoiserParams p = testutil::small_net(15, 8, 2, 4, 2, 2);
  const Matrix x0 = testutil::random_points(2, 3, 16);
  const std::vector<int> conds = {1, kNoCondition, 0};
  Rng rng(17);
  const LossBatch b = loss_ell(p, x0, s, rng, 3, conds);
  const std::vector<double> mult = {0.4, -1.3, 2.0};
  auto f = [&](const DenoiserParams& q) {
    const LossBatch e = loss_from_draws(q, x0, b.draws, s, conds);
    double acc = 0.0;
    for (int i = 0; i < 3; ++i) acc += mult[i] * e.ell[i];
    return acc;
  };
  const auto r = testutil::fd_check(p, loss_backward(p, b, mult), f);
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("condition dropout") {
  std::vector<int> conds(100000, 1);
  Rng rng = make_rng(3, Stream::kCondDrop);
  const std::vector<int> out = drop_conditions(conds, kCondDropout, rng);
  const double rate =
      static_cast<double>(std::count(out.begin(), out.end(), kNoCondition)) / conds.size();
  CHECK(std::abs(rate - 0.1) < 3.0 * std::sqrt(0.09 / conds.size()));
  CHECK(std::count(out.begin(), out.end(), 1) + std::count(out.begin(), out.end(), kNoCondition) ==
        static_cast<long>(conds.size()));
  CHECK(drop_conditions(conds, 0.0, rng) == conds);
  CHECK(std::count(conds.begin(), conds.end(), 1) == 100000);
  const auto all = drop_conditions(conds, 1.0, rng);
  CHECK(std::count(all.begin(), all.end(), kNoCondition) == 100000);
  CHECK_THROWS_AS(drop_conditions(conds, 1.5, rng), std::invalid_argument);
}

TEST_CASE("non-finite data is a numeric error") {
  const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  const DenoiserParams p = testutil::small_net(18);
  Matrix x0 = Matrix::Zero(2, 2);
  x0(1, 1) = std::nan("");
  Rng rng(1);
  CHECK_THROWS_AS(loss_ell(p, x0, s, rng), NumericError);
}
