#include <doctest.h>

#include "dsfnet/smoother.hpp"
#include "oracles.hpp"

using namespace dsfnet;

namespace {

struct Case {
  StateSpaceModel model;
  Dataset data;
};

Case random_case(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> dim(1, 5);
  const int n = dim(rng) + 1;
  const int p = std::min(n, std::uniform_int_distribution<int>(1, 3)(rng));
  const int m = std::uniform_int_distribution<int>(1, 2)(rng);
  const int N = std::uniform_int_distribution<int>(1, 12)(rng);
  Case c{oracle::random_model(rng, n, p, m), oracle::random_data(rng, N, p, m)};
  return c;
}

double max_abs(const Matrix& M) { return M.size() ? M.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace

TEST_SUITE("smoother") {

TEST_CASE("smoothed moments match joint-Gaussian conditioning") {
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    const auto c = random_case(seed);
    const int n = c.model.n(), N = c.data.N();
    const auto cond = oracle::condition_on_outputs(oracle::joint_states(c.model, c.data));
    const SmoothPass sp = smooth(c.model, c.data);
    for (int k = 0; k <= N; ++k) {
      CHECK(max_abs(sp.x_sm[k] - cond.mean.segment(k * n, n)) < 1e-9);
      CHECK(max_abs(sp.P_sm[k] - cond.cov.block(k * n, k * n, n, n)) < 1e-9);
    }
    for (int k = 1; k <= N; ++k) {
      CHECK(max_abs(sp.lag_one[k] - cond.cov.block(k * n, (k - 1) * n, n, n)) < 1e-9);
    }
  }
}

TEST_CASE("prediction-error loglik equals the joint log-density") {
  for (std::uint64_t seed = 200; seed < 220; ++seed) {
    const auto c = random_case(seed);
    const auto cond = oracle::condition_on_outputs(oracle::joint_states(c.model, c.data));
    CHECK(observed_loglik(c.model, c.data) == doctest::Approx(cond.log_density).epsilon(1e-11));
  }
}

TEST_CASE("filtered moments at the last step equal smoothed ones") {
  const auto c = random_case(7);
  FilterPass fp;
  const SmoothPass sp = smooth(c.model, c.data, &fp);
  const int N = c.data.N();
  CHECK(max_abs(fp.x_filt[N - 1] - sp.x_sm[N]) == 0.0);
  CHECK(max_abs(fp.P_filt[N - 1] - sp.P_sm[N]) == 0.0);
}

TEST_CASE("expectation sums match brute-force second moments") {
  const auto c = random_case(31);
  const int n = c.model.n(), m = c.model.m(), N = c.data.N();
  const auto cond = oracle::condition_on_outputs(oracle::joint_states(c.model, c.data));
  const Matrix second = cond.cov + cond.mean * cond.mean.transpose();
  const ESums es = expectation_sums(smooth(c.model, c.data), c.data, c.model.m0);
  Matrix S_xx = Matrix::Zero(n, n), S_xxi = Matrix::Zero(n, n + m), S_xixi = Matrix::Zero(n + m, n + m);
  for (int k = 1; k <= N; ++k) {
    const Vector u = c.data.U.row(k - 1).transpose();
    const Vector xp = cond.mean.segment((k - 1) * n, n);
    const Vector xk = cond.mean.segment(k * n, n);
    S_xx += second.block(k * n, k * n, n, n);
    S_xxi.leftCols(n) += second.block(k * n, (k - 1) * n, n, n);
    S_xxi.rightCols(m) += xk * u.transpose();
    S_xixi.topLeftCorner(n, n) += second.block((k - 1) * n, (k - 1) * n, n, n);
    S_xixi.topRightCorner(n, m) += xp * u.transpose();
    S_xixi.bottomLeftCorner(m, n) += u * xp.transpose();
    S_xixi.bottomRightCorner(m, m) += u * u.transpose();
  }
  CHECK(max_abs(es.S_xx - S_xx) < 1e-8);
  CHECK(max_abs(es.S_xxi - S_xxi) < 1e-8);
  CHECK(max_abs(es.S_xixi - S_xixi) < 1e-8);
  const Vector d = cond.mean.head(n) - c.model.m0;
  CHECK(max_abs(es.E0 - (cond.cov.topLeftCorner(n, n) + d * d.transpose())) < 1e-9);
}

TEST_CASE("ML M-step maximizes the expected complete-data loglik") {
  Rng rng(5);
  auto model = oracle::random_model(rng, 3, 2, 1);
  Dataset data = oracle::random_data(rng, 40, 2, 1);
  const ESums es = expectation_sums(smooth(model, data), data, model.m0);
  const MlUpdate ml = ml_m_step(es, 3);
  const double best = q_function(ml.A, ml.B, ml.sigma2, model.m0, model.R0, es).value;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    Matrix A = ml.A, B = ml.B;
    A(t % 3, (t / 3) % 3) += 0.05 * normal(rng);
    B(t % 3, 0) += 0.05 * normal(rng);
    const double s2 = ml.sigma2 * (1.0 + 0.1 * normal(rng) * normal(rng));
    CHECK(q_function(A, B, std::abs(s2), model.m0, model.R0, es).value <= best + 1e-12);
  }
}

TEST_CASE("Q function flags a singular R0") {
  Rng rng(3);
  auto model = oracle::random_model(rng, 2, 1, 1);
  const Dataset data = oracle::random_data(rng, 5, 1, 1);
  const ESums es = expectation_sums(smooth(model, data), data, model.m0);
  CHECK_FALSE(q_function(model.A, model.B, 1.0, model.m0, model.R0, es).regularized_R0);
  CHECK(q_function(model.A, model.B, 1.0, model.m0, Matrix::Zero(2, 2), es).regularized_R0);
}

TEST_CASE("singular predicted covariance falls back to the pseudo-inverse") {
  Rng rng(11);
  auto model = oracle::random_model(rng, 3, 1, 1);
  // P(1|0) = A R0 A' + sigma^2 I has one eigenvalue at 1e-18.
  model.A = Vector::Ones(3).asDiagonal();
  model.A(2, 2) = 0.0;
  model.R0 = Matrix::Identity(3, 3);
  model.sigma = 1e-9;
  const Dataset data = oracle::random_data(rng, 4, 1, 1);
  const SmoothPass sp = smooth(model, data);
  CHECK(sp.used_pseudo_inverse);
  for (const auto& x : sp.x_sm) CHECK(x.allFinite());
}

TEST_CASE("estimation rejects bad inputs") {
  Rng rng(2);
  auto model = oracle::random_model(rng, 3, 2, 1);
  const Dataset data = oracle::random_data(rng, 6, 2, 1);
  auto with_d = model;
  with_d.D(0, 0) = 0.5;
  CHECK_THROWS_AS(kalman_filter(with_d, data), Error);
  auto silent = model;
  silent.sigma = 0.0;
  CHECK_THROWS_AS(kalman_filter(silent, data), Error);
  const Dataset wrong = oracle::random_data(rng, 6, 3, 1);
  CHECK_THROWS_AS(kalman_filter(model, wrong), DimensionError);
  Dataset nan = data;
  nan.Y(2, 1) = std::nan("");
  CHECK_THROWS_AS(kalman_filter(model, nan), Error);
}

TEST_CASE("exploding data raises FilterDiverged with the step") {
  Rng rng(4);
  auto model = oracle::random_model(rng, 2, 2, 1, true);
  model.A = 50.0 * Matrix::Identity(2, 2);
  model.R0 = Matrix::Identity(2, 2);
  Dataset data = oracle::random_data(rng, 30, 2, 1);
  for (int k = 0; k < 30; ++k) data.Y.row(k) *= std::pow(50.0, k);
  try {
    kalman_filter(model, data);
    FAIL("expected divergence");
  } catch (const FilterDiverged& e) {
    CHECK(e.step() >= 1);
    CHECK(e.step() <= 30);
  }
}

}
