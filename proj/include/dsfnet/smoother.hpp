#pragma once

#include <vector>

#include "dsfnet/common.hpp"
#include "dsfnet/model.hpp"

namespace dsfnet {

/// Forward Kalman pass for k = 1..N. Index k-1 of every vector holds step k.
/// The filter is started from x(0|0) = m0, P(0|0) = R0; there is no
/// measurement at t_0.
struct FilterPass {
  std::vector<Vector> x_pred;
  std::vector<Matrix> P_pred;
  std::vector<Vector> x_filt;
  std::vector<Matrix> P_filt;
  std::vector<Matrix> gain;
  std::vector<Vector> innovation;
  std::vector<Matrix> innovation_cov;
  Vector x0;
  Matrix P0;

  int N() const { return static_cast<int>(x_filt.size()); }
  /// Filtered mean/covariance with k = 0 mapped to the prior.
  const Vector& filtered_mean(int k) const { return k == 0 ? x0 : x_filt[k - 1]; }
  const Matrix& filtered_cov(int k) const { return k == 0 ? P0 : P_filt[k - 1]; }
};

/// Backward pass; index k holds time t_k for k = 0..N. lag_one[k] holds
/// M(k|N) = Cov(x_k, x_{k-1} | Y^N) for k = 1..N (lag_one[0] is unused).
struct SmoothPass {
  std::vector<Vector> x_sm;
  std::vector<Matrix> P_sm;
  std::vector<Matrix> lag_one;
  std::vector<Matrix> J;  ///< k = 0..N-1
  bool used_pseudo_inverse = false;
  double worst_condition = 1.0;

  int N() const { return static_cast<int>(x_sm.size()) - 1; }
};

/// Smoothed second-moment sums with xi_k = [x_{k-1}; u_{k-1}].
struct ESums {
  Matrix S_xx;   ///< sum_k E(x_k x_k^T)
  Matrix S_xxi;  ///< sum_k E(x_k xi_k^T)
  Matrix S_xixi; ///< sum_k E(xi_k xi_k^T)
  Matrix E0;     ///< E((x0 - m0)(x0 - m0)^T)
  Vector x0_sm;
  Matrix P0_sm;
  int N = 0;
};

inline constexpr double kDivergenceNorm = 1e12;

FilterPass kalman_filter(const StateSpaceModel& model, const Dataset& data);

/// Rauch-Tung-Striebel means/covariances (lag_one left empty).
SmoothPass rts_smoother(const StateSpaceModel& model, const FilterPass& fp);

/// Fills sp.lag_one in place and returns it.
const std::vector<Matrix>& lag_one_smoother(const StateSpaceModel& model,
                                            const FilterPass& fp, SmoothPass& sp);

/// Filter, smoother and lag-one smoother in one call.
SmoothPass smooth(const StateSpaceModel& model, const Dataset& data, FilterPass* fp_out = nullptr);

ESums expectation_sums(const SmoothPass& sp, const Dataset& data, const Vector& m0);

struct QValue {
  double value = 0.0;
  bool regularized_R0 = false;
};

/// Expected complete-data log-likelihood, constants dropped.
QValue q_function(const Matrix& A, const Matrix& B, double sigma2, const Vector& m0,
                  const Matrix& R0, const ESums& es);

/// Prediction-error decomposition of log p(Y^N).
double observed_loglik(const StateSpaceModel& model, const Dataset& data);
double observed_loglik(const FilterPass& fp);

/// Classical maximum-likelihood M-step: L = S_xxi S_xixi^-1 and
/// sigma^2 = Tr(S_xx - L S_xxi^T) / (N n).
struct MlUpdate {
  Matrix A;
  Matrix B;
  double sigma2 = 0.0;
};
MlUpdate ml_m_step(const ESums& es, int n);

}  // namespace dsfnet
