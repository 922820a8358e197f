#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dsfnet/common.hpp"
#include "dsfnet/model.hpp"
#include "dsfnet/smoother.hpp"

namespace dsfnet {

/// Linear-regression form of the transition model:
///   y = [x_N; ...; x_1],  Phi = [Phi_N; ...; Phi_1],
///   Phi_k = [x_{k-1}^T (x) I_n, u_{k-1}^T (x) I_n],  w = [vec(A); vec(B)].
struct RegressionData {
  Vector y;
  Matrix Phi;

  Eigen::Index N_y() const { return y.size(); }
  Eigen::Index N_w() const { return Phi.cols(); }
};

/// Index of A(i, j) / B(i, j) inside w (column-major vec).
inline Eigen::Index w_index_A(int n, int i, int j) { return static_cast<Eigen::Index>(j) * n + i; }
inline Eigen::Index w_index_B(int n, int i, int j) {
  return static_cast<Eigen::Index>(n) * n + static_cast<Eigen::Index>(j) * n + i;
}

RegressionData assemble_regression(const SmoothPass& sp, const Dataset& data, int n);

struct Posterior {
  Vector mu;
  Matrix Sigma;
};

inline constexpr double kDefaultSvdEpsilon = 1e-16;

/// Posterior of w under prior N(0, diag(gamma)) and noise sigma2, through the
/// SVD of Phi * Gamma^{1/2}. Coordinates with gamma = 0 get zero mean and a
/// zero row/column in Sigma. sigma2 = 0 gives the pseudo-inverse limit.
Posterior posterior(const RegressionData& reg, const Vector& gamma, double sigma2,
                    double eps = kDefaultSvdEpsilon);

/// log N(y; 0, sigma2 I + Phi Gamma Phi^T), evaluated on the active set.
double marginal_loglik(const RegressionData& reg, const Vector& gamma, double sigma2);

enum class MaskMode { unconstrained, diag_b, p_diag };

/// Which entries of w = [vec(A); vec(B)] may be nonzero.
struct Mask {
  std::vector<bool> free;
  MaskMode mode = MaskMode::unconstrained;
  int n = 0;
  int p = 0;
  int m = 0;
  int p22 = 0;

  bool free_A(int i, int j) const { return free[static_cast<std::size_t>(w_index_A(n, i, j))]; }
  bool free_B(int i, int j) const { return free[static_cast<std::size_t>(w_index_B(n, i, j))]; }
  long free_count() const;
};

Mask identifiability_mask(int n, int p, int m, MaskMode mode, int p22 = 0);

enum class NoiseDenominator {
  total_observations,  ///< N_y = N n
  sample_count,        ///< N
};

enum class GammaUpdate {
  /// gamma_i <- Sigma_ii + mu_i^2; the evidence never decreases.
  em,
  /// gamma_i <- mu_i^2 / (1 - Sigma_ii / gamma_i); irrelevant weights reach
  /// the pruning threshold in tens of iterations instead of millions, but
  /// monotone ascent is not guaranteed.
  fixed_point,
};

struct SblOptions {
  int max_iter = 200;
  double tol = 1e-6;
  double prune_tol = 1e-12;
  double eps = kDefaultSvdEpsilon;
  bool freeze_sigma2 = false;
  GammaUpdate gamma_update = GammaUpdate::em;
  NoiseDenominator denominator = NoiseDenominator::total_observations;
  /// Record the evidence at every iteration (extra factorization per step in
  /// the dense solver, free in the row solver).
  bool track_evidence = true;
  /// Evidence drops larger than this are recorded as warnings.
  double ascent_tol = 1e-8;
};

struct SblState {
  Vector gamma;
  double sigma2 = 1.0;
  Vector mu;
  Matrix Sigma;        ///< full posterior covariance (dense solver only)
  Vector Sigma_diag;   ///< diagonal of the posterior covariance
  std::vector<bool> active;
  int iteration = 0;
  bool converged = false;

  std::vector<double> evidence;     ///< per iteration, at the parameters used by its E-step
  std::vector<long> active_count;   ///< per iteration, after pruning
  std::vector<double> sigma2_trace;
  long evidence_decreases = 0;

  long active_size() const;
};

/// gamma = 1 on free coordinates, sigma2 = 0.1 * var(y).
SblState initial_sbl_state(const Mask& mask, const Vector& y);

/// Evidence-maximization EM on a dense regression.
SblState sbl_em(const RegressionData& reg, const Mask& mask, SblState state,
                const SblOptions& opts);

/// Sufficient statistics of the transition regression. Because the noise is
/// isotropic and Gamma diagonal, the regression decouples into one problem per
/// row of L = [A B] with shared Gram matrix G = sum xi xi^T.
struct RowStats {
  Matrix G;    ///< (n+m) x (n+m)
  Matrix H;    ///< n x (n+m), row i = sum_k x_k(i) xi_k^T
  Vector yy;   ///< yy(i) = sum_k x_k(i)^2
  long samples = 0;
  int n = 0;
  int m = 0;

  long N_y() const { return samples * n; }
};

/// Statistics built from smoothed means only (equal to Phi^T Phi, Phi^T y and
/// y^T y of assemble_regression).
RowStats row_stats_from_means(const SmoothPass& sp, const Dataset& data);

/// Statistics built from the full smoothed second moments.
RowStats row_stats_from_esums(const ESums& es, int n);

/// Same iteration as sbl_em, exploiting the row decoupling.
SblState sbl_em_rows(const RowStats& stats, const Mask& mask, SblState state,
                     const SblOptions& opts);

/// Evidence of the row-decoupled regression.
double marginal_loglik_rows(const RowStats& stats, const Vector& gamma, double sigma2);

/// Least squares on the free coordinates of each row (no prior); with
/// moment statistics this is the exact EM M-step under the mask.
struct MaskedMl {
  Vector w;
  double sigma2 = 0.0;
};
MaskedMl masked_ml(const RowStats& stats, const Mask& mask);

std::string to_string(MaskMode mode);
MaskMode parse_mask_mode(const std::string& text);

}  // namespace dsfnet
