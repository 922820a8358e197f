#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dsfnet/dsf.hpp"
#include "dsfnet/model.hpp"
#include "dsfnet/sbl.hpp"
#include "dsfnet/smoother.hpp"

namespace dsfnet {

/// Which smoothed quantities feed the transition regression.
enum class RegressionMoments {
  /// Smoothed means plugged in for the states. Ignoring the posterior
  /// covariances lets sigma2 collapse towards zero on hidden states.
  smoothed_means,
  /// Full smoothed second moments (means plus covariances).
  full_moments,
};

/// Starting point of the outer loop.
enum class InitMethod {
  /// State sequence from a past/future Hankel projection, first p
  /// coordinates pinned to y, then masked least squares.
  subspace,
  /// A = init_a * I, unit B on the free diagonal, sigma2 = init_sigma2.
  diagonal,
};

struct ReconConfig {
  int n_states = 0;
  MaskMode mask_mode = MaskMode::diag_b;
  int p22 = 0;
  int outer_max_iter = 50;
  double outer_tol = 1e-4;
  SblOptions inner;
  /// Floor of the relative structure threshold.
  double structure_tol = 3e-3;
  /// The threshold is raised to structure_z * r / sqrt(N), r being the
  /// output noise-to-signal amplitude ratio implied by the fitted model:
  /// Q entries below the estimation noise floor do not count as edges.
  /// 0 keeps the plain relative threshold.
  double structure_z = 3.0;
  std::uint64_t seed = 0;

  InitMethod init = InitMethod::subspace;
  /// Process-noise variance used by the first E-step (diagonal start).
  double init_sigma2 = 1.0;
  /// Diagonal of the initial A.
  double init_a = 0.5;
  RegressionMoments moments = RegressionMoments::full_moments;
  /// Carry gamma (and the pruned set) from one outer iteration to the next.
  bool warm_start_gamma = true;
  /// Replace the SBL M-step by masked least squares on full smoothed moments
  /// (classical EM, no sparsity prior).
  bool classical_em = false;
  /// Starting point overriding init_a / init_sigma2 (must have n_states
  /// states); its sigma is floored at 1e-4.
  std::optional<StateSpaceModel> initial_model;

  void validate(int p, int m) const;
};

struct OuterTrace {
  int iteration = 0;
  double observed_loglik = 0.0;
  double sigma2 = 0.0;
  long active = 0;
  double gamma_max = 0.0;
  double w_change = 0.0;
  int inner_iterations = 0;
  long evidence_decreases = 0;
  bool damped = false;
};

enum class ReconStatus { converged, max_iter, diverged };

struct ReconResult {
  Matrix A_hat;
  Matrix B_hat;
  double sigma2_hat = 0.0;
  Vector m0_hat;
  Matrix R0_hat;
  Vector gamma;
  FreqSample dsf;
  NetworkGraph network;
  std::vector<OuterTrace> trace;
  ReconStatus status = ReconStatus::max_iter;
  double noise_ratio = 0.0;
  double structure_tol_used = 0.0;

  /// Estimated model with C = [I 0], D = 0.
  StateSpaceModel model() const;
};

ReconResult reconstruct(const Dataset& data, const ReconConfig& cfg);

/// Output noise-to-signal amplitude ratio: stationary noise variance of the
/// model outputs (process noise propagated plus unit output noise) against
/// the remaining variance of the data. Infinity when A is not stable.
double output_noise_ratio(const StateSpaceModel& model, const Dataset& data);

/// Column-major de-vectorization of w = [vec(A); vec(B)].
std::pair<Matrix, Matrix> unpack_w(const Vector& w, int n, int m);
Vector pack_w(const Matrix& A, const Matrix& B);

/// ||w_curr - w_prev|| <= tol * max(1, ||w_prev||).
bool converged(const Vector& w_prev, const Vector& w_curr, double tol);

struct InitialGuess {
  Vector w;
  double sigma2 = 1.0;
  Vector m0;
  Matrix R0;
};

/// Subspace starting point; std::nullopt when the record is too short for
/// the Hankel horizon.
std::optional<InitialGuess> subspace_start(const Dataset& data, const Mask& mask, int n_states);

std::string to_string(ReconStatus status);

}  // namespace dsfnet
