#pragma once

#include <cstdint>
#include <optional>

#include "dsfnet/common.hpp"

namespace dsfnet {

/// Innovations-form state-space model
///
///   x(k+1) = A x(k) + B u(k) + K e(k)
///   y(k)   = C x(k) + D u(k) + e(k)
///
/// with unit innovation covariance and K = sigma * pinv(C), i.e. sigma*[I;0]
/// when C = [I 0]. The estimation side (Kalman filter, EM) uses the
/// uncorrelated reading: process noise covariance sigma^2 I_n, output noise I_p.
struct StateSpaceModel {
  Matrix A;
  Matrix B;
  Matrix C;
  Matrix D;
  double sigma = 0.0;
  Vector m0;
  Matrix R0;

  int n() const { return static_cast<int>(A.rows()); }
  int p() const { return static_cast<int>(C.rows()); }
  int m() const { return static_cast<int>(B.cols()); }

  /// Throws DimensionError / Error on inconsistent shapes, rank-deficient C,
  /// negative sigma or asymmetric R0.
  void validate() const;

  /// Builds the standard identification structure C = [I 0], D = 0,
  /// m0 = 0, R0 = 0.
  static StateSpaceModel with_identity_output(Matrix A, Matrix B,
                                              double sigma, int p);
};

/// Input/output record. Row k-1 of Y holds y(t_k), k = 1..N; row k-1 of U
/// holds u(t_{k-1}), the input driving the transition into sample k.
struct Dataset {
  Matrix Y;
  Matrix U;
  std::uint64_t seed = 0;
  std::optional<double> snr_db;

  int N() const { return static_cast<int>(Y.rows()); }
  int p() const { return static_cast<int>(Y.cols()); }
  int m() const { return static_cast<int>(U.cols()); }
  void validate() const;
};

struct GroundTruth {
  StateSpaceModel model;
  BoolMatrix q_structure;
  BoolMatrix p_structure;
  double density = 0.0;
  std::uint64_t seed = 0;
  int retries = 0;
};

/// Largest eigenvalue modulus.
double spectral_radius(const Matrix& A);

struct NetworkOptions {
  int p = 0;
  int n = 0;
  int m = 0;
  double density = 0.1;
  std::uint64_t seed = 0;
  int max_retries = 20;
  /// A is rejected when its fill exceeds this multiple of the requested
  /// density.
  double max_fill_ratio = 2.0;
};

/// Random sparse stable system with C = [I 0], D = 0 and B = [diag(b); 0].
GroundTruth generate_random_network(const NetworkOptions& opts);

enum class InputKind { gaussian_iid, provided };

/// Where the sigma-scaled noise enters the simulated system.
enum class NoiseModel {
  /// sigma * w(k) on the states and sigma * v(k) on the outputs.
  process_and_output,
  /// sigma * w(k) on the states only.
  process_only,
};

struct SimulateOptions {
  int N = 0;
  InputKind input_kind = InputKind::gaussian_iid;
  std::optional<Matrix> U_provided;
  std::optional<double> snr_db;
  NoiseModel noise = NoiseModel::process_and_output;
  std::uint64_t seed = 0;
  /// Divide Y and U by the noise scale sigma, so the noise has unit
  /// variance as the estimator assumes (R = I). No-op when sigma = 0.
  bool unit_noise = false;
};

/// Rolls the model forward. When snr_db is set, model.sigma is replaced by
/// scale_noise_for_snr on the same input sequence.
Dataset simulate(const StateSpaceModel& model, const SimulateOptions& opts);

/// Returns sigma such that the channel-averaged ratio of noise-free output
/// variance to noise-contribution variance equals snr_db.
double scale_noise_for_snr(const StateSpaceModel& model, const Matrix& U,
                           double snr_db, std::uint64_t seed,
                           NoiseModel noise = NoiseModel::process_and_output);

/// Noise-free response to U starting from m0.
Matrix noise_free_response(const StateSpaceModel& model, const Matrix& U);

/// Output contribution of the unit-sigma noise (zero input, zero initial
/// state), drawn from seed.
Matrix unit_noise_response(const StateSpaceModel& model, int N,
                           std::uint64_t seed, NoiseModel noise);

Matrix gaussian_matrix(int rows, int cols, Rng& rng);

}  // namespace dsfnet
