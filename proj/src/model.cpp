#include "dsfnet/model.hpp"

#include <cmath>

#include "dsfnet/dsf.hpp"

namespace dsfnet {

namespace {

constexpr std::uint64_t kInputStream = 1;
constexpr std::uint64_t kNoiseStream = 2;
constexpr std::uint64_t kInitStream = 3;

void check_finite_row(const Matrix& M, long k) {
  if (!M.row(k).allFinite() || M.row(k).cwiseAbs().maxCoeff() > 1e150) {
    throw SimulationDiverged(k + 1);
  }
}

double channel_mean_variance(const Matrix& Y) {
  double total = 0.0;
  for (Eigen::Index j = 0; j < Y.cols(); ++j) {
    const auto col = Y.col(j);
    const double mean = col.mean();
    total += (col.array() - mean).square().sum() / static_cast<double>(col.size());
  }
  return total / static_cast<double>(Y.cols());
}

}  // namespace

void StateSpaceModel::validate() const {
  const auto nn = A.rows();
  if (A.cols() != nn) throw DimensionError("A must be square");
  if (B.rows() != nn) throw DimensionError("B must have n rows");
  if (C.cols() != nn) throw DimensionError("C must have n columns");
  if (C.rows() > nn) throw DimensionError("output dimension p exceeds n");
  if (D.rows() != C.rows() || D.cols() != B.cols()) {
    throw DimensionError("D must be p x m");
  }
  if (m0.size() != nn) throw DimensionError("m0 must have length n");
  if (R0.rows() != nn || R0.cols() != nn) throw DimensionError("R0 must be n x n");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw Error("sigma must be finite and nonnegative");
  }
  if ((R0 - R0.transpose()).cwiseAbs().maxCoeff() >
      1e-10 * std::max(1.0, R0.cwiseAbs().maxCoeff())) {
    throw Error("R0 must be symmetric");
  }
  if (C.rows() > 0) {
    Eigen::JacobiSVD<Matrix> svd(C);
    const auto& s = svd.singularValues();
    if (s(s.size() - 1) <= 1e-12 * std::max(1.0, s(0))) {
      throw Error("C must have full row rank");
    }
  }
}

StateSpaceModel StateSpaceModel::with_identity_output(Matrix A, Matrix B,
                                                      double sigma, int p) {
  StateSpaceModel model;
  const auto n = A.rows();
  model.C = Matrix::Zero(p, n);
  model.C.leftCols(p).setIdentity();
  model.D = Matrix::Zero(p, B.cols());
  model.A = std::move(A);
  model.B = std::move(B);
  model.sigma = sigma;
  model.m0 = Vector::Zero(n);
  model.R0 = Matrix::Zero(n, n);
  return model;
}

void Dataset::validate() const {
  if (Y.rows() != U.rows()) throw DimensionError("Y and U must have N rows each");
  if (Y.rows() < 1) throw DimensionError("dataset is empty");
  if (!Y.allFinite() || !U.allFinite()) throw Error("dataset contains non-finite values");
}

double spectral_radius(const Matrix& A) {
  if (A.size() == 0) return 0.0;
  Eigen::EigenSolver<Matrix> es(A, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

Matrix gaussian_matrix(int rows, int cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix M(rows, cols);
  // Row-major fill so a prefix of rows is reproducible across N.
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) M(i, j) = normal(rng);
  return M;
}

GroundTruth generate_random_network(const NetworkOptions& opts) {
  const int p = opts.p, n = opts.n, m = opts.m;
  if (p < 1 || n < p) throw DimensionError("generate_random_network needs 1 <= p <= n");
  if (m != p) throw IdentifiabilityError("generate_random_network needs m = p");
  if (!(opts.density > 0.0 && opts.density <= 1.0)) {
    throw Error("density must lie in (0, 1]");
  }
  if (opts.density * n * n < n) {
    throw Error("density * n^2 must be at least n");
  }

  Rng rng(mix_seed(opts.seed));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> magnitude(0.5, 1.0);
  std::uniform_real_distribution<double> radius(0.5, 0.95);
  std::uniform_real_distribution<double> gain(0.5, 1.5);

  std::string last_reason = "no attempt";
  for (int attempt = 0; attempt <= opts.max_retries; ++attempt) {
    Matrix A = Matrix::Zero(n, n);
    long nnz = 0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (unit(rng) < opts.density) {
          A(i, j) = (unit(rng) < 0.5 ? -1.0 : 1.0) * magnitude(rng);
          ++nnz;
        }
      }
    }
    Matrix B = Matrix::Zero(n, m);
    for (int i = 0; i < p; ++i) B(i, i) = gain(rng);
    const double target = radius(rng);

    if (static_cast<double>(nnz) > opts.max_fill_ratio * opts.density * n * n) {
      last_reason = "A not sparse enough";
      continue;
    }
    const double rho = spectral_radius(A);
    if (!(rho > 1e-8)) {
      last_reason = "A is nilpotent";
      continue;
    }
    A *= target / rho;

    GroundTruth truth;
    truth.model = StateSpaceModel::with_identity_output(A, B, 1.0, p);
    truth.density = opts.density;
    truth.seed = opts.seed;
    truth.retries = attempt;
    try {
      const auto sample = dsf_from_state_space(truth.model, default_q_points(opts.seed));
      const auto graph = boolean_structure(sample, kDefaultStructureTol);
      truth.q_structure = graph.q_adj;
      truth.p_structure = graph.p_adj;
    } catch (const Error& e) {
      last_reason = std::string("DSF extraction failed: ") + e.what();
      continue;
    }
    if (p > 1 && truth.q_structure.count() == 0) {
      last_reason = "empty network";
      continue;
    }
    return truth;
  }
  throw GenerationError("random network generation failed: " + last_reason,
                        opts.max_retries);
}

Matrix noise_free_response(const StateSpaceModel& model, const Matrix& U) {
  const auto N = U.rows();
  Matrix Y(N, model.p());
  Vector x = model.m0;
  for (Eigen::Index k = 0; k < N; ++k) {
    x = model.A * x + model.B * U.row(k).transpose();
    Y.row(k) = (model.C * x).transpose();
    check_finite_row(Y, k);
  }
  return Y;
}

Matrix unit_noise_response(const StateSpaceModel& model, int N,
                           std::uint64_t seed, NoiseModel noise) {
  Rng rng(derive_seed(seed, kNoiseStream));
  const int n = model.n(), p = model.p();
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix Y(N, p);
  Vector x = Vector::Zero(n);
  Vector w(n), v(p);
  for (int k = 0; k < N; ++k) {
    for (int i = 0; i < n; ++i) w(i) = normal(rng);
    for (int i = 0; i < p; ++i) v(i) = normal(rng);
    x = model.A * x + w;
    Y.row(k) = (model.C * x).transpose();
    if (noise == NoiseModel::process_and_output) Y.row(k) += v.transpose();
    check_finite_row(Y, k);
  }
  return Y;
}

double scale_noise_for_snr(const StateSpaceModel& model, const Matrix& U,
                           double snr_db, std::uint64_t seed, NoiseModel noise) {
  const Matrix clean = noise_free_response(model, U);
  const double signal = channel_mean_variance(clean);
  if (!(signal > 0.0)) throw Error("zero signal power; SNR undefined");
  const Matrix unit = unit_noise_response(model, static_cast<int>(U.rows()), seed, noise);
  const double unit_power = channel_mean_variance(unit);
  if (!(unit_power > 0.0)) throw Error("zero noise power; SNR undefined");
  return std::sqrt(signal / (unit_power * std::pow(10.0, snr_db / 10.0)));
}

Dataset simulate(const StateSpaceModel& model, const SimulateOptions& opts) {
  model.validate();
  if (opts.N < 1) throw DimensionError("simulate needs N >= 1");
  if (model.D.cwiseAbs().maxCoeff() != 0.0) {
    throw Error("simulate supports D = 0 only");
  }
  Matrix U;
  if (opts.input_kind == InputKind::provided) {
    if (!opts.U_provided) throw Error("input_kind=provided requires an input sequence");
    U = *opts.U_provided;
    if (U.rows() != opts.N || U.cols() != model.m()) {
      throw DimensionError("provided input must be N x m");
    }
  } else {
    Rng rng(derive_seed(opts.seed, kInputStream));
    U = gaussian_matrix(opts.N, model.m(), rng);
  }

  double sigma = model.sigma;
  if (opts.snr_db) sigma = scale_noise_for_snr(model, U, *opts.snr_db, opts.seed, opts.noise);

  // Linear superposition: initial-state draw + input response + sigma * noise.
  StateSpaceModel free_model = model;
  Rng init_rng(derive_seed(opts.seed, kInitStream));
  const Vector z = gaussian_matrix(model.n(), 1, init_rng);
  Vector x0 = model.m0;
  if (model.R0.cwiseAbs().maxCoeff() > 0.0) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(model.R0);
    const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    x0 += es.eigenvectors() * root.asDiagonal() * z;
  }
  free_model.m0 = x0;

  Dataset data;
  data.U = U;
  data.Y = noise_free_response(free_model, U);
  if (sigma > 0.0) data.Y += sigma * unit_noise_response(model, opts.N, opts.seed, opts.noise);
  for (Eigen::Index k = 0; k < data.Y.rows(); ++k) check_finite_row(data.Y, k);
  if (opts.unit_noise && sigma > 0.0) {
    // Joint rescaling keeps A, B (and the network) unchanged.
    data.Y /= sigma;
    data.U /= sigma;
  }
  data.seed = opts.seed;
  data.snr_db = opts.snr_db;
  return data;
}

}  // namespace dsfnet
