#include "dsfnet/reconstruct.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

namespace dsfnet {

namespace {

Vector apply_mask(Vector w, const Mask& mask) {
  for (std::size_t i = 0; i < mask.free.size(); ++i)
    if (!mask.free[i]) w(static_cast<Eigen::Index>(i)) = 0.0;
  return w;
}

StateSpaceModel make_model(const Vector& w, int n, int p, int m, double sigma2, const Vector& m0,
                           const Matrix& R0) {
  auto [A, B] = unpack_w(w, n, m);
  StateSpaceModel model = StateSpaceModel::with_identity_output(std::move(A), std::move(B),
                                                                std::sqrt(sigma2), p);
  model.m0 = m0;
  model.R0 = R0;
  return model;
}

struct EStep {
  FilterPass fp;
  SmoothPass sp;
};

EStep run_e_step(const StateSpaceModel& model, const Dataset& data) {
  EStep out;
  out.sp = smooth(model, data, &out.fp);
  return out;
}

// Top-k eigenvectors of a symmetric matrix, largest first.
Matrix leading_directions(const Matrix& S, int k) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(S));
  return es.eigenvectors().rightCols(k).rowwise().reverse();
}

}  // namespace

std::optional<InitialGuess> subspace_start(const Dataset& data, const Mask& mask, int n) {
  const int N = data.N(), p = data.p(), m = data.m();
  const int f = std::max(2, (n + p - 1) / p + 1);
  const int s = f;
  // Window times t (y_t is row t-1, u_t is row t): past y,u at t-s..t-1,
  // future y at t..t+f-1 and u at t..t+f-1.
  const int t0 = s + 1, t1 = N - f;
  const int M = t1 - t0 + 1;
  const int past = s * (p + m), fut_u = f * m;
  if (M < 2 * (past + fut_u) || M < 4 * n) return std::nullopt;

  Matrix Z(past + fut_u, M), Yf(f * p, M), Yt(p, M);
  for (int c = 0; c < M; ++c) {
    const int t = t0 + c;
    for (int j = 1; j <= s; ++j) {
      Z.col(c).segment((j - 1) * (p + m), p) = data.Y.row(t - j - 1).transpose();
      Z.col(c).segment((j - 1) * (p + m) + p, m) = data.U.row(t - j).transpose();
    }
    for (int j = 0; j < f; ++j) {
      Z.col(c).segment(past + j * m, m) = data.U.row(t + j).transpose();
      Yf.col(c).segment(j * p, p) = data.Y.row(t + j - 1).transpose();
    }
    Yt.col(c) = data.Y.row(t - 1).transpose();
  }
  Matrix ZZ = Z * Z.transpose();
  ZZ.diagonal().array() += 1e-10 * ZZ.trace() / static_cast<double>(ZZ.rows()) + 1e-300;
  const Matrix Theta = ZZ.ldlt().solve(Z * Yf.transpose()).transpose();
  const Matrix O = Theta.leftCols(past) * Z.topRows(past);

  const int rank = std::min<int>(n, static_cast<int>(O.rows()));
  const Matrix X = leading_directions(O * O.transpose(), rank).transpose() * O;

  // Change basis so that C = [I 0]: measured states are the denoised C x,
  // hidden states the null-space coordinates of the fitted C.
  const Matrix XX = X * X.transpose();
  const Matrix C_hat = XX.ldlt().solve(X * Yt.transpose()).transpose();
  const double y_scale = std::sqrt(Yt.squaredNorm() / static_cast<double>(p * M));
  Matrix states = Matrix::Zero(n, M);
  states.topRows(p) = C_hat * X;
  const int hidden = n - p;
  if (hidden > 0 && rank == n) {
    states.bottomRows(hidden) = null_space_basis(C_hat).transpose() * X;
    for (int h = 0; h < hidden; ++h) {
      const double sd = std::sqrt(states.row(p + h).squaredNorm() / M);
      if (sd > 0.0) states.row(p + h) *= y_scale / sd;
    }
  }

  auto transition_stats = [&] {
    RowStats st;
    st.n = n;
    st.m = m;
    st.samples = M - 1;
    Matrix Xi(n + m, M - 1);
    for (int c = 0; c + 1 < M; ++c) {
      Xi.col(c).head(n) = states.col(c);
      Xi.col(c).tail(m) = data.U.row(t0 + c).transpose();
    }
    const Matrix Xn = states.rightCols(M - 1);
    st.G = Xi * Xi.transpose();
    st.G.diagonal().array() += 1e-10 * st.G.trace() / static_cast<double>(n + m);
    st.H = Xn * Xi.transpose();
    st.yy = Xn.rowwise().squaredNorm();
    return st;
  };

  // The masks keep inputs out of the hidden rows of B. Shift the hidden
  // coordinates by a multiple of the measured ones (C is unchanged) so that
  // the unconstrained fit has no input entering there.
  if (hidden > 0 && m == p) {
    const RowStats full = transition_stats();
    const Matrix L = full.G.ldlt().solve(full.H.transpose()).transpose();
    const Matrix B_fit = L.rightCols(m);
    const Eigen::FullPivLU<Matrix> lu(B_fit.topRows(p));
    if (lu.isInvertible()) {
      const Matrix S = B_fit.bottomRows(hidden) * lu.inverse();
      states.bottomRows(hidden) -= S * states.topRows(p);
    }
  }
  const RowStats stats = transition_stats();
  const MaskedMl ml = masked_ml(stats, mask);
  Matrix Xi(n + m, M - 1);
  for (int c = 0; c + 1 < M; ++c) {
    Xi.col(c).head(n) = states.col(c);
    Xi.col(c).tail(m) = data.U.row(t0 + c).transpose();
  }
  const Matrix Xn = states.rightCols(M - 1);

  // Noise level from the measured rows; the hidden rows carry the subspace
  // estimation error and would inflate it.
  const auto [A, B] = unpack_w(ml.w, n, m);
  const Matrix resid = Xn.topRows(p) - A.topRows(p) * Xi.topRows(n) - B.topRows(p) * Xi.bottomRows(m);
  InitialGuess g;
  g.w = ml.w;
  g.sigma2 = std::max(resid.squaredNorm() / static_cast<double>(p * (M - 1)), 1e-8 * y_scale * y_scale);
  g.m0 = Vector::Zero(n);
  g.R0 = y_scale * y_scale * Matrix::Identity(n, n);
  return g;
}

double output_noise_ratio(const StateSpaceModel& model, const Dataset& data) {
  const int n = model.n(), p = model.p();
  if (spectral_radius(model.A) >= 1.0) return std::numeric_limits<double>::infinity();
  // Stationary covariance by doubling: P = sum_k A^k (sigma^2 I) A^k'.
  Matrix P = model.sigma * model.sigma * Matrix::Identity(n, n);
  Matrix Ak = model.A;
  for (int it = 0; it < 60; ++it) {
    const Matrix step = Ak * P * Ak.transpose();
    P += step;
    Ak = Ak * Ak;
    if (step.norm() <= 1e-14 * P.norm()) break;
  }
  const double noise = (model.C * P * model.C.transpose()).trace() / p + 1.0;
  const Matrix centered = data.Y.rowwise() - data.Y.colwise().mean();
  const double total = centered.squaredNorm() / (static_cast<double>(data.N()) * p);
  const double signal = total - noise;
  if (!(signal > 0.0)) return std::numeric_limits<double>::infinity();
  return std::sqrt(noise / signal);
}

void ReconConfig::validate(int p, int m) const {
  if (n_states < p) throw DimensionError("n_states must be at least p");
  if (!(outer_tol > 0.0)) throw Error("outer_tol must be positive");
  if (outer_max_iter < 1) throw Error("outer_max_iter must be at least 1");
  if (mask_mode != MaskMode::unconstrained && m != p) {
    throw IdentifiabilityError("reconstruction with a diagonal-P mask needs m = p");
  }
  if (!(init_sigma2 > 0.0)) throw Error("init_sigma2 must be positive");
}

StateSpaceModel ReconResult::model() const {
  StateSpaceModel out = StateSpaceModel::with_identity_output(
      A_hat, B_hat, std::sqrt(sigma2_hat), static_cast<int>(network.q_adj.rows()));
  out.m0 = m0_hat;
  out.R0 = R0_hat;
  return out;
}

std::pair<Matrix, Matrix> unpack_w(const Vector& w, int n, int m) {
  if (w.size() != static_cast<Eigen::Index>(n) * (n + m)) {
    throw DimensionError("unpack_w: expected length " + std::to_string(n * (n + m)) + ", got " +
                         std::to_string(w.size()));
  }
  Matrix A = Eigen::Map<const Matrix>(w.data(), n, n);
  Matrix B = Eigen::Map<const Matrix>(w.data() + static_cast<Eigen::Index>(n) * n, n, m);
  return {std::move(A), std::move(B)};
}

Vector pack_w(const Matrix& A, const Matrix& B) {
  Vector w(A.size() + B.size());
  w.head(A.size()) = Eigen::Map<const Vector>(A.data(), A.size());
  w.tail(B.size()) = Eigen::Map<const Vector>(B.data(), B.size());
  return w;
}

bool converged(const Vector& w_prev, const Vector& w_curr, double tol) {
  if (w_prev.size() != w_curr.size()) throw DimensionError("converged: length mismatch");
  return (w_curr - w_prev).norm() <= tol * std::max(1.0, w_prev.norm());
}

std::string to_string(ReconStatus status) {
  switch (status) {
    case ReconStatus::converged: return "converged";
    case ReconStatus::max_iter: return "max_iter";
    case ReconStatus::diverged: return "diverged";
  }
  return "unknown";
}

ReconResult reconstruct(const Dataset& data, const ReconConfig& cfg) {
  data.validate();
  const int p = data.p(), m = data.m(), n = cfg.n_states;
  cfg.validate(p, m);
  const Mask mask = identifiability_mask(n, p, m, cfg.mask_mode, cfg.p22);

  Matrix A0 = cfg.init_a * Matrix::Identity(n, n);
  Matrix B0 = Matrix::Zero(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      if (mask.free_B(i, j) && (i == j || i - p == j)) B0(i, j) = 1.0;
  if (cfg.mask_mode == MaskMode::unconstrained) {
    B0.setZero();
    for (int i = 0; i < std::min(p, m); ++i) B0(i, i) = 1.0;
  }
  Vector w = apply_mask(pack_w(A0, B0), mask);
  double sigma2 = cfg.init_sigma2;
  Vector m0 = Vector::Zero(n);
  Matrix R0 = Matrix::Identity(n, n);
  if (cfg.initial_model) {
    // handled below
  } else if (cfg.init == InitMethod::subspace) {
    if (const auto g = subspace_start(data, mask, n)) {
      w = apply_mask(g->w, mask);
      sigma2 = g->sigma2;
      m0 = g->m0;
      R0 = g->R0;
    }
  }
  if (cfg.initial_model) {
    const StateSpaceModel& init = *cfg.initial_model;
    if (init.n() != n || init.m() != m) throw DimensionError("initial model has wrong dimensions");
    w = apply_mask(pack_w(init.A, init.B), mask);
    sigma2 = std::max(init.sigma * init.sigma, 1e-8);
    m0 = init.m0;
    R0 = init.R0;
  }

  Vector w_prev = w;
  double sigma2_prev = sigma2;
  bool have_prev = false;
  SblState sbl;
  bool sbl_started = false;

  ReconResult result;
  result.status = ReconStatus::max_iter;
  for (int it = 1; it <= cfg.outer_max_iter; ++it) {
    OuterTrace tr;
    tr.iteration = it;

    EStep e;
    try {
      e = run_e_step(make_model(w, n, p, m, sigma2, m0, R0), data);
    } catch (const FilterDiverged&) {
      if (!have_prev) {
        result.status = ReconStatus::diverged;
        break;
      }
      w = apply_mask(0.5 * (w + w_prev), mask);
      sigma2 = 0.5 * (sigma2 + sigma2_prev);
      tr.damped = true;
      try {
        e = run_e_step(make_model(w, n, p, m, sigma2, m0, R0), data);
      } catch (const FilterDiverged&) {
        w = w_prev;
        sigma2 = sigma2_prev;
        result.status = ReconStatus::diverged;
        break;
      }
    }
    tr.observed_loglik = observed_loglik(e.fp);
    w_prev = w;
    sigma2_prev = sigma2;
    have_prev = true;

    // Initial-state update.
    m0 = e.sp.x_sm[0];
    R0 = symmetrize(e.sp.P_sm[0]);

    Vector w_new;
    if (cfg.classical_em) {
      const ESums es = expectation_sums(e.sp, data, m0);
      const MaskedMl ml = masked_ml(row_stats_from_esums(es, n), mask);
      w_new = ml.w;
      sigma2 = std::max(ml.sigma2, 1e-300);
      tr.active = mask.free_count();
    } else {
      RowStats stats;
      if (cfg.moments == RegressionMoments::full_moments) {
        stats = row_stats_from_esums(expectation_sums(e.sp, data, m0), n);
      } else {
        stats = row_stats_from_means(e.sp, data);
      }
      if (!sbl_started || !cfg.warm_start_gamma) {
        Vector yvec(static_cast<Eigen::Index>(data.N()) * n);
        for (int k = 1; k <= data.N(); ++k) yvec.segment(static_cast<Eigen::Index>(k - 1) * n, n) = e.sp.x_sm[k];
        sbl = initial_sbl_state(mask, yvec);
        // The outer loop already carries a noise estimate; 0.1 var(y) ignores it.
        sbl.sigma2 = sigma2;
        sbl_started = true;
      } else {
        sbl.evidence.clear();
        sbl.active_count.clear();
        sbl.sigma2_trace.clear();
        sbl.evidence_decreases = 0;
        sbl.iteration = 0;
      }
      sbl = sbl_em_rows(stats, mask, std::move(sbl), cfg.inner);
      w_new = apply_mask(sbl.mu, mask);
      sigma2 = std::max(sbl.sigma2, 1e-300);
      tr.active = sbl.active_size();
      tr.gamma_max = sbl.gamma.size() ? sbl.gamma.maxCoeff() : 0.0;
      tr.inner_iterations = sbl.iteration;
      tr.evidence_decreases = sbl.evidence_decreases;
    }
    tr.sigma2 = sigma2;
    tr.w_change = (w_new - w).norm() / std::max(1.0, w.norm());
    const bool done = converged(w, w_new, cfg.outer_tol);
    w = w_new;
    result.trace.push_back(tr);
    if (done) {
      result.status = ReconStatus::converged;
      break;
    }
  }

  auto [A, B] = unpack_w(w, n, m);
  result.A_hat = std::move(A);
  result.B_hat = std::move(B);
  result.sigma2_hat = sigma2;
  result.m0_hat = m0;
  result.R0_hat = R0;
  result.gamma = sbl.gamma;
  const StateSpaceModel est = make_model(w, n, p, m, sigma2, m0, R0);
  result.dsf = dsf_from_state_space(est, default_q_points(cfg.seed));
  result.noise_ratio = output_noise_ratio(est, data);
  result.structure_tol_used = cfg.structure_tol;
  if (cfg.structure_z > 0.0 && std::isfinite(result.noise_ratio)) {
    result.structure_tol_used =
        std::max(cfg.structure_tol, cfg.structure_z * result.noise_ratio / std::sqrt(data.N()));
  }
  result.network = boolean_structure(result.dsf, result.structure_tol_used);
  return result;
}

}  // namespace dsfnet
