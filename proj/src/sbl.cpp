#include "dsfnet/sbl.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dsfnet {

namespace {

std::vector<Eigen::Index> active_indices(const Vector& gamma) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < gamma.size(); ++i)
    if (gamma(i) > 0.0) idx.push_back(i);
  return idx;
}

/// Posterior on one active block, given the Gram matrix G = Phi^T Phi and
/// h = Phi^T y restricted to that block:
///   mu = S (S G S + s2 I)^-1 S h,  Sigma = s2 S (S G S + s2 I)^-1 S,
/// with S = diag(sqrt(gamma)). Also returns log det(I + S G S / sigma2) and
/// h^T mu for the evidence.
struct BlockPosterior {
  Vector mu;
  Matrix Sigma;
  double logdet = 0.0;
  double h_dot_mu = 0.0;
};

BlockPosterior block_posterior(const Matrix& G, const Vector& h, const Vector& gamma,
                               double sigma2, double eps, bool want_logdet) {
  const auto k = gamma.size();
  BlockPosterior out;
  if (k == 0) return out;
  const Vector s = gamma.cwiseSqrt();
  const Matrix SGS = s.asDiagonal() * G * s.asDiagonal();
  const Vector sh = s.cwiseProduct(h);
  const double s2 = sigma2 + eps;

  Matrix M = SGS;
  M.diagonal().array() += s2;
  Eigen::LLT<Matrix> llt(M);
  bool ok = llt.info() == Eigen::Success;
  if (ok) {
    const auto diag = llt.matrixL().toDenseMatrix().diagonal();
    ok = diag.minCoeff() > 1e-7 * std::sqrt(std::max(diag.maxCoeff() * diag.maxCoeff(), 1e-300));
  }
  Matrix Minv;
  if (ok) {
    Minv = llt.solve(Matrix::Identity(k, k));
  } else {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(SGS));
    const Vector lam = es.eigenvalues().cwiseMax(0.0);
    const Vector inv = (lam.array() + s2).inverse();
    Minv = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  }
  Minv = symmetrize(Minv);
  out.mu = s.cwiseProduct(Minv * sh);
  out.Sigma = s2 * (s.asDiagonal() * Minv * s.asDiagonal());
  out.h_dot_mu = h.dot(out.mu);
  if (want_logdet) {
    // log det(I + SGS / sigma2) from the eigenvalues (robust as sigma2 -> 0).
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(SGS), Eigen::EigenvaluesOnly);
    const Vector lam = es.eigenvalues().cwiseMax(0.0);
    out.logdet = (1.0 + lam.array() / sigma2).log().sum();
  }
  return out;
}

Matrix gather(const Matrix& M, const std::vector<Eigen::Index>& rows,
              const std::vector<Eigen::Index>& cols) {
  Matrix out(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = M(rows[i], cols[j]);
  return out;
}

Vector gather(const Vector& v, const std::vector<Eigen::Index>& idx) {
  Vector out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out(i) = v(idx[i]);
  return out;
}

double relative_change(const Vector& before, const Vector& after) {
  const double scale = before.cwiseAbs().maxCoeff();
  if (!(scale > 0.0)) return 0.0;
  return (after - before).cwiseAbs().maxCoeff() / scale;
}

void enforce_mask(const Mask& mask, SblState& state) {
  if (mask.free.size() != static_cast<std::size_t>(state.gamma.size())) {
    throw DimensionError("mask length differs from the number of weights");
  }
  state.active.assign(mask.free.size(), false);
  for (std::size_t i = 0; i < mask.free.size(); ++i) {
    if (!mask.free[i] || !(state.gamma(static_cast<Eigen::Index>(i)) >= 0.0)) {
      state.gamma(static_cast<Eigen::Index>(i)) = 0.0;
    }
    state.active[i] = state.gamma(static_cast<Eigen::Index>(i)) > 0.0;
  }
}

double updated_gamma(const SblOptions& opts, double gamma, double sigma_ii, double mu) {
  if (opts.gamma_update == GammaUpdate::em) return sigma_ii + mu * mu;
  const double keep = 1.0 - sigma_ii / gamma;
  return keep > 0.0 ? mu * mu / keep : 0.0;
}

void prune(const SblOptions& opts, SblState& state) {
  for (Eigen::Index i = 0; i < state.gamma.size(); ++i) {
    if (state.gamma(i) < opts.prune_tol) state.gamma(i) = 0.0;
    state.active[static_cast<std::size_t>(i)] = state.gamma(i) > 0.0;
  }
}

double noise_denominator(const SblOptions& opts, double N_y, double samples) {
  return opts.denominator == NoiseDenominator::total_observations ? N_y : samples;
}

void record_evidence(const SblOptions& opts, double value, SblState& state) {
  if (!state.evidence.empty() &&
      value < state.evidence.back() - opts.ascent_tol * std::max(1.0, std::abs(value))) {
    ++state.evidence_decreases;
  }
  state.evidence.push_back(value);
}

}  // namespace

long Mask::free_count() const { return std::count(free.begin(), free.end(), true); }

long SblState::active_size() const { return std::count(active.begin(), active.end(), true); }

RegressionData assemble_regression(const SmoothPass& sp, const Dataset& data, int n) {
  const int N = data.N();
  if (sp.N() != N) throw DimensionError("assemble_regression: smoother and data lengths differ");
  if (sp.x_sm[0].size() != n) throw DimensionError("assemble_regression: state dimension mismatch");
  const int m = data.m();
  RegressionData reg;
  reg.y.resize(static_cast<Eigen::Index>(N) * n);
  reg.Phi = Matrix::Zero(static_cast<Eigen::Index>(N) * n, static_cast<Eigen::Index>(n) * (n + m));
  for (int k = N; k >= 1; --k) {
    const Eigen::Index row0 = static_cast<Eigen::Index>(N - k) * n;
    reg.y.segment(row0, n) = sp.x_sm[k];
    const Vector& xprev = sp.x_sm[k - 1];
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) reg.Phi(row0 + i, w_index_A(n, i, j)) = xprev(j);
    for (int j = 0; j < m; ++j)
      for (int i = 0; i < n; ++i) reg.Phi(row0 + i, w_index_B(n, i, j)) = data.U(k - 1, j);
  }
  return reg;
}

Posterior posterior(const RegressionData& reg, const Vector& gamma, double sigma2, double eps) {
  if (gamma.size() != reg.N_w()) throw DimensionError("posterior: gamma length mismatch");
  if ((gamma.array() < 0.0).any()) throw Error("posterior: gamma must be nonnegative");
  if (!(sigma2 >= 0.0)) throw Error("posterior: sigma2 must be nonnegative");
  const auto Nw = reg.N_w();
  Posterior out{Vector::Zero(Nw), Matrix::Zero(Nw, Nw)};
  const auto idx = active_indices(gamma);
  if (idx.empty()) return out;

  const auto k = static_cast<Eigen::Index>(idx.size());
  Matrix PhiS(reg.N_y(), k);
  Vector s(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    s(j) = std::sqrt(gamma(idx[static_cast<std::size_t>(j)]));
    PhiS.col(j) = reg.Phi.col(idx[static_cast<std::size_t>(j)]) * s(j);
  }
  Eigen::BDCSVD<Matrix> svd(PhiS, Eigen::ComputeThinU | Eigen::ComputeFullV);
  const Vector& sv = svd.singularValues();
  const Matrix& U = svd.matrixU();
  const Matrix& V = svd.matrixV();
  const double s2 = sigma2 + eps;
  // mu = S V diag(sv / (sv^2 + s2)) U^T y
  const Vector Uty = U.transpose() * reg.y;
  Vector coef = Vector::Zero(k);
  for (Eigen::Index i = 0; i < sv.size(); ++i) coef(i) = sv(i) / (sv(i) * sv(i) + s2) * Uty(i);
  const Vector mu_a = s.cwiseProduct(V * coef);
  // Sigma = S V diag(s2 / (sv^2 + s2)) V^T S, with sv = 0 beyond the rank.
  Vector shrink = Vector::Ones(k);
  for (Eigen::Index i = 0; i < sv.size(); ++i) shrink(i) = s2 / (sv(i) * sv(i) + s2);
  const Matrix Sigma_a =
      symmetrize(s.asDiagonal() * (V * shrink.asDiagonal() * V.transpose()) * s.asDiagonal());
  for (Eigen::Index a = 0; a < k; ++a) {
    out.mu(idx[static_cast<std::size_t>(a)]) = mu_a(a);
    for (Eigen::Index b = 0; b < k; ++b) {
      out.Sigma(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]) = Sigma_a(a, b);
    }
  }
  return out;
}

double marginal_loglik(const RegressionData& reg, const Vector& gamma, double sigma2) {
  if (!(sigma2 > 0.0)) throw Error("marginal_loglik needs sigma2 > 0");
  if (gamma.size() != reg.N_w()) throw DimensionError("marginal_loglik: gamma length mismatch");
  const auto idx = active_indices(gamma);
  const double Ny = static_cast<double>(reg.N_y());
  const double yy = reg.y.squaredNorm();
  double logdet = Ny * std::log(sigma2);
  double quad = yy / sigma2;
  if (!idx.empty()) {
    Matrix Phi_a(reg.N_y(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) Phi_a.col(static_cast<Eigen::Index>(j)) = reg.Phi.col(idx[j]);
    const Matrix G = Phi_a.transpose() * Phi_a;
    const Vector h = Phi_a.transpose() * reg.y;
    const auto bp = block_posterior(G, h, gather(gamma, idx), sigma2, 0.0, true);
    logdet += bp.logdet;
    quad = (yy - bp.h_dot_mu) / sigma2;
  }
  return -0.5 * (Ny * std::log(2.0 * std::numbers::pi) + logdet + quad);
}

Mask identifiability_mask(int n, int p, int m, MaskMode mode, int p22) {
  if (n < p || p < 1) throw DimensionError("identifiability_mask needs 1 <= p <= n");
  Mask mask;
  mask.n = n;
  mask.p = p;
  mask.m = m;
  mask.mode = mode;
  mask.free.assign(static_cast<std::size_t>(n) * (n + m), true);
  if (mode == MaskMode::unconstrained) return mask;
  if (m != p) {
    throw IdentifiabilityError("a square diagonal P needs m = p (got m = " + std::to_string(m) +
                               ", p = " + std::to_string(p) + ")");
  }
  auto set_A = [&](int i, int j, bool v) { mask.free[static_cast<std::size_t>(w_index_A(n, i, j))] = v; };
  auto set_B = [&](int i, int j, bool v) { mask.free[static_cast<std::size_t>(w_index_B(n, i, j))] = v; };

  if (mode == MaskMode::diag_b) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) set_B(i, j, i == j);
    return mask;
  }

  // P-diagonal form: rows/cols of the observed block split as p11 | p22,
  // hidden block split as p11 | rest.
  if (p22 < 0 || p22 > p) throw Error("p22 must lie in [0, p]");
  const int p11 = p - p22;
  const int r = n - p;
  if (r < p11) {
    throw IdentifiabilityError("P-diagonal form needs n - p >= p - p22 hidden states");
  }
  mask.p22 = p22;
  // A12 (p x r) = [[c_hat, 0], [0, x]]
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < r; ++j) {
      bool free_entry;
      if (i < p11 && j < p11) free_entry = (i == j);
      else if (i < p11 || j < p11) free_entry = false;
      else free_entry = true;
      set_A(i, p + j, free_entry);
    }
  }
  // A22 (r x r) = [[a_hat, x], [0, x]]
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < r; ++j) {
      bool free_entry;
      if (i < p11 && j < p11) free_entry = (i == j);
      else if (j < p11) free_entry = false;
      else free_entry = true;
      set_A(p + i, p + j, free_entry);
    }
  }
  // B1 (p x m) = [[0, 0], [0, B1_22]] with B1_22 diagonal
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < m; ++j) set_B(i, j, i >= p11 && i == j);
  // B2 (r x m) = [[b_hat, 0], [0, 0]]
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < m; ++j) set_B(p + i, j, i < p11 && i == j);
  return mask;
}

SblState initial_sbl_state(const Mask& mask, const Vector& y) {
  SblState state;
  state.gamma = Vector::Zero(static_cast<Eigen::Index>(mask.free.size()));
  for (std::size_t i = 0; i < mask.free.size(); ++i)
    if (mask.free[i]) state.gamma(static_cast<Eigen::Index>(i)) = 1.0;
  const double mean = y.size() ? y.mean() : 0.0;
  const double var = y.size() ? (y.array() - mean).square().mean() : 0.0;
  state.sigma2 = var > 0.0 ? 0.1 * var : 1e-6;
  state.active.assign(mask.free.size(), false);
  for (std::size_t i = 0; i < mask.free.size(); ++i) state.active[i] = mask.free[i];
  return state;
}

SblState sbl_em(const RegressionData& reg, const Mask& mask, SblState state,
                const SblOptions& opts) {
  const auto Nw = reg.N_w();
  if (state.gamma.size() != Nw) throw DimensionError("sbl_em: gamma length mismatch");
  enforce_mask(mask, state);
  const double Ny = static_cast<double>(reg.N_y());
  const double samples = Ny / static_cast<double>(std::max(mask.n, 1));
  state.converged = false;

  for (int it = 0; it < opts.max_iter; ++it) {
    prune(opts, state);
    state.active_count.push_back(state.active_size());
    if (opts.track_evidence && state.sigma2 > 0.0) record_evidence(opts, marginal_loglik(reg, state.gamma, state.sigma2), state);

    const Posterior post = posterior(reg, state.gamma, state.sigma2, opts.eps);
    state.mu = post.mu;
    state.Sigma = post.Sigma;
    state.Sigma_diag = post.Sigma.diagonal();
    ++state.iteration;

    const Vector gamma_old = state.gamma;
    double trace_term = 0.0;
    for (Eigen::Index i = 0; i < Nw; ++i) {
      if (gamma_old(i) <= 0.0) continue;
      trace_term += 1.0 - state.Sigma_diag(i) / gamma_old(i);
      state.gamma(i) = updated_gamma(opts, gamma_old(i), state.Sigma_diag(i), state.mu(i));
    }
    if (!opts.freeze_sigma2) {
      const double resid = (reg.y - reg.Phi * state.mu).squaredNorm();
      state.sigma2 = (resid + state.sigma2 * trace_term) / noise_denominator(opts, Ny, samples);
    }
    state.sigma2_trace.push_back(state.sigma2);
    if (relative_change(gamma_old, state.gamma) < opts.tol) {
      state.converged = true;
      break;
    }
  }
  prune(opts, state);
  // Posterior consistent with the returned hyperparameters.
  const Posterior post = posterior(reg, state.gamma, state.sigma2, opts.eps);
  state.mu = post.mu;
  state.Sigma = post.Sigma;
  state.Sigma_diag = post.Sigma.diagonal();
  return state;
}

RowStats row_stats_from_means(const SmoothPass& sp, const Dataset& data) {
  const int N = data.N();
  if (sp.N() != N) throw DimensionError("row_stats_from_means: length mismatch");
  const int n = static_cast<int>(sp.x_sm[0].size());
  const int m = data.m();
  RowStats stats;
  stats.n = n;
  stats.m = m;
  stats.samples = N;
  Matrix Xi(n + m, N), X(n, N);
  for (int k = 1; k <= N; ++k) {
    Xi.col(k - 1).head(n) = sp.x_sm[k - 1];
    Xi.col(k - 1).tail(m) = data.U.row(k - 1).transpose();
    X.col(k - 1) = sp.x_sm[k];
  }
  stats.G = Xi * Xi.transpose();
  stats.H = X * Xi.transpose();
  stats.yy = X.rowwise().squaredNorm();
  return stats;
}

RowStats row_stats_from_esums(const ESums& es, int n) {
  RowStats stats;
  stats.n = n;
  stats.m = static_cast<int>(es.S_xixi.cols()) - n;
  stats.samples = es.N;
  stats.G = es.S_xixi;
  stats.H = es.S_xxi;
  stats.yy = es.S_xx.diagonal();
  return stats;
}

namespace {

std::vector<Eigen::Index> row_active(const Vector& gamma, int n, int cols, int i) {
  std::vector<Eigen::Index> idx;
  for (int j = 0; j < cols; ++j)
    if (gamma(static_cast<Eigen::Index>(j) * n + i) > 0.0) idx.push_back(j);
  return idx;
}

struct RowSweep {
  Vector mu;
  Vector Sigma_diag;
  double residual = 0.0;   // ||y - Phi mu||^2
  double logdet = 0.0;
  double h_dot_mu = 0.0;
};

RowSweep sweep_rows(const RowStats& stats, const Vector& gamma, double sigma2, double eps,
                    bool want_logdet) {
  const int n = stats.n, cols = stats.n + stats.m;
  RowSweep out;
  out.mu = Vector::Zero(gamma.size());
  out.Sigma_diag = Vector::Zero(gamma.size());
  for (int i = 0; i < n; ++i) {
    const auto idx = row_active(gamma, n, cols, i);
    if (idx.empty()) {
      out.residual += stats.yy(i);
      continue;
    }
    const Matrix G = gather(stats.G, idx, idx);
    Vector h(idx.size()), g(idx.size());
    for (std::size_t a = 0; a < idx.size(); ++a) {
      h(static_cast<Eigen::Index>(a)) = stats.H(i, idx[a]);
      g(static_cast<Eigen::Index>(a)) = gamma(idx[a] * n + i);
    }
    const auto bp = block_posterior(G, h, g, sigma2, eps, want_logdet);
    for (std::size_t a = 0; a < idx.size(); ++a) {
      out.mu(idx[a] * n + i) = bp.mu(static_cast<Eigen::Index>(a));
      out.Sigma_diag(idx[a] * n + i) = bp.Sigma(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a));
    }
    out.residual += stats.yy(i) - 2.0 * bp.h_dot_mu + bp.mu.dot(G * bp.mu);
    out.logdet += bp.logdet;
    out.h_dot_mu += bp.h_dot_mu;
  }
  out.residual = std::max(out.residual, 0.0);
  return out;
}

double evidence_from_sweep(const RowStats& stats, const RowSweep& sweep, double sigma2) {
  const double Ny = static_cast<double>(stats.N_y());
  const double yy = stats.yy.sum();
  return -0.5 * (Ny * std::log(2.0 * std::numbers::pi) + Ny * std::log(sigma2) + sweep.logdet +
                 (yy - sweep.h_dot_mu) / sigma2);
}

}  // namespace

double marginal_loglik_rows(const RowStats& stats, const Vector& gamma, double sigma2) {
  if (!(sigma2 > 0.0)) throw Error("marginal_loglik needs sigma2 > 0");
  return evidence_from_sweep(stats, sweep_rows(stats, gamma, sigma2, 0.0, true), sigma2);
}

SblState sbl_em_rows(const RowStats& stats, const Mask& mask, SblState state,
                     const SblOptions& opts) {
  const auto Nw = static_cast<Eigen::Index>(stats.n) * (stats.n + stats.m);
  if (state.gamma.size() != Nw) throw DimensionError("sbl_em_rows: gamma length mismatch");
  enforce_mask(mask, state);
  const double Ny = static_cast<double>(stats.N_y());
  state.converged = false;

  RowSweep sweep;
  for (int it = 0; it < opts.max_iter; ++it) {
    prune(opts, state);
    state.active_count.push_back(state.active_size());
    sweep = sweep_rows(stats, state.gamma, state.sigma2, opts.eps, opts.track_evidence);
    if (opts.track_evidence && state.sigma2 > 0.0) {
      // The sweep used sigma2 + eps; the evidence is reported at sigma2.
      record_evidence(opts, evidence_from_sweep(stats, sweep, state.sigma2), state);
    }
    state.mu = sweep.mu;
    state.Sigma_diag = sweep.Sigma_diag;
    ++state.iteration;

    const Vector gamma_old = state.gamma;
    double trace_term = 0.0;
    for (Eigen::Index i = 0; i < Nw; ++i) {
      if (gamma_old(i) <= 0.0) continue;
      trace_term += 1.0 - state.Sigma_diag(i) / gamma_old(i);
      state.gamma(i) = updated_gamma(opts, gamma_old(i), state.Sigma_diag(i), state.mu(i));
    }
    if (!opts.freeze_sigma2) {
      state.sigma2 = (sweep.residual + state.sigma2 * trace_term) /
                     noise_denominator(opts, Ny, static_cast<double>(stats.samples));
    }
    state.sigma2_trace.push_back(state.sigma2);
    if (relative_change(gamma_old, state.gamma) < opts.tol) {
      state.converged = true;
      break;
    }
  }
  prune(opts, state);
  sweep = sweep_rows(stats, state.gamma, state.sigma2, opts.eps, false);
  state.mu = sweep.mu;
  state.Sigma_diag = sweep.Sigma_diag;
  state.Sigma.resize(0, 0);
  return state;
}

MaskedMl masked_ml(const RowStats& stats, const Mask& mask) {
  const int n = stats.n, cols = stats.n + stats.m;
  if (static_cast<Eigen::Index>(mask.free.size()) != static_cast<Eigen::Index>(n) * cols) {
    throw DimensionError("masked_ml: mask length mismatch");
  }
  MaskedMl out;
  out.w = Vector::Zero(static_cast<Eigen::Index>(n) * cols);
  double residual = 0.0;
  for (int i = 0; i < n; ++i) {
    std::vector<Eigen::Index> idx;
    for (int j = 0; j < cols; ++j)
      if (mask.free[static_cast<std::size_t>(j * n + i)]) idx.push_back(j);
    residual += stats.yy(i);
    if (idx.empty()) continue;
    const Matrix G = gather(stats.G, idx, idx);
    Vector h(idx.size());
    for (std::size_t a = 0; a < idx.size(); ++a) h(static_cast<Eigen::Index>(a)) = stats.H(i, idx[a]);
    const Vector l = G.ldlt().solve(h);
    for (std::size_t a = 0; a < idx.size(); ++a) out.w(idx[a] * n + i) = l(static_cast<Eigen::Index>(a));
    residual -= l.dot(h);
  }
  out.sigma2 = std::max(residual, 0.0) / static_cast<double>(stats.N_y());
  return out;
}

std::string to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::unconstrained: return "unconstrained";
    case MaskMode::diag_b: return "diag-b";
    case MaskMode::p_diag: return "p-diag";
  }
  return "unknown";
}

MaskMode parse_mask_mode(const std::string& text) {
  if (text == "unconstrained" || text == "none") return MaskMode::unconstrained;
  if (text == "diag-b" || text == "diag_b") return MaskMode::diag_b;
  if (text == "p-diag" || text == "p_diag") return MaskMode::p_diag;
  throw ParseError("unknown mask mode '" + text + "'");
}

}  // namespace dsfnet
