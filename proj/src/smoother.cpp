#include "dsfnet/smoother.hpp"

#include <cmath>
#include <numbers>

namespace dsfnet {

namespace {

void check_estimation_model(const StateSpaceModel& model, const Dataset& data) {
  model.validate();
  data.validate();
  if (data.p() != model.p() || data.m() != model.m()) {
    throw DimensionError("model and dataset dimensions differ");
  }
  if (model.D.size() && model.D.cwiseAbs().maxCoeff() != 0.0) {
    throw Error("state estimation supports D = 0 only");
  }
}

/// Solves X P = R for symmetric P (returns R P^-1), falling back to the
/// eigen-pseudo-inverse when P is numerically singular.
Matrix right_solve_spd(const Matrix& P, const Matrix& R, SmoothPass& sp) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(P);
  const Vector& ev = es.eigenvalues();
  const double top = std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  const double bottom = ev.minCoeff();
  if (bottom > 1e-13 * top) {
    sp.worst_condition = std::max(sp.worst_condition, top / bottom);
    Eigen::LLT<Matrix> llt(P);
    return llt.solve(R.transpose()).transpose();
  }
  sp.used_pseudo_inverse = true;
  sp.worst_condition = std::numeric_limits<double>::infinity();
  Vector inv = Vector::Zero(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) > 1e-13 * top) inv(i) = 1.0 / ev(i);
  }
  const Matrix& V = es.eigenvectors();
  return R * V * inv.asDiagonal() * V.transpose();
}

}  // namespace

FilterPass kalman_filter(const StateSpaceModel& model, const Dataset& data) {
  check_estimation_model(model, data);
  if (!(model.sigma > 0.0)) throw Error("kalman_filter needs sigma > 0");
  const int n = model.n(), p = model.p(), N = data.N();
  const double sigma2 = model.sigma * model.sigma;
  const Matrix& A = model.A;
  const Matrix& C = model.C;
  const Matrix Ip = Matrix::Identity(p, p);

  FilterPass fp;
  fp.x0 = model.m0;
  fp.P0 = symmetrize(model.R0);
  for (auto* v : {&fp.x_pred, &fp.x_filt, &fp.innovation}) v->reserve(N);
  for (auto* v : {&fp.P_pred, &fp.P_filt, &fp.gain, &fp.innovation_cov}) v->reserve(N);

  Vector x = fp.x0;
  Matrix P = fp.P0;
  for (int k = 1; k <= N; ++k) {
    Vector xp = A * x + model.B * data.U.row(k - 1).transpose();
    Matrix Pp = A * P * A.transpose();
    Pp.diagonal().array() += sigma2;
    Pp = symmetrize(Pp);

    Matrix S = symmetrize(C * Pp * C.transpose() + Ip);
    Eigen::LLT<Matrix> llt(S);
    if (llt.info() != Eigen::Success) throw FilterDiverged(k);
    const Matrix PCt = Pp * C.transpose();
    Matrix K = llt.solve(PCt.transpose()).transpose();
    Vector nu = data.Y.row(k - 1).transpose() - C * xp;

    x = xp + K * nu;
    P = symmetrize(Pp - K * C * Pp);
    if (!P.allFinite() || !x.allFinite() || Pp.norm() > kDivergenceNorm ||
        x.norm() > kDivergenceNorm) {
      throw FilterDiverged(k);
    }
    fp.x_pred.push_back(std::move(xp));
    fp.P_pred.push_back(std::move(Pp));
    fp.x_filt.push_back(x);
    fp.P_filt.push_back(P);
    fp.gain.push_back(std::move(K));
    fp.innovation.push_back(std::move(nu));
    fp.innovation_cov.push_back(std::move(S));
  }
  (void)n;
  return fp;
}

SmoothPass rts_smoother(const StateSpaceModel& model, const FilterPass& fp) {
  const int N = fp.N();
  if (N < 1) throw Error("rts_smoother needs a nonempty filter pass");
  SmoothPass sp;
  sp.x_sm.resize(N + 1);
  sp.P_sm.resize(N + 1);
  sp.J.resize(N);
  sp.x_sm[N] = fp.x_filt[N - 1];
  sp.P_sm[N] = fp.P_filt[N - 1];
  const Matrix& A = model.A;
  for (int k = N - 1; k >= 0; --k) {
    const Matrix& Pf = fp.filtered_cov(k);
    const Matrix& Pp_next = fp.P_pred[k];  // P(k+1|k)
    sp.J[k] = right_solve_spd(Pp_next, Pf * A.transpose(), sp);
    const Matrix& J = sp.J[k];
    sp.x_sm[k] = fp.filtered_mean(k) + J * (sp.x_sm[k + 1] - fp.x_pred[k]);
    sp.P_sm[k] = symmetrize(Pf + J * (sp.P_sm[k + 1] - Pp_next) * J.transpose());
  }
  return sp;
}

const std::vector<Matrix>& lag_one_smoother(const StateSpaceModel& model,
                                            const FilterPass& fp, SmoothPass& sp) {
  const int N = fp.N();
  if (sp.N() != N || static_cast<int>(sp.J.size()) != N) {
    throw DimensionError("lag_one_smoother: smoother and filter lengths differ");
  }
  const Matrix& A = model.A;
  const int n = model.n();
  sp.lag_one.assign(N + 1, Matrix());
  sp.lag_one[N] = (Matrix::Identity(n, n) - fp.gain[N - 1] * model.C) * A * fp.filtered_cov(N - 1);
  for (int k = N - 1; k >= 1; --k) {
    const Matrix& Pf = fp.filtered_cov(k);
    sp.lag_one[k] = Pf * sp.J[k - 1].transpose() +
                    sp.J[k] * (sp.lag_one[k + 1] - A * Pf) * sp.J[k - 1].transpose();
  }
  return sp.lag_one;
}

SmoothPass smooth(const StateSpaceModel& model, const Dataset& data, FilterPass* fp_out) {
  FilterPass fp = kalman_filter(model, data);
  SmoothPass sp = rts_smoother(model, fp);
  lag_one_smoother(model, fp, sp);
  if (fp_out) *fp_out = std::move(fp);
  return sp;
}

ESums expectation_sums(const SmoothPass& sp, const Dataset& data, const Vector& m0) {
  const int N = sp.N();
  if (N != data.N()) throw DimensionError("expectation_sums: smoother and data lengths differ");
  if (static_cast<int>(sp.lag_one.size()) != N + 1) {
    throw DimensionError("expectation_sums needs lag-one covariances");
  }
  const auto n = sp.x_sm[0].size();
  const auto m = data.U.cols();
  if (m0.size() != n) throw DimensionError("expectation_sums: m0 has wrong length");

  ESums es;
  es.N = N;
  es.S_xx = Matrix::Zero(n, n);
  es.S_xxi = Matrix::Zero(n, n + m);
  es.S_xixi = Matrix::Zero(n + m, n + m);
  for (int k = 1; k <= N; ++k) {
    const Vector& xk = sp.x_sm[k];
    const Vector& xprev = sp.x_sm[k - 1];
    const Vector u = data.U.row(k - 1).transpose();
    es.S_xx.noalias() += xk * xk.transpose() + sp.P_sm[k];
    es.S_xxi.leftCols(n).noalias() += xk * xprev.transpose() + sp.lag_one[k];
    es.S_xxi.rightCols(m).noalias() += xk * u.transpose();
    es.S_xixi.topLeftCorner(n, n).noalias() += xprev * xprev.transpose() + sp.P_sm[k - 1];
    es.S_xixi.topRightCorner(n, m).noalias() += xprev * u.transpose();
    es.S_xixi.bottomRightCorner(m, m).noalias() += u * u.transpose();
  }
  es.S_xixi.bottomLeftCorner(m, n) = es.S_xixi.topRightCorner(n, m).transpose();
  es.S_xx = symmetrize(es.S_xx);
  es.S_xixi = symmetrize(es.S_xixi);
  es.x0_sm = sp.x_sm[0];
  es.P0_sm = sp.P_sm[0];
  const Vector d = es.x0_sm - m0;
  es.E0 = symmetrize(es.P0_sm + d * d.transpose());
  return es;
}

QValue q_function(const Matrix& A, const Matrix& B, double sigma2, const Vector& m0,
                  const Matrix& R0, const ESums& es) {
  const auto n = A.rows();
  if (B.rows() != n || es.S_xx.rows() != n || m0.size() != n || R0.rows() != n) {
    throw DimensionError("q_function: inconsistent dimensions");
  }
  if (!(sigma2 > 0.0)) throw Error("q_function needs sigma2 > 0");
  QValue out;
  Matrix R = symmetrize(R0);
  Eigen::LLT<Matrix> llt(R);
  if (llt.info() != Eigen::Success ||
      llt.matrixL().toDenseMatrix().diagonal().minCoeff() <= 1e-150) {
    const double trace = R.trace();
    const double jitter = 1e-10 * (trace > 0.0 ? trace / static_cast<double>(n) : 1.0);
    R.diagonal().array() += jitter;
    llt.compute(R);
    out.regularized_R0 = true;
    if (llt.info() != Eigen::Success) throw Error("q_function: R0 is not positive semidefinite");
  }
  const double logdet_R0 = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();

  Matrix L(n, A.cols() + B.cols());
  L << A, B;
  const double residual = (es.S_xx - L * es.S_xxi.transpose() - es.S_xxi * L.transpose() +
                           L * es.S_xixi * L.transpose())
                              .trace();
  const double minus_two_q = logdet_R0 + es.N * static_cast<double>(n) * std::log(sigma2) +
                             llt.solve(es.E0).trace() + residual / sigma2;
  out.value = -0.5 * minus_two_q;
  return out;
}

double observed_loglik(const FilterPass& fp) {
  double total = 0.0;
  for (int k = 0; k < fp.N(); ++k) {
    const Matrix& S = fp.innovation_cov[k];
    Eigen::LLT<Matrix> llt(S);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const Vector& nu = fp.innovation[k];
    total += -0.5 * (static_cast<double>(nu.size()) * std::log(2.0 * std::numbers::pi) + logdet +
                     nu.dot(llt.solve(nu)));
  }
  return total;
}

double observed_loglik(const StateSpaceModel& model, const Dataset& data) {
  return observed_loglik(kalman_filter(model, data));
}

MlUpdate ml_m_step(const ESums& es, int n) {
  const auto m = es.S_xixi.cols() - n;
  Eigen::LDLT<Matrix> ldlt(es.S_xixi);
  // L S_xixi = S_xxi  <=>  S_xixi L^T = S_xxi^T
  const Matrix L = ldlt.solve(es.S_xxi.transpose()).transpose();
  MlUpdate out;
  out.A = L.leftCols(n);
  out.B = L.rightCols(m);
  out.sigma2 = (es.S_xx - L * es.S_xxi.transpose()).trace() /
               (static_cast<double>(es.N) * static_cast<double>(n));
  return out;
}

}  // namespace dsfnet
