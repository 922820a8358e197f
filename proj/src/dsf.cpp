#include "dsfnet/dsf.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dsfnet {

namespace {

constexpr int kMaxPoleRetries = 8;
constexpr double kExactZeroTol = 1e-10;
constexpr int kMaxExactHidden = 12;

bool is_identity_output(const Matrix& C) {
  const auto p = C.rows();
  return (C.leftCols(p) - Matrix::Identity(p, p)).cwiseAbs().maxCoeff() == 0.0 &&
         (C.cols() == p || C.rightCols(C.cols() - p).cwiseAbs().maxCoeff() == 0.0);
}

/// Model expressed in z = T x coordinates, z1 = C x.
struct Partitioned {
  int p = 0;
  int r = 0;  // hidden dimension n - p
  Matrix A11, A12, A21, A22;
  Matrix B1, B2;
  Matrix K1, K2;
  Matrix D;
};

Partitioned partition(const StateSpaceModel& model) {
  model.validate();
  const int n = model.n(), p = model.p();
  const Matrix E = null_space_basis(model.C);
  const Matrix Ebar = model.C.transpose() * (model.C * model.C.transpose()).inverse();
  Matrix T(n, n), Tinv(n, n);
  T << model.C, E.transpose();
  Tinv << Ebar, E;

  const Matrix Ahat = T * model.A * Tinv;
  const Matrix Bhat = T * model.B;
  const Matrix Khat = model.sigma * (T * Ebar);

  Partitioned out;
  out.p = p;
  out.r = n - p;
  out.A11 = Ahat.topLeftCorner(p, p);
  out.A12 = Ahat.topRightCorner(p, n - p);
  out.A21 = Ahat.bottomLeftCorner(n - p, p);
  out.A22 = Ahat.bottomRightCorner(n - p, n - p);
  out.B1 = Bhat.topRows(p);
  out.B2 = Bhat.bottomRows(n - p);
  out.K1 = Khat.topRows(p);
  out.K2 = Khat.bottomRows(n - p);
  out.D = model.D;
  return out;
}

struct PointValue {
  CMatrix Q, P, H;
};

/// Returns false when q sits (numerically) on a pole.
bool evaluate_at(const Partitioned& sys, const Eigen::VectorXcd& hidden_poles,
                 Complex q, PointValue& out) {
  const int p = sys.p, r = sys.r;
  const double scale = std::max(1.0, std::abs(q));
  for (Eigen::Index k = 0; k < hidden_poles.size(); ++k) {
    if (std::abs(q - hidden_poles(k)) < 1e-9 * scale) return false;
  }
  CMatrix W = sys.A11.cast<Complex>();
  CMatrix V = sys.B1.cast<Complex>();
  CMatrix L = sys.K1.cast<Complex>();
  if (r > 0) {
    const CMatrix resolvent_arg = q * CMatrix::Identity(r, r) - sys.A22.cast<Complex>();
    Eigen::PartialPivLU<CMatrix> lu(resolvent_arg);
    const CMatrix A12 = sys.A12.cast<Complex>();
    W += A12 * lu.solve(sys.A21.cast<Complex>());
    V += A12 * lu.solve(sys.B2.cast<Complex>());
    L += A12 * lu.solve(sys.K2.cast<Complex>());
  }
  const double w_scale = std::max(1.0, W.cwiseAbs().maxCoeff());
  Eigen::VectorXcd inv_d(p);
  for (int i = 0; i < p; ++i) {
    const Complex d = q - W(i, i);
    if (!(std::abs(d) > 1e-12 * std::max(scale, w_scale))) return false;
    inv_d(i) = 1.0 / d;
  }
  CMatrix Qhat = inv_d.asDiagonal() * W;
  Qhat.diagonal().setZero();
  out.Q = Qhat;
  const CMatrix I_minus_Q = CMatrix::Identity(p, p) - Qhat;
  out.P = inv_d.asDiagonal() * V + I_minus_Q * sys.D.cast<Complex>();
  out.H = inv_d.asDiagonal() * L + I_minus_Q;
  if (!out.Q.allFinite() || !out.P.allFinite() || !out.H.allFinite()) return false;
  return true;
}

Poly row_times_adj_times_col(const Matrix& A12, int i, const std::vector<Matrix>& adj,
                             const Matrix& right, int j) {
  Poly out;
  out.coeffs.resize(adj.size(), 0.0);
  for (std::size_t k = 0; k < adj.size(); ++k) {
    out.coeffs[k] = A12.row(i).dot(adj[k] * right.col(j));
  }
  return out;
}

void canonicalize_row(RationalMatrix& M, int i) {
  double scale = 0.0;
  for (int j = 0; j < M.cols; ++j) {
    for (double c : M(i, j).num.coeffs) scale = std::max(scale, std::abs(c));
    for (double c : M(i, j).den.coeffs) scale = std::max(scale, std::abs(c));
  }
  for (int j = 0; j < M.cols; ++j) {
    auto& entry = M(i, j);
    const bool negligible = std::all_of(entry.num.coeffs.begin(), entry.num.coeffs.end(),
                                        [&](double c) { return std::abs(c) < kExactZeroTol * scale; });
    if (negligible) {
      entry.num.coeffs.clear();
      entry.den.coeffs = {1.0};
    } else {
      entry.num.trim();
    }
  }
}

}  // namespace

Complex Poly::operator()(Complex q) const {
  Complex acc = 0.0;
  for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * q + *it;
  return acc;
}

void Poly::trim() {
  while (!coeffs.empty() && coeffs.back() == 0.0) coeffs.pop_back();
}

Poly operator+(const Poly& a, const Poly& b) {
  Poly out;
  out.coeffs.assign(std::max(a.coeffs.size(), b.coeffs.size()), 0.0);
  for (std::size_t k = 0; k < a.coeffs.size(); ++k) out.coeffs[k] += a.coeffs[k];
  for (std::size_t k = 0; k < b.coeffs.size(); ++k) out.coeffs[k] += b.coeffs[k];
  return out;
}

Poly operator*(double s, const Poly& a) {
  Poly out = a;
  for (auto& c : out.coeffs) c *= s;
  return out;
}

Poly operator-(const Poly& a, const Poly& b) { return a + (-1.0) * b; }

Poly operator*(const Poly& a, const Poly& b) {
  if (a.coeffs.empty() || b.coeffs.empty()) return {};
  Poly out;
  out.coeffs.assign(a.coeffs.size() + b.coeffs.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.coeffs.size(); ++i)
    for (std::size_t j = 0; j < b.coeffs.size(); ++j) out.coeffs[i + j] += a.coeffs[i] * b.coeffs[j];
  return out;
}

CMatrix RationalMatrix::evaluate(Complex q) const {
  CMatrix out(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out(i, j) = (*this)(i, j).is_zero() ? Complex(0.0) : (*this)(i, j)(q);
  return out;
}

BoolMatrix RationalMatrix::nonzero_pattern() const {
  BoolMatrix out(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out(i, j) = !(*this)(i, j).is_zero();
  return out;
}

long NetworkGraph::q_edge_count() const {
  long count = 0;
  for (Eigen::Index i = 0; i < q_adj.rows(); ++i)
    for (Eigen::Index j = 0; j < q_adj.cols(); ++j)
      if (i != j && q_adj(i, j)) ++count;
  return count;
}

std::vector<Complex> default_q_points(std::uint64_t seed) {
  std::vector<Complex> points;
  points.reserve(32);
  for (int k = 0; k < 16; ++k) {
    const double angle = 2.0 * std::numbers::pi * (k + 0.5) / 16.0;
    points.push_back(std::polar(2.0, angle));
  }
  Rng rng(derive_seed(seed, 0x5157));
  std::uniform_real_distribution<double> radius(1.5, 4.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  for (int k = 0; k < 16; ++k) {
    const double r = radius(rng);
    points.push_back(std::polar(r, angle(rng)));
  }
  return points;
}

Matrix null_space_basis(const Matrix& C) {
  const auto p = C.rows(), n = C.cols();
  if (is_identity_output(C)) {
    Matrix E = Matrix::Zero(n, n - p);
    E.bottomRows(n - p).setIdentity();
    return E;
  }
  Eigen::HouseholderQR<Matrix> qr(C.transpose());
  const Matrix Qfull = qr.householderQ() * Matrix::Identity(n, n);
  return Qfull.rightCols(n - p);
}

FreqSample dsf_from_state_space(const StateSpaceModel& model,
                                const std::vector<Complex>& q_points) {
  if (q_points.empty()) throw Error("dsf_from_state_space needs at least one q point");
  const Partitioned sys = partition(model);
  Eigen::VectorXcd hidden_poles;
  if (sys.r > 0) hidden_poles = Eigen::EigenSolver<Matrix>(sys.A22, false).eigenvalues();

  FreqSample out;
  out.q_points.reserve(q_points.size());
  for (Complex q : q_points) {
    PointValue value;
    bool ok = false;
    for (int attempt = 0; attempt <= kMaxPoleRetries && !ok; ++attempt) {
      ok = evaluate_at(sys, hidden_poles, q, value);
      if (!ok) q *= std::polar(1.0 + 1e-3 * (attempt + 1), 0.013 * (attempt + 1));
    }
    if (!ok) throw Error("every resampled q point hit a pole of the DSF");
    out.q_points.push_back(q);
    out.Q.push_back(std::move(value.Q));
    out.P.push_back(std::move(value.P));
    out.H.push_back(std::move(value.H));
  }
  return out;
}

LeverrierResult faddeev_leverrier(const Matrix& M) {
  const auto r = M.rows();
  LeverrierResult out;
  out.charpoly.coeffs.assign(static_cast<std::size_t>(r + 1), 0.0);
  out.charpoly.coeffs[static_cast<std::size_t>(r)] = 1.0;
  out.adjugate.assign(static_cast<std::size_t>(r), Matrix::Zero(r, r));
  // adj(qI - M) = sum_{k=1..r} N_k q^{r-k}, N_1 = I, N_{k+1} = M N_k + c_{r-k} I.
  Matrix Nk = Matrix::Identity(r, r);
  for (Eigen::Index k = 1; k <= r; ++k) {
    out.adjugate[static_cast<std::size_t>(r - k)] = Nk;
    const Matrix MN = M * Nk;
    const double c = -MN.trace() / static_cast<double>(k);
    out.charpoly.coeffs[static_cast<std::size_t>(r - k)] = c;
    Nk = MN + c * Matrix::Identity(r, r);
  }
  return out;
}

ExactDsf exact_dsf_small(const StateSpaceModel& model) {
  const Partitioned sys = partition(model);
  const int p = sys.p, r = sys.r, m = static_cast<int>(sys.B1.cols());
  if (r > kMaxExactHidden) {
    throw UnsupportedSize("exact_dsf_small supports n - p <= 12, got " + std::to_string(r));
  }
  const LeverrierResult lev = faddeev_leverrier(sys.A22);
  const Poly& chi = lev.charpoly;

  auto numerator = [&](const Matrix& direct, const Matrix& right, int i, int j) {
    Poly out = direct(i, j) * chi;
    if (r > 0) out = out + row_times_adj_times_col(sys.A12, i, lev.adjugate, right, j);
    return out;
  };

  std::vector<std::vector<Poly>> Wn(p, std::vector<Poly>(p));
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) Wn[i][j] = numerator(sys.A11, sys.A21, i, j);

  Poly shift;
  shift.coeffs = {0.0, 1.0};
  std::vector<Poly> den(p);
  for (int i = 0; i < p; ++i) {
    den[i] = shift * chi - Wn[i][i];
    den[i].trim();
  }

  ExactDsf out;
  out.Q = RationalMatrix{p, p, std::vector<Rational>(static_cast<std::size_t>(p * p))};
  out.P = RationalMatrix{p, m, std::vector<Rational>(static_cast<std::size_t>(p * m))};
  out.H = RationalMatrix{p, p, std::vector<Rational>(static_cast<std::size_t>(p * p))};
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) {
      out.Q(i, j).den = den[i];
      if (i != j) out.Q(i, j).num = Wn[i][j];
      Poly h = numerator(sys.K1, sys.K2, i, j);
      h = (i == j) ? h + den[i] : h - Wn[i][j];
      out.H(i, j) = {h, den[i]};
    }
    for (int j = 0; j < m; ++j) {
      Poly v = numerator(sys.B1, sys.B2, i, j);
      v = v + sys.D(i, j) * den[i];
      for (int l = 0; l < p; ++l) {
        if (l != i && sys.D(l, j) != 0.0) v = v - sys.D(l, j) * Wn[i][l];
      }
      out.P(i, j) = {v, den[i]};
    }
    canonicalize_row(out.Q, i);
    canonicalize_row(out.P, i);
    canonicalize_row(out.H, i);
  }
  return out;
}

NetworkGraph boolean_structure(const FreqSample& sample, double rel_tol) {
  if (sample.size() == 0) throw Error("boolean_structure needs a nonempty sample");
  const auto p = sample.Q.front().rows();
  const auto m = sample.P.front().cols();
  Matrix q_peak = Matrix::Zero(p, p), p_peak = Matrix::Zero(p, m);
  for (std::size_t k = 0; k < sample.size(); ++k) {
    q_peak = q_peak.cwiseMax(sample.Q[k].cwiseAbs());
    p_peak = p_peak.cwiseMax(sample.P[k].cwiseAbs());
  }
  const double q_scale = q_peak.size() ? q_peak.maxCoeff() : 0.0;
  const double p_scale = p_peak.size() ? p_peak.maxCoeff() : 0.0;

  NetworkGraph graph;
  graph.q_adj = BoolMatrix::Constant(p, p, false);
  graph.p_adj = BoolMatrix::Constant(p, m, false);
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) {
      if (i == j || !(q_peak(i, j) > rel_tol * q_scale)) continue;
      graph.q_adj(i, j) = true;
      auto& cap = graph.capacities[{static_cast<int>(i), static_cast<int>(j)}];
      for (const auto& Qk : sample.Q) cap.push_back(Qk(i, j));
    }
    for (Eigen::Index j = 0; j < m; ++j) graph.p_adj(i, j) = p_peak(i, j) > rel_tol * p_scale;
  }
  return graph;
}

NetworkGraph boolean_structure(const ExactDsf& dsf) {
  NetworkGraph graph;
  graph.q_adj = dsf.Q.nonzero_pattern();
  graph.q_adj.diagonal().setConstant(false);
  graph.p_adj = dsf.P.nonzero_pattern();
  return graph;
}

GraphMetrics graph_compare(const BoolMatrix& est, const BoolMatrix& truth) {
  if (est.rows() != truth.rows() || est.cols() != truth.cols()) {
    throw DimensionError("graph_compare: adjacency dimensions differ");
  }
  GraphMetrics metrics;
  for (Eigen::Index i = 0; i < est.rows(); ++i) {
    for (Eigen::Index j = 0; j < est.cols(); ++j) {
      if (i == j) continue;
      metrics.n_est_edges += est(i, j);
      metrics.n_true_edges += truth(i, j);
      metrics.n_correct += est(i, j) && truth(i, j);
    }
  }
  metrics.precision = metrics.n_est_edges == 0
                          ? 1.0
                          : static_cast<double>(metrics.n_correct) / static_cast<double>(metrics.n_est_edges);
  metrics.tpr = metrics.n_true_edges == 0
                    ? 1.0
                    : static_cast<double>(metrics.n_correct) / static_cast<double>(metrics.n_true_edges);
  return metrics;
}

GraphMetrics graph_compare(const NetworkGraph& est, const NetworkGraph& truth) {
  return graph_compare(est.q_adj, truth.q_adj);
}

}  // namespace dsfnet
