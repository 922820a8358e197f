#include <doctest.h>

#include "dsfnet/dsf.hpp"
#include "oracles.hpp"

using namespace dsfnet;

namespace {

double max_abs(const CMatrix& M) { return M.size() ? M.cwiseAbs().maxCoeff() : 0.0; }

// Same system with the hidden coordinates mixed by T22 (outputs untouched).
StateSpaceModel hidden_transform(const StateSpaceModel& model, const Matrix& T22) {
  const int n = model.n(), p = model.p();
  Matrix T = Matrix::Identity(n, n);
  T.bottomRightCorner(n - p, n - p) = T22;
  const Matrix Ti = T.inverse();
  StateSpaceModel out = model;
  out.A = T * model.A * Ti;
  out.B = T * model.B;
  out.C = model.C * Ti;
  return out;
}

}  // namespace

TEST_SUITE("dsf") {

TEST_CASE("sampled DSF reproduces the transfer matrices") {
  Rng rng(1);
  for (int t = 0; t < 10; ++t) {
    const int p = 1 + t % 3, n = p + 1 + t % 4;
    const auto model = oracle::random_model(rng, n, p, p, t % 2 == 0);
    const auto sample = dsf_from_state_space(model, default_q_points(t));
    for (std::size_t k = 0; k < sample.size(); ++k) {
      const Complex q = sample.q_points[k];
      const CMatrix IQ = CMatrix::Identity(p, p) - sample.Q[k];
      CHECK(max_abs(sample.Q[k].diagonal()) == 0.0);
      CHECK(max_abs(IQ * oracle::transfer(model, q) - sample.P[k]) < 1e-10);
      CHECK(max_abs(IQ * oracle::noise_transfer(model, q) - sample.H[k]) < 1e-10);
    }
  }
}

TEST_CASE("DSF is invariant to hidden-state coordinates") {
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    const int p = 2, n = 5;
    const auto model = oracle::random_model(rng, n, p, p, true);
    const Matrix T22 = gaussian_matrix(n - p, n - p, rng) + 2.0 * Matrix::Identity(n - p, n - p);
    const auto moved = hidden_transform(model, T22);
    const auto pts = default_q_points(t);
    const auto a = dsf_from_state_space(model, pts), b = dsf_from_state_space(moved, pts);
    for (std::size_t k = 0; k < a.size(); ++k) {
      CHECK(max_abs(a.Q[k] - b.Q[k]) < 1e-9 * std::max(1.0, max_abs(a.Q[k])));
      CHECK(max_abs(a.P[k] - b.P[k]) < 1e-9 * std::max(1.0, max_abs(a.P[k])));
      CHECK(max_abs(a.H[k] - b.H[k]) < 1e-9 * std::max(1.0, max_abs(a.H[k])));
    }
  }
}

TEST_CASE("exact rational DSF agrees with sampling") {
  Rng rng(3);
  for (int t = 0; t < 10; ++t) {
    const int p = 1 + t % 4, n = p + t % 5;
    const auto model = oracle::random_model(rng, n, p, p, t % 3 != 0);
    const ExactDsf exact = exact_dsf_small(model);
    const auto sample = dsf_from_state_space(model, default_q_points(t));
    for (std::size_t k = 0; k < sample.size(); ++k) {
      const Complex q = sample.q_points[k];
      CHECK(max_abs(exact.Q.evaluate(q) - sample.Q[k]) < 1e-10);
      CHECK(max_abs(exact.P.evaluate(q) - sample.P[k]) < 1e-10);
      CHECK(max_abs(exact.H.evaluate(q) - sample.H[k]) < 1e-10);
    }
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j) CHECK(exact.Q(i, j).strictly_proper());
  }
}

TEST_CASE("hand-built chain has the expected structure") {
  // y1 -> h -> y2, y2 -> y1 directly; inputs on y1 and y2 only.
  Matrix A(3, 3);
  A << 0.5, 0.3, 0.0,
       0.0, 0.4, 0.6,
       0.7, 0.0, 0.2;
  Matrix B = Matrix::Zero(3, 2);
  B(0, 0) = 1.0;
  B(1, 1) = 1.0;
  const auto model = StateSpaceModel::with_identity_output(A, B, 1.0, 2);
  const NetworkGraph g = boolean_structure(exact_dsf_small(model));
  CHECK(g.q_adj(0, 1));
  CHECK(g.q_adj(1, 0));
  CHECK_FALSE(g.p_adj(0, 1));
  CHECK_FALSE(g.p_adj(1, 0));
  // Q(2,1) = 0.6 * 0.7 / ((q - 0.4)(q - 0.2)) after the diagonal is removed.
  const ExactDsf e = exact_dsf_small(model);
  const Complex q(1.5, 0.5);
  CHECK(std::abs(e.Q(1, 0)(q) - 0.42 / ((q - 0.4) * (q - 0.2) - 0.0)) < 1e-12);

  const NetworkGraph sampled = boolean_structure(dsf_from_state_space(model, default_q_points(1)));
  CHECK(sampled.q_adj == g.q_adj);
  CHECK(sampled.p_adj == g.p_adj);
  CHECK(sampled.q_edge_count() == 2);
  CHECK(sampled.capacities.size() == 2);
}

TEST_CASE("Faddeev-LeVerrier gives the characteristic polynomial and adjugate") {
  Rng rng(4);
  const Matrix M = gaussian_matrix(4, 4, rng);
  const auto lev = faddeev_leverrier(M);
  const Complex q(0.7, -1.1);
  const CMatrix R = q * CMatrix::Identity(4, 4) - M.cast<Complex>();
  CHECK(std::abs(lev.charpoly(q) - R.determinant()) < 1e-10 * std::abs(R.determinant()));
  CMatrix adj = CMatrix::Zero(4, 4);
  Complex qk = 1.0;
  for (const auto& N : lev.adjugate) {
    adj += qk * N.cast<Complex>();
    qk *= q;
  }
  CHECK(max_abs(adj * R - R.determinant() * CMatrix::Identity(4, 4)) < 1e-9);
}

TEST_CASE("polynomial arithmetic") {
  Poly a{{1.0, 2.0}}, b{{-1.0, 0.0, 3.0}};
  const Complex q(0.3, 0.8);
  CHECK(std::abs((a * b)(q) - a(q) * b(q)) < 1e-14);
  CHECK(std::abs((a - b)(q) - (a(q) - b(q))) < 1e-14);
  Poly c{{1.0, 0.0, 0.0}};
  c.trim();
  CHECK(c.degree() == 0);
  CHECK((Poly{} * a).is_zero());
}

TEST_CASE("null-space basis is orthonormal and annihilated by C") {
  Rng rng(5);
  const Matrix C = gaussian_matrix(3, 7, rng);
  const Matrix E = null_space_basis(C);
  CHECK(E.cols() == 4);
  CHECK((C * E).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((E.transpose() * E - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("q points sit off the unit disk and are seeded") {
  const auto a = default_q_points(9), b = default_q_points(9), c = default_q_points(10);
  CHECK(a == b);
  CHECK(a != c);
  for (Complex q : a) CHECK(std::abs(q) >= 1.5 - 1e-12);
}

TEST_CASE("graph comparison ignores the diagonal") {
  BoolMatrix truth = BoolMatrix::Constant(3, 3, false), est = truth;
  truth(0, 1) = truth(2, 0) = true;
  est(0, 1) = est(1, 2) = est(1, 1) = true;
  const auto m = graph_compare(est, truth);
  CHECK(m.n_correct == 1);
  CHECK(m.n_est_edges == 2);
  CHECK(m.n_true_edges == 2);
  CHECK(m.precision == 0.5);
  CHECK(m.tpr == 0.5);
  const auto empty = graph_compare(BoolMatrix::Constant(3, 3, false), BoolMatrix::Constant(3, 3, false));
  CHECK(empty.precision == 1.0);
  CHECK(empty.tpr == 1.0);
  CHECK_THROWS_AS(graph_compare(est, BoolMatrix::Constant(2, 2, false)), DimensionError);
}

TEST_CASE("exact path refuses oversized hidden blocks") {
  Rng rng(6);
  const auto model = oracle::random_model(rng, 15, 2, 2, true);
  CHECK_THROWS_AS(exact_dsf_small(model), UnsupportedSize);
}

}
