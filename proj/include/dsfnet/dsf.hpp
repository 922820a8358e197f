#pragma once

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "dsfnet/common.hpp"
#include "dsfnet/model.hpp"

namespace dsfnet {

inline constexpr double kDefaultStructureTol = 1e-4;

/// Dynamical structure function (Q, P, H) sampled at points of the shift
/// operator q. Q is p x p with an exactly zero diagonal, P is p x m, H p x p.
struct FreqSample {
  std::vector<Complex> q_points;
  std::vector<CMatrix> Q;
  std::vector<CMatrix> P;
  std::vector<CMatrix> H;

  std::size_t size() const { return q_points.size(); }
};

/// Real polynomial in q; coeffs[k] multiplies q^k.
struct Poly {
  std::vector<double> coeffs;

  int degree() const { return static_cast<int>(coeffs.size()) - 1; }
  bool is_zero() const { return coeffs.empty(); }
  Complex operator()(Complex q) const;
  /// Drops leading (highest-power) coefficients that are exactly zero.
  void trim();
};

Poly operator+(const Poly& a, const Poly& b);
Poly operator-(const Poly& a, const Poly& b);
Poly operator*(const Poly& a, const Poly& b);
Poly operator*(double s, const Poly& a);

struct Rational {
  Poly num;
  Poly den;  ///< monic

  Complex operator()(Complex q) const { return num(q) / den(q); }
  bool is_zero() const { return num.is_zero(); }
  bool strictly_proper() const { return num.is_zero() || num.degree() < den.degree(); }
};

struct RationalMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<Rational> entries;  ///< row-major

  Rational& operator()(int i, int j) { return entries[static_cast<std::size_t>(i * cols + j)]; }
  const Rational& operator()(int i, int j) const {
    return entries[static_cast<std::size_t>(i * cols + j)];
  }
  CMatrix evaluate(Complex q) const;
  BoolMatrix nonzero_pattern() const;
};

struct ExactDsf {
  RationalMatrix Q;
  RationalMatrix P;
  RationalMatrix H;
};

struct NetworkGraph {
  BoolMatrix q_adj;  ///< q_adj(i, j): edge j -> i
  BoolMatrix p_adj;
  /// Sampled capacity of every present Q edge, keyed by (i, j).
  std::map<std::pair<int, int>, std::vector<Complex>> capacities;

  long q_edge_count() const;
};

struct GraphMetrics {
  double precision = 1.0;
  double tpr = 0.0;
  long n_correct = 0;
  long n_est_edges = 0;
  long n_true_edges = 0;
};

/// 16 points on |q| = 2 plus 16 seeded points in the annulus 1.5 <= |q| <= 4.
std::vector<Complex> default_q_points(std::uint64_t seed);

/// Orthonormal basis of the null space of a full-row-rank C (n x (n-p)).
Matrix null_space_basis(const Matrix& C);

/// Evaluates (Q, P, H) of the model at the given points. Points too close to a
/// pole are nudged (bounded retries) and the used points are reported.
FreqSample dsf_from_state_space(const StateSpaceModel& model,
                                const std::vector<Complex>& q_points);

/// Characteristic polynomial and adjugate coefficients of (qI - M) via the
/// Faddeev-LeVerrier recursion: det(qI - M) = sum_k charpoly[k] q^k and
/// adj(qI - M) = sum_k adjugate[k] q^k.
struct LeverrierResult {
  Poly charpoly;
  std::vector<Matrix> adjugate;
};
LeverrierResult faddeev_leverrier(const Matrix& M);

/// Exact rational (Q, P, H); supports n - p <= 12.
ExactDsf exact_dsf_small(const StateSpaceModel& model);

NetworkGraph boolean_structure(const FreqSample& sample, double rel_tol = kDefaultStructureTol);

/// Structure read off the exact rational entries (nonzero numerators).
NetworkGraph boolean_structure(const ExactDsf& dsf);

GraphMetrics graph_compare(const NetworkGraph& est, const NetworkGraph& truth);
GraphMetrics graph_compare(const BoolMatrix& est, const BoolMatrix& truth);

}  // namespace dsfnet
