#include <doctest.h>

#include "dsfnet/reconstruct.hpp"
#include "oracles.hpp"

using namespace dsfnet;

namespace {

struct Problem {
  GroundTruth truth;
  Dataset data;
};

Problem make_problem(std::uint64_t seed, int p, int n, int N, double snr_db) {
  NetworkOptions net;
  net.p = p;
  net.n = n;
  net.m = p;
  net.density = 0.2;
  net.seed = seed;
  Problem pr{generate_random_network(net), {}};
  SimulateOptions so;
  so.N = N;
  so.seed = seed + 1000;
  so.snr_db = snr_db;
  so.unit_noise = true;
  pr.data = simulate(pr.truth.model, so);
  return pr;
}

ReconConfig quick_config(int n_states, MaskMode mode) {
  ReconConfig cfg;
  cfg.n_states = n_states;
  cfg.mask_mode = mode;
  cfg.outer_max_iter = 8;
  cfg.inner.max_iter = 50;
  return cfg;
}

}  // namespace

TEST_SUITE("reconstruct") {

TEST_CASE("w packing is column-major and invertible") {
  Rng rng(1);
  const Matrix A = gaussian_matrix(3, 3, rng), B = gaussian_matrix(3, 2, rng);
  const Vector w = pack_w(A, B);
  CHECK(w(w_index_A(3, 2, 1)) == A(2, 1));
  CHECK(w(w_index_B(3, 1, 1)) == B(1, 1));
  const auto [A2, B2] = unpack_w(w, 3, 2);
  CHECK(A2 == A);
  CHECK(B2 == B);
  CHECK_THROWS_AS(unpack_w(w, 3, 3), DimensionError);
}

TEST_CASE("convergence test is relative with an absolute floor") {
  Vector a(2), b(2);
  a << 10.0, 0.0;
  b << 10.0, 5e-4;
  CHECK(converged(a, b, 1e-4));
  b << 10.0, 2e-3;
  CHECK_FALSE(converged(a, b, 1e-4));
  a << 0.0, 0.0;
  b << 5e-5, 0.0;
  CHECK(converged(a, b, 1e-4));
}

TEST_CASE("diag_b output has an exactly diagonal P") {
  const auto pr = make_problem(3, 3, 6, 300, 20.0);
  const auto res = reconstruct(pr.data, quick_config(7, MaskMode::diag_b));
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) CHECK(res.B_hat(i, j) == 0.0);
  for (const auto& P : res.dsf.P)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        if (i != j) CHECK(P(i, j) == Complex(0.0, 0.0));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(res.network.p_adj(i, j) == (i == j));
}

TEST_CASE("p_diag output respects the zero pattern exactly") {
  const auto pr = make_problem(4, 3, 6, 300, 20.0);
  auto cfg = quick_config(7, MaskMode::p_diag);
  cfg.p22 = 1;
  const auto res = reconstruct(pr.data, cfg);
  const Mask mask = identifiability_mask(7, 3, 3, MaskMode::p_diag, 1);
  for (int i = 0; i < 7; ++i) {
    for (int j = 0; j < 7; ++j)
      if (!mask.free_A(i, j)) CHECK(res.A_hat(i, j) == 0.0);
    for (int j = 0; j < 3; ++j)
      if (!mask.free_B(i, j)) CHECK(res.B_hat(i, j) == 0.0);
  }
  // Diagonal P holds up to rounding through the hidden block.
  for (const auto& P : res.dsf.P) {
    const double scale = P.cwiseAbs().maxCoeff();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        if (i != j) CHECK(std::abs(P(i, j)) <= 1e-10 * scale);
  }
}

TEST_CASE("classical EM never lowers the observed loglik") {
  const auto pr = make_problem(5, 3, 5, 200, 10.0);
  auto cfg = quick_config(5, MaskMode::diag_b);
  cfg.classical_em = true;
  cfg.outer_max_iter = 10;
  cfg.outer_tol = 1e-12;
  const auto res = reconstruct(pr.data, cfg);
  REQUIRE(res.trace.size() >= 2);
  for (std::size_t k = 1; k < res.trace.size(); ++k) {
    const double prev = res.trace[k - 1].observed_loglik, cur = res.trace[k].observed_loglik;
    CHECK(cur >= prev - 1e-8 * std::max(1.0, std::abs(prev)));
  }
}

TEST_CASE("easy network is recovered at high SNR") {
  const auto pr = make_problem(11, 4, 6, 800, 40.0);
  ReconConfig cfg;
  cfg.n_states = 8;
  const auto res = reconstruct(pr.data, cfg);
  const auto metrics = graph_compare(res.network.q_adj, pr.truth.q_structure);
  CHECK(res.status != ReconStatus::diverged);
  CHECK(metrics.precision >= 0.99);
  CHECK(metrics.tpr >= 0.99);
  CHECK(res.structure_tol_used >= cfg.structure_tol);
  CHECK(std::isfinite(res.noise_ratio));
}

TEST_CASE("reconstruction is deterministic") {
  const auto pr = make_problem(12, 3, 5, 200, 20.0);
  const auto cfg = quick_config(6, MaskMode::diag_b);
  const auto a = reconstruct(pr.data, cfg), b = reconstruct(pr.data, cfg);
  CHECK(a.A_hat == b.A_hat);
  CHECK(a.B_hat == b.B_hat);
  CHECK(a.sigma2_hat == b.sigma2_hat);
  CHECK(a.network.q_adj == b.network.q_adj);
}

TEST_CASE("subspace start needs enough samples") {
  const auto pr = make_problem(13, 3, 5, 200, 20.0);
  const Mask mask = identifiability_mask(6, 3, 3, MaskMode::diag_b);
  const auto g = subspace_start(pr.data, mask, 6);
  REQUIRE(g.has_value());
  CHECK(g->w.size() == 6 * 9);
  CHECK(g->sigma2 > 0.0);
  for (std::size_t i = 0; i < mask.free.size(); ++i)
    if (!mask.free[i]) CHECK(g->w(static_cast<Eigen::Index>(i)) == 0.0);
  Dataset tiny = pr.data;
  tiny.Y = tiny.Y.topRows(8).eval();
  tiny.U = tiny.U.topRows(8).eval();
  CHECK_FALSE(subspace_start(tiny, mask, 6).has_value());
}

TEST_CASE("noise ratio of an unstable model is infinite") {
  const auto pr = make_problem(14, 2, 5, 50, 20.0);
  StateSpaceModel m = pr.truth.model;
  m.A *= 3.0 / spectral_radius(m.A);
  CHECK(std::isinf(output_noise_ratio(m, pr.data)));
  CHECK(std::isfinite(output_noise_ratio(pr.truth.model, pr.data)));
}

TEST_CASE("configuration errors surface before any work") {
  const auto pr = make_problem(15, 3, 5, 100, 20.0);
  auto cfg = quick_config(2, MaskMode::diag_b);
  CHECK_THROWS_AS(reconstruct(pr.data, cfg), DimensionError);
  cfg = quick_config(5, MaskMode::diag_b);
  Dataset wide = pr.data;
  wide.U = Matrix::Zero(100, 2);
  CHECK_THROWS_AS(reconstruct(wide, cfg), IdentifiabilityError);
  cfg.outer_max_iter = 0;
  CHECK_THROWS_AS(reconstruct(pr.data, cfg), Error);
  cfg = quick_config(5, MaskMode::diag_b);
  cfg.initial_model = pr.truth.model;  // 5 states but cfg says 5: fine
  CHECK_NOTHROW(reconstruct(pr.data, cfg));
  cfg.n_states = 6;
  CHECK_THROWS_AS(reconstruct(pr.data, cfg), DimensionError);
}

}
