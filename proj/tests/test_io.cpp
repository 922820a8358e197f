#include <doctest.h>

#include <sstream>

#include "dsfnet/io.hpp"
#include "oracles.hpp"

using namespace dsfnet;

namespace {

std::string error_text(const std::string& csv) {
  std::istringstream in(csv);
  try {
    io::read_dataset_csv(in);
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("dataset CSV round-trips bit for bit") {
  Rng rng(1);
  Dataset d = oracle::random_data(rng, 20, 3, 2);
  d.Y(0, 0) = 1.0 / 3.0;
  d.U(4, 1) = -1e-300;
  d.seed = 77;
  d.snr_db = 12.5;
  std::ostringstream out;
  io::write_dataset_csv(out, d);
  std::istringstream in(out.str());
  const Dataset back = io::read_dataset_csv(in);
  CHECK(back.Y == d.Y);
  CHECK(back.U == d.U);
  CHECK(back.seed == 77);
  REQUIRE(back.snr_db.has_value());
  CHECK(*back.snr_db == 12.5);
}

TEST_CASE("CSV errors name the line and field") {
  CHECK(error_text("t,y1,u1\n1,0.5,abc\n").find("line 2 field u1") != std::string::npos);
  CHECK(error_text("t,y1,u1\n1,0.5\n").find("expected 3 fields") != std::string::npos);
  CHECK(error_text("t,y1,u1\n2,0.5,1\n").find("count up") != std::string::npos);
  CHECK(error_text("x,y1\n").find("header") != std::string::npos);
  CHECK(error_text("t,y1,z\n").find("'z'") != std::string::npos);
  CHECK(error_text("t,y1\n").find("no samples") != std::string::npos);
  CHECK(error_text("").find("missing header") != std::string::npos);
  CHECK(error_text("t,u1\n1,2\n").find("no outputs") != std::string::npos);
}

TEST_CASE("model JSON round-trips") {
  Rng rng(2);
  const auto m = oracle::random_model(rng, 4, 2, 3);
  const auto j = io::model_to_json(m);
  const auto back = io::model_from_json(io::Json::parse(j.dump()));
  CHECK(back.A == m.A);
  CHECK(back.B == m.B);
  CHECK(back.C == m.C);
  CHECK(back.D == m.D);
  CHECK(back.sigma == m.sigma);
  CHECK(back.m0 == m.m0);
  CHECK(back.R0 == m.R0);
}

TEST_CASE("malformed model JSON is rejected") {
  Rng rng(3);
  auto j = io::model_to_json(oracle::random_model(rng, 3, 1, 1));
  auto missing = j;
  missing.erase("A");
  CHECK_THROWS_AS(io::model_from_json(missing), ParseError);
  auto shape = j;
  shape["A"]["rows"] = 2;
  CHECK_THROWS_AS(io::model_from_json(shape), ParseError);
  auto text = j;
  text["B"]["data"][0] = "x";
  CHECK_THROWS_AS(io::model_from_json(text), ParseError);
}

TEST_CASE("matrix JSON is row-major") {
  Matrix M(2, 3);
  M << 1, 2, 3, 4, 5, 6;
  const auto j = io::matrix_to_json(M);
  CHECK(j["rows"] == 2);
  CHECK(j["data"][1] == 2.0);
  CHECK(j["data"][3] == 4.0);
  CHECK(io::matrix_from_json(j, "M") == M);
}

TEST_CASE("key-value configs") {
  std::istringstream in("# comment\nn_states = 7\nmask = p-diag  # trailing\n\np22=1\n");
  const auto kv = io::read_key_values(in);
  ReconConfig cfg;
  io::apply_recon_config(kv, cfg);
  CHECK(cfg.n_states == 7);
  CHECK(cfg.mask_mode == MaskMode::p_diag);
  CHECK(cfg.p22 == 1);

  std::istringstream dup("a = 1\na = 2\n");
  CHECK_THROWS_WITH_AS(io::read_key_values(dup), doctest::Contains("duplicate key 'a'"), ParseError);
  std::istringstream noeq("just words\n");
  CHECK_THROWS_AS(io::read_key_values(noeq), ParseError);

  io::KeyValues unknown{{"bogus", "1"}};
  CHECK_THROWS_WITH_AS(io::apply_recon_config(unknown, cfg), doctest::Contains("bogus"), ParseError);
  io::KeyValues bad{{"outer_tol", "fast"}};
  CHECK_THROWS_WITH_AS(io::apply_recon_config(bad, cfg), doctest::Contains("outer_tol"), ParseError);
}

TEST_CASE("benchmark config keys") {
  BenchConfig cfg;
  io::apply_bench_config({{"snr_list", "0, 20,40"}, {"n_networks", "3"}, {"oracle_start", "true"},
                          {"n_states", "12"}, {"noise", "process_only"}},
                         cfg);
  CHECK(cfg.snr_list == std::vector<double>{0.0, 20.0, 40.0});
  CHECK(cfg.n_networks == 3);
  CHECK(cfg.oracle_start);
  CHECK(cfg.noise == NoiseModel::process_only);
  CHECK_THROWS_AS(io::apply_bench_config({{"noise", "loud"}}, cfg), ParseError);
}

TEST_CASE("result JSON carries the reconstruction and no timing") {
  ReconResult r;
  r.A_hat = Matrix::Identity(2, 2);
  r.B_hat = Matrix::Identity(2, 2);
  r.sigma2_hat = 0.5;
  r.m0_hat = Vector::Zero(2);
  r.R0_hat = Matrix::Identity(2, 2);
  r.gamma = Vector::Ones(8);
  const auto model = StateSpaceModel::with_identity_output(r.A_hat, r.B_hat, 0.7, 2);
  r.dsf = dsf_from_state_space(model, default_q_points(0));
  r.network = boolean_structure(r.dsf);
  r.noise_ratio = std::numeric_limits<double>::infinity();
  ReconConfig cfg;
  cfg.n_states = 2;
  const auto j = io::result_to_json(r, cfg);
  CHECK(j["format"] == "dsfnet-result");
  CHECK(j["noise_ratio"].is_null());
  const std::string text = j.dump();
  CHECK(text.find("wall") == std::string::npos);
  CHECK(text.find("seconds") == std::string::npos);
}

}
