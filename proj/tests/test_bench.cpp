#include <doctest.h>

#include "dsfnet/bench.hpp"

using namespace dsfnet;

namespace {

BenchRun run(int network, double snr, double precision, double tpr, bool failed) {
  BenchRun r;
  r.network = network;
  r.snr_db = snr;
  r.precision = precision;
  r.tpr = tpr;
  r.failed = failed;
  return r;
}

BenchConfig small_config() {
  BenchConfig cfg;
  cfg.n_networks = 2;
  cfg.p = 3;
  cfg.n_true = 5;
  cfg.n_assumed = 6;
  cfg.m = 3;
  cfg.density = 0.2;
  cfg.N_samples = 300;
  cfg.snr_list = {40.0};
  cfg.recon.outer_max_iter = 10;
  return cfg;
}

}  // namespace

TEST_SUITE("bench") {

TEST_CASE("aggregation excludes failed runs from the means") {
  BenchConfig cfg;
  cfg.snr_list = {0.0, 40.0};
  const auto table = aggregate_runs(cfg, {run(1, 40.0, 1.0, 0.5, false), run(0, 0.0, 0.6, 0.4, false),
                                          run(1, 0.0, 0.01, 0.0, true), run(0, 40.0, 0.8, 0.9, false)});
  REQUIRE(table.rows.size() == 2);
  CHECK(table.rows[0].snr_db == 0.0);
  CHECK(table.rows[0].precision_mean == doctest::Approx(0.6));
  CHECK(table.rows[0].n_failed == 1);
  CHECK(table.rows[0].n_total == 2);
  CHECK(table.rows[1].precision_mean == doctest::Approx(0.9));
  CHECK(table.rows[1].tpr_mean == doctest::Approx(0.7));
  CHECK(table.failure_rate == doctest::Approx(0.25));
  CHECK(table.failure_rate_pooled == doctest::Approx(0.25));
  // Sorted by network, then SNR order.
  CHECK(table.runs[0].network == 0);
  CHECK(table.runs[0].snr_db == 0.0);
  CHECK(table.runs[3].network == 1);
  CHECK(table.runs[3].snr_db == 40.0);
}

TEST_CASE("CSV and table layouts") {
  BenchConfig cfg;
  cfg.snr_list = {20.0};
  const auto table = aggregate_runs(cfg, {run(0, 20.0, 0.75, 0.5, false)});
  CHECK(table_csv(table) == "snr_db,precision_mean,tpr_mean,n_failed,n_total\n20,0.75,0.5,0,1\n");
  const std::string t = format_table(table);
  CHECK(t.find("Precision") != std::string::npos);
  CHECK(t.find("75%") != std::string::npos);
  CHECK(t.find("20 dB") != std::string::npos);
  CHECK(runs_csv(table).rfind("network,snr_db,", 0) == 0);
}

TEST_CASE("config validation") {
  BenchConfig cfg = small_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.m = 2;
  CHECK_THROWS_AS(cfg.validate(), IdentifiabilityError);
  cfg = small_config();
  cfg.oracle_start = true;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = small_config();
  cfg.snr_list.clear();
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("results do not depend on thread count") {
  BenchConfig cfg = small_config();
  const auto serial = run_benchmark(cfg);
  cfg.parallelism = 2;
  const auto parallel = run_benchmark(cfg);
  CHECK(table_csv(serial) == table_csv(parallel));
  CHECK(runs_csv(serial) == runs_csv(parallel));
}

TEST_CASE("noise-free data started at the truth recovers the network") {
  BenchConfig cfg = small_config();
  cfg.n_assumed = cfg.n_true;
  cfg.oracle_start = true;
  const auto table = run_benchmark(cfg);
  for (const auto& r : table.runs) {
    CHECK(r.status != "error");
    CHECK(r.precision == 1.0);
    CHECK(r.tpr == 1.0);
  }
}

TEST_CASE("a bad cell is recorded as a failure, not thrown") {
  BenchConfig cfg = small_config();
  cfg.density = 0.01;  // generator refuses
  const BenchRun r = run_bench_cell(cfg, 0, 0);
  CHECK(r.status == "error");
  CHECK(r.failed);
  CHECK_FALSE(r.error.empty());
}

}
