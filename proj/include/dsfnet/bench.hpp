#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dsfnet/reconstruct.hpp"

namespace dsfnet {

struct BenchConfig {
  int n_networks = 10;
  int p = 10;
  int n_true = 25;
  int n_assumed = 30;
  int m = 10;
  double density = 0.08;
  int N_samples = 1000;
  std::vector<double> snr_list = {40.0};
  double failure_precision_threshold = 0.05;
  std::uint64_t seed = 1;
  int parallelism = 1;
  NoiseModel noise = NoiseModel::process_and_output;
  /// Hand the estimator data in units of the noise level.
  bool unit_noise = true;
  /// Noise-free data and reconstruction started from the true model.
  bool oracle_start = false;
  ReconConfig recon;

  void validate() const;
};

struct BenchRun {
  int network = 0;
  double snr_db = 0.0;
  std::uint64_t network_seed = 0;
  std::uint64_t data_seed = 0;
  double precision = 0.0;
  double tpr = 0.0;
  long n_est_edges = 0;
  long n_true_edges = 0;
  bool failed = false;
  std::string status;  ///< reconstruction status or "error"
  std::string error;
  int outer_iterations = 0;
  double wall_seconds = 0.0;
};

struct BenchRow {
  double snr_db = 0.0;
  double precision_mean = 0.0;
  double tpr_mean = 0.0;
  int n_failed = 0;
  int n_total = 0;
  double failure_rate = 0.0;
};

struct BenchTable {
  std::vector<BenchRow> rows;
  std::vector<BenchRun> runs;  ///< ordered by (network, snr index)
  /// Mean of the per-SNR failure rates.
  double failure_rate = 0.0;
  /// Failed runs over all runs.
  double failure_rate_pooled = 0.0;
};

/// Runs one (network, SNR) cell.
BenchRun run_bench_cell(const BenchConfig& cfg, int network, std::size_t snr_index);

/// Aggregates per-run records; independent of the order runs were produced in.
BenchTable aggregate_runs(const BenchConfig& cfg, std::vector<BenchRun> runs);

using ProgressFn = std::function<void(const BenchRun&)>;

BenchTable run_benchmark(const BenchConfig& cfg, const ProgressFn& progress = {});

/// Table shaped like the published results: rows Precision / TPR, one column
/// per SNR, plus the failure rate. Percentages are rounded for display.
std::string format_table(const BenchTable& table);

/// CSV with columns snr_db,precision_mean,tpr_mean,n_failed,n_total.
std::string table_csv(const BenchTable& table);

std::string runs_csv(const BenchTable& table);

}  // namespace dsfnet
