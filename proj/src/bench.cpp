#include "dsfnet/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <sstream>
#include <thread>

namespace dsfnet {

namespace {

constexpr std::uint64_t kDataStream = 0xda7a;

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

}  // namespace

void BenchConfig::validate() const {
  if (n_networks < 1) throw Error("n_networks must be at least 1");
  if (p < 1 || n_true < p) throw Error("need 1 <= p <= n_true");
  if (n_assumed < p) throw Error("n_assumed must be at least p");
  if (m != p) throw IdentifiabilityError("benchmark needs m = p");
  if (N_samples < 2) throw Error("N_samples must be at least 2");
  if (snr_list.empty()) throw Error("snr_list is empty");
  if (parallelism < 1) throw Error("parallelism must be at least 1");
  if (oracle_start && n_assumed != n_true) {
    throw Error("oracle_start needs n_assumed = n_true");
  }
}

BenchRun run_bench_cell(const BenchConfig& cfg, int network, std::size_t snr_index) {
  BenchRun run;
  run.network = network;
  run.snr_db = cfg.snr_list.at(snr_index);
  run.network_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(network));
  run.data_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(network), kDataStream);
  const auto start = std::chrono::steady_clock::now();
  try {
    NetworkOptions net;
    net.p = cfg.p;
    net.n = cfg.n_true;
    net.m = cfg.m;
    net.density = cfg.density;
    net.seed = run.network_seed;
    const GroundTruth truth = generate_random_network(net);

    SimulateOptions sim;
    sim.N = cfg.N_samples;
    sim.noise = cfg.noise;
    sim.unit_noise = cfg.unit_noise;
    sim.seed = run.data_seed;
    StateSpaceModel model = truth.model;
    if (cfg.oracle_start) {
      model.sigma = 0.0;
    } else {
      sim.snr_db = run.snr_db;
    }
    const Dataset data = simulate(model, sim);

    ReconConfig rc = cfg.recon;
    rc.n_states = cfg.n_assumed;
    rc.seed = run.data_seed;
    if (cfg.oracle_start) rc.initial_model = model;
    const ReconResult result = reconstruct(data, rc);

    const GraphMetrics metrics = graph_compare(result.network.q_adj, truth.q_structure);
    run.precision = metrics.precision;
    run.tpr = metrics.tpr;
    run.n_est_edges = metrics.n_est_edges;
    run.n_true_edges = metrics.n_true_edges;
    run.status = to_string(result.status);
    run.outer_iterations = static_cast<int>(result.trace.size());
  } catch (const std::exception& e) {
    run.status = "error";
    run.error = e.what();
    run.precision = 0.0;
    run.tpr = 0.0;
  }
  run.failed = run.status == "error" || run.precision < cfg.failure_precision_threshold;
  run.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

BenchTable aggregate_runs(const BenchConfig& cfg, std::vector<BenchRun> runs) {
  std::sort(runs.begin(), runs.end(), [&](const BenchRun& a, const BenchRun& b) {
    if (a.network != b.network) return a.network < b.network;
    const auto ia = std::find(cfg.snr_list.begin(), cfg.snr_list.end(), a.snr_db);
    const auto ib = std::find(cfg.snr_list.begin(), cfg.snr_list.end(), b.snr_db);
    return ia < ib;
  });
  BenchTable table;
  long failed_total = 0;
  double rate_sum = 0.0;
  for (double snr : cfg.snr_list) {
    BenchRow row;
    row.snr_db = snr;
    double precision_sum = 0.0, tpr_sum = 0.0;
    for (const auto& run : runs) {
      if (run.snr_db != snr) continue;
      ++row.n_total;
      if (run.failed) {
        ++row.n_failed;
        continue;
      }
      precision_sum += run.precision;
      tpr_sum += run.tpr;
    }
    const int ok = row.n_total - row.n_failed;
    row.precision_mean = ok > 0 ? precision_sum / ok : 0.0;
    row.tpr_mean = ok > 0 ? tpr_sum / ok : 0.0;
    row.failure_rate = row.n_total > 0 ? static_cast<double>(row.n_failed) / row.n_total : 0.0;
    failed_total += row.n_failed;
    rate_sum += row.failure_rate;
    table.rows.push_back(row);
  }
  table.failure_rate = rate_sum / static_cast<double>(cfg.snr_list.size());
  table.failure_rate_pooled =
      runs.empty() ? 0.0 : static_cast<double>(failed_total) / static_cast<double>(runs.size());
  table.runs = std::move(runs);
  return table;
}

BenchTable run_benchmark(const BenchConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  const std::size_t n_snr = cfg.snr_list.size();
  const std::size_t cells = static_cast<std::size_t>(cfg.n_networks) * n_snr;
  std::vector<BenchRun> runs(cells);
  std::atomic<std::size_t> next{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (std::size_t c = next++; c < cells; c = next++) {
      runs[c] = run_bench_cell(cfg, static_cast<int>(c / n_snr), c % n_snr);
      if (progress) {
        std::lock_guard lock(progress_mutex);
        progress(runs[c]);
      }
    }
  };
  const int threads = std::min<int>(cfg.parallelism, static_cast<int>(cells));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return aggregate_runs(cfg, std::move(runs));
}

std::string format_table(const BenchTable& table) {
  std::ostringstream out;
  out << "            |";
  for (const auto& row : table.rows) out << fmt("%7.0f dB", row.snr_db) << " |";
  out << " Failure\n";
  out << "  Precision |";
  for (const auto& row : table.rows) out << fmt("%9.0f%%", 100.0 * row.precision_mean) << " |";
  out << fmt("%7.0f%%", 100.0 * table.failure_rate) << "\n";
  out << "  TPR       |";
  for (const auto& row : table.rows) out << fmt("%9.0f%%", 100.0 * row.tpr_mean) << " |";
  out << "\n";
  return out.str();
}

std::string table_csv(const BenchTable& table) {
  std::ostringstream out;
  out << "snr_db,precision_mean,tpr_mean,n_failed,n_total\n";
  for (const auto& row : table.rows) {
    out << fmt("%.17g", row.snr_db) << ',' << fmt("%.17g", row.precision_mean) << ','
        << fmt("%.17g", row.tpr_mean) << ',' << row.n_failed << ',' << row.n_total << '\n';
  }
  return out.str();
}

std::string runs_csv(const BenchTable& table) {
  std::ostringstream out;
  out << "network,snr_db,network_seed,data_seed,precision,tpr,n_est_edges,n_true_edges,failed,"
         "status,outer_iterations\n";
  for (const auto& r : table.runs) {
    out << r.network << ',' << fmt("%.17g", r.snr_db) << ',' << r.network_seed << ','
        << r.data_seed << ',' << fmt("%.17g", r.precision) << ',' << fmt("%.17g", r.tpr) << ','
        << r.n_est_edges << ',' << r.n_true_edges << ',' << (r.failed ? 1 : 0) << ',' << r.status
        << ',' << r.outer_iterations << '\n';
  }
  return out.str();
}

}  // namespace dsfnet
