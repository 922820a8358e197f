#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dsfnet/bench.hpp"
#include "dsfnet/dsf.hpp"
#include "dsfnet/io.hpp"
#include "dsfnet/model.hpp"
#include "dsfnet/reconstruct.hpp"

namespace io = dsfnet::io;
using namespace dsfnet;

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Base RNG seed");
  cmd->add_option("--config", c.config, "key = value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "Output path");
}

std::string adjacency_text(const BoolMatrix& adj) {
  std::string s;
  for (Eigen::Index i = 0; i < adj.rows(); ++i) {
    for (Eigen::Index j = 0; j < adj.cols(); ++j) {
      if (j) s += ' ';
      s += adj(i, j) ? '1' : '0';
    }
    s += '\n';
  }
  return s;
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    io::write_text_file(path, text);
  }
}

// simulate -------------------------------------------------------------------

struct SimulateArgs {
  Common c;
  int p = 5, n = 8, m = -1, N = 500;
  double density = 0.15;
  std::optional<double> snr_db;
  std::string noise = "process_and_output";
  std::string model_path;
  std::string truth_out;
  bool raw_scale = false;
};

int run_simulate(const SimulateArgs& a, const CLI::App& cmd) {
  io::KeyValues kv;
  if (!a.c.config.empty()) kv = io::load_key_values(a.c.config);
  NetworkOptions net;
  net.p = a.p;
  net.n = a.n;
  net.m = a.m < 0 ? a.p : a.m;
  net.density = a.density;
  SimulateOptions sim;
  sim.N = a.N;
  sim.snr_db = a.snr_db;
  std::uint64_t seed = a.c.seed.value_or(1);
  std::string noise = a.noise;
  // Config values apply unless the same setting was given on the command line.
  for (const auto& [key, value] : kv) {
    const std::string where = "config key '" + key + "'";
    auto num = [&] {
      try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
      } catch (const std::exception&) {
        throw ParseError(where + ": expected a number, got '" + value + "'");
      }
    };
    if (key == "p") { if (!cmd.count("--p")) net.p = static_cast<int>(num()); }
    else if (key == "n") { if (!cmd.count("--n")) net.n = static_cast<int>(num()); }
    else if (key == "m") { if (!cmd.count("--m")) net.m = static_cast<int>(num()); }
    else if (key == "N_samples") { if (!cmd.count("--samples")) sim.N = static_cast<int>(num()); }
    else if (key == "density") { if (!cmd.count("--density")) net.density = num(); }
    else if (key == "snr_db") { if (!cmd.count("--snr")) sim.snr_db = num(); }
    else if (key == "seed") { if (!cmd.count("--seed")) seed = static_cast<std::uint64_t>(num()); }
    else if (key == "noise") { if (!cmd.count("--noise")) noise = value; }
    else throw ParseError("unknown config key '" + key + "'");
  }
  if (noise == "process_and_output") sim.noise = NoiseModel::process_and_output;
  else if (noise == "process_only") sim.noise = NoiseModel::process_only;
  else throw ParseError("noise: expected 'process_and_output' or 'process_only'");

  StateSpaceModel model;
  io::Json truth_json;
  if (!a.model_path.empty()) {
    model = io::model_from_json(io::read_json_file(a.model_path));
    truth_json = io::model_to_json(model);
  } else {
    net.seed = derive_seed(seed, 0x6e6574);
    const GroundTruth truth = generate_random_network(net);
    model = truth.model;
    truth_json = io::ground_truth_to_json(truth);
  }
  sim.seed = derive_seed(seed, 0xda7a);
  sim.unit_noise = !a.raw_scale;
  const Dataset data = simulate(model, sim);
  truth_json["simulated_sigma"] = sim.snr_db ? scale_noise_for_snr(model, data.U, *sim.snr_db, sim.seed, sim.noise)
                                             : model.sigma;
  std::ostringstream csv;
  io::write_dataset_csv(csv, data);
  emit(a.c.out, csv.str());
  if (!a.truth_out.empty()) io::write_text_file(a.truth_out, truth_json.dump(2) + "\n");
  return 0;
}

// reconstruct ----------------------------------------------------------------

struct ReconArgs {
  Common c;
  std::string data_path;
  int n_states = 0;
  std::string mask;
  int p22 = 0;
  int max_iter = 0;
  std::string init_model;
};

int run_reconstruct(const ReconArgs& a, const CLI::App& cmd) {
  ReconConfig cfg;
  if (!a.c.config.empty()) io::apply_recon_config(io::load_key_values(a.c.config), cfg);
  if (cmd.count("--n-states")) cfg.n_states = a.n_states;
  if (cmd.count("--mask")) {
    try {
      cfg.mask_mode = parse_mask_mode(a.mask);
    } catch (const ParseError& e) {
      throw CLI::ValidationError("--mask", e.what());
    }
  }
  if (cmd.count("--p22")) cfg.p22 = a.p22;
  if (cmd.count("--max-iter")) cfg.outer_max_iter = a.max_iter;
  if (a.c.seed) cfg.seed = *a.c.seed;
  if (cfg.n_states <= 0) throw CLI::ValidationError("--n-states", "number of states is required");
  if (!a.init_model.empty()) cfg.initial_model = io::model_from_json(io::read_json_file(a.init_model));

  const Dataset data = io::load_dataset(a.data_path);
  const ReconResult result = reconstruct(data, cfg);
  emit(a.c.out, io::result_to_json(result, cfg).dump(2) + "\n");
  std::cerr << "status " << to_string(result.status) << ", " << result.trace.size()
            << " outer iterations, " << result.network.q_edge_count() << " Q edges\n";
  return 0;
}

// benchmark ------------------------------------------------------------------

struct BenchArgs {
  Common c;
  std::optional<int> networks;
  std::vector<double> snr;
  std::optional<int> parallelism;
  std::string runs_out;
  std::string table_out;
  bool quiet = false;
};

int run_bench(const BenchArgs& a) {
  BenchConfig cfg;
  if (!a.c.config.empty()) io::apply_bench_config(io::load_key_values(a.c.config), cfg);
  if (a.c.seed) cfg.seed = *a.c.seed;
  if (a.networks) cfg.n_networks = *a.networks;
  if (!a.snr.empty()) cfg.snr_list = a.snr;
  if (a.parallelism) cfg.parallelism = *a.parallelism;
  cfg.validate();

  ProgressFn progress;
  if (!a.quiet) {
    progress = [](const BenchRun& r) {
      std::fprintf(stderr, "network %d  snr %5.1f dB  precision %.3f  tpr %.3f  %s  %.1fs\n",
                   r.network, r.snr_db, r.precision, r.tpr, r.status.c_str(), r.wall_seconds);
    };
  }
  const BenchTable table = run_benchmark(cfg, progress);
  const std::string text = format_table(table);
  std::cout << text;
  std::printf("failure rate %.4f (pooled %.4f)\n", table.failure_rate, table.failure_rate_pooled);
  if (!a.c.out.empty()) io::write_text_file(a.c.out, table_csv(table));
  if (!a.table_out.empty()) io::write_text_file(a.table_out, text);
  if (!a.runs_out.empty()) io::write_text_file(a.runs_out, runs_csv(table));
  return 0;
}

// dsf ------------------------------------------------------------------------

struct DsfArgs {
  Common c;
  std::string model_path;
  bool exact = false;
  double tol = kDefaultStructureTol;
};

int run_dsf(const DsfArgs& a) {
  const StateSpaceModel model = io::model_from_json(io::read_json_file(a.model_path));
  NetworkGraph graph;
  io::Json out;
  if (a.exact) {
    graph = boolean_structure(exact_dsf_small(model));
    out = io::Json{{"q_adj", io::bool_matrix_to_json(graph.q_adj)},
                   {"p_adj", io::bool_matrix_to_json(graph.p_adj)}};
  } else {
    const FreqSample sample = dsf_from_state_space(model, default_q_points(a.c.seed.value_or(0)));
    graph = boolean_structure(sample, a.tol);
    out = io::dsf_to_json(sample, graph);
  }
  std::cout << adjacency_text(graph.q_adj);
  if (!a.c.out.empty()) io::write_text_file(a.c.out, out.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse dynamic network reconstruction from input/output data"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate_cmd = app.add_subcommand("simulate", "Generate a random network and simulate data (CSV)");
  add_common(simulate_cmd, sim.c);
  simulate_cmd->add_option("--p", sim.p, "Measured states");
  simulate_cmd->add_option("--n", sim.n, "Total states");
  simulate_cmd->add_option("--m", sim.m, "Inputs (default p)");
  simulate_cmd->add_option("--samples", sim.N, "Number of samples N");
  simulate_cmd->add_option("--density", sim.density, "Edge density of A");
  simulate_cmd->add_option("--snr", sim.snr_db, "Target SNR in dB");
  simulate_cmd->add_option("--noise", sim.noise, "process_and_output | process_only");
  simulate_cmd->add_option("--model", sim.model_path, "Simulate this model (JSON) instead of a random one")
      ->check(CLI::ExistingFile);
  simulate_cmd->add_option("--truth-out", sim.truth_out, "Write the generating model (JSON)");
  simulate_cmd->add_flag("--raw-scale", sim.raw_scale,
                         "Keep the physical scale (default: Y and U divided by sigma)");

  ReconArgs rec;
  auto* recon_cmd = app.add_subcommand("reconstruct", "Estimate the network from a dataset");
  add_common(recon_cmd, rec.c);
  recon_cmd->add_option("--data", rec.data_path, "Dataset CSV")->required()->check(CLI::ExistingFile);
  recon_cmd->add_option("--n-states", rec.n_states, "Assumed state dimension");
  recon_cmd->add_option("--mask", rec.mask, "diag-b | p-diag | unconstrained");
  recon_cmd->add_option("--p22", rec.p22, "Size of the second output block for p-diag");
  recon_cmd->add_option("--max-iter", rec.max_iter, "Outer EM iterations");
  recon_cmd->add_option("--init-model", rec.init_model, "Starting model (JSON)")->check(CLI::ExistingFile);

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("benchmark", "Randomized reconstruction benchmark");
  add_common(bench_cmd, bench.c);
  bench_cmd->add_option("--networks", bench.networks, "Number of random networks");
  bench_cmd->add_option("--snr", bench.snr, "SNR list in dB")->delimiter(',');
  bench_cmd->add_option("--parallelism", bench.parallelism, "Worker threads");
  bench_cmd->add_option("--runs-out", bench.runs_out, "Per-run CSV");
  bench_cmd->add_option("--table-out", bench.table_out, "Aligned text table");
  bench_cmd->add_flag("--quiet", bench.quiet, "No per-run progress");

  DsfArgs dsf;
  auto* dsf_cmd = app.add_subcommand("dsf", "Dynamical structure function of a model");
  add_common(dsf_cmd, dsf.c);
  dsf_cmd->add_option("--model", dsf.model_path, "Model (JSON)")->required()->check(CLI::ExistingFile);
  dsf_cmd->add_flag("--exact", dsf.exact, "Exact rational path (n - p <= 12)");
  dsf_cmd->add_option("--tol", dsf.tol, "Relative structure threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (*simulate_cmd) return run_simulate(sim, *simulate_cmd);
    if (*recon_cmd) return run_reconstruct(rec, *recon_cmd);
    if (*bench_cmd) return run_bench(bench);
    if (*dsf_cmd) return run_dsf(dsf);
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}
