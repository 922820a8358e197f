#include "dsfnet/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>
#include <vector>

namespace dsfnet::io {

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& text, const std::string& where) {
  const std::string t = trim(text);
  double v = 0.0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw ParseError(where + ": expected a number, got '" + text + "'");
  }
  return v;
}

long long parse_int(const std::string& text, const std::string& where) {
  const std::string t = trim(text);
  long long v = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw ParseError(where + ": expected an integer, got '" + text + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& text, const std::string& where) {
  const std::string t = trim(text);
  std::uint64_t v = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw ParseError(where + ": expected an unsigned integer, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& text, const std::string& where) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ParseError(where + ": expected a boolean, got '" + text + "'");
}

Json complex_matrix_to_json(const CMatrix& M) {
  Json data = Json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j) data.push_back({M(i, j).real(), M(i, j).imag()});
  return Json{{"rows", M.rows()}, {"cols", M.cols()}, {"data", std::move(data)}};
}

Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Vector vector_from_json(const Json& j, const std::string& field) {
  if (!j.is_array()) throw ParseError("field '" + field + "' must be an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ParseError("field '" + field + "' must hold numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

const Json& require(const Json& j, const std::string& field) {
  if (!j.contains(field)) throw ParseError("missing field '" + field + "'");
  return j.at(field);
}

std::string noise_name(NoiseModel noise) {
  return noise == NoiseModel::process_only ? "process_only" : "process_and_output";
}

std::string moments_name(RegressionMoments m) {
  return m == RegressionMoments::full_moments ? "full" : "means";
}

using Setter = std::function<void(const std::string& value, const std::string& where)>;

void apply_keys(const KeyValues& kv, const std::map<std::string, Setter>& setters) {
  for (const auto& [key, value] : kv) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw ParseError("unknown config key '" + key + "'");
    it->second(value, "config key '" + key + "'");
  }
}

std::map<std::string, Setter> recon_setters(ReconConfig& cfg) {
  std::map<std::string, Setter> s;
  s["n_states"] = [&](auto& v, auto& w) { cfg.n_states = static_cast<int>(parse_int(v, w)); };
  s["mask"] = [&](auto& v, auto& w) {
    try {
      cfg.mask_mode = parse_mask_mode(trim(v));
    } catch (const ParseError& e) {
      throw ParseError(w + ": " + e.what());
    }
  };
  s["p22"] = [&](auto& v, auto& w) { cfg.p22 = static_cast<int>(parse_int(v, w)); };
  s["outer_max_iter"] = [&](auto& v, auto& w) { cfg.outer_max_iter = static_cast<int>(parse_int(v, w)); };
  s["outer_tol"] = [&](auto& v, auto& w) { cfg.outer_tol = parse_double(v, w); };
  s["inner_max_iter"] = [&](auto& v, auto& w) { cfg.inner.max_iter = static_cast<int>(parse_int(v, w)); };
  s["inner_tol"] = [&](auto& v, auto& w) { cfg.inner.tol = parse_double(v, w); };
  s["prune_tol"] = [&](auto& v, auto& w) { cfg.inner.prune_tol = parse_double(v, w); };
  s["svd_eps"] = [&](auto& v, auto& w) { cfg.inner.eps = parse_double(v, w); };
  s["freeze_sigma2"] = [&](auto& v, auto& w) { cfg.inner.freeze_sigma2 = parse_bool(v, w); };
  s["sigma2_denominator"] = [&](auto& v, auto& w) {
    const auto t = trim(v);
    if (t == "total") cfg.inner.denominator = NoiseDenominator::total_observations;
    else if (t == "samples") cfg.inner.denominator = NoiseDenominator::sample_count;
    else throw ParseError(w + ": expected 'total' or 'samples'");
  };
  s["structure_tol"] = [&](auto& v, auto& w) { cfg.structure_tol = parse_double(v, w); };
  s["structure_z"] = [&](auto& v, auto& w) { cfg.structure_z = parse_double(v, w); };
  s["init"] = [&](auto& v, auto& w) {
    const auto t = trim(v);
    if (t == "subspace") cfg.init = InitMethod::subspace;
    else if (t == "diagonal") cfg.init = InitMethod::diagonal;
    else throw ParseError(w + ": expected 'subspace' or 'diagonal'");
  };
  s["gamma_update"] = [&](auto& v, auto& w) {
    const auto t = trim(v);
    if (t == "em") cfg.inner.gamma_update = GammaUpdate::em;
    else if (t == "fixed_point") cfg.inner.gamma_update = GammaUpdate::fixed_point;
    else throw ParseError(w + ": expected 'em' or 'fixed_point'");
  };
  s["init_sigma2"] = [&](auto& v, auto& w) { cfg.init_sigma2 = parse_double(v, w); };
  s["init_a"] = [&](auto& v, auto& w) { cfg.init_a = parse_double(v, w); };
  s["moments"] = [&](auto& v, auto& w) {
    const auto t = trim(v);
    if (t == "means") cfg.moments = RegressionMoments::smoothed_means;
    else if (t == "full") cfg.moments = RegressionMoments::full_moments;
    else throw ParseError(w + ": expected 'means' or 'full'");
  };
  s["warm_start_gamma"] = [&](auto& v, auto& w) { cfg.warm_start_gamma = parse_bool(v, w); };
  s["classical_em"] = [&](auto& v, auto& w) { cfg.classical_em = parse_bool(v, w); };
  return s;
}

}  // namespace

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  data.validate();
  out << "# seed=" << data.seed << '\n';
  if (data.snr_db) out << "# snr_db=" << format_double(*data.snr_db) << '\n';
  out << 't';
  for (int i = 1; i <= data.p(); ++i) out << ",y" << i;
  for (int i = 1; i <= data.m(); ++i) out << ",u" << i;
  out << '\n';
  for (int k = 0; k < data.N(); ++k) {
    out << (k + 1);
    for (int i = 0; i < data.p(); ++i) out << ',' << format_double(data.Y(k, i));
    for (int i = 0; i < data.m(); ++i) out << ',' << format_double(data.U(k, i));
    out << '\n';
  }
}

Dataset read_dataset_csv(std::istream& in) {
  Dataset data;
  std::string line;
  long line_no = 0;
  int p = -1, m = -1;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = "dataset line " + std::to_string(line_no);
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      const auto eq = t.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = trim(t.substr(1, eq - 1));
      const std::string value = trim(t.substr(eq + 1));
      if (key == "seed") data.seed = parse_u64(value, where);
      if (key == "snr_db") data.snr_db = parse_double(value, where);
      continue;
    }
    const auto fields = split(t, ',');
    if (p < 0) {
      if (fields.empty() || fields[0] != "t") throw ParseError(where + ": header must start with 't'");
      p = m = 0;
      for (std::size_t c = 1; c < fields.size(); ++c) {
        const auto& f = fields[c];
        const int expected_y = p + 1, expected_u = m + 1;
        if (m == 0 && f == "y" + std::to_string(expected_y)) ++p;
        else if (f == "u" + std::to_string(expected_u)) ++m;
        else throw ParseError(where + ": unexpected header column '" + f + "'");
      }
      if (p == 0) throw ParseError(where + ": header names no outputs");
      continue;
    }
    if (static_cast<int>(fields.size()) != 1 + p + m) {
      throw ParseError(where + ": expected " + std::to_string(1 + p + m) + " fields, got " +
                       std::to_string(fields.size()));
    }
    const long long t_index = parse_int(fields[0], where + " field t");
    if (t_index != static_cast<long long>(rows.size()) + 1) {
      throw ParseError(where + ": t must count up from 1");
    }
    std::vector<double> row(static_cast<std::size_t>(p + m));
    for (int c = 0; c < p + m; ++c) {
      const std::string name = c < p ? "y" + std::to_string(c + 1) : "u" + std::to_string(c - p + 1);
      row[static_cast<std::size_t>(c)] = parse_double(fields[static_cast<std::size_t>(c + 1)], where + " field " + name);
    }
    rows.push_back(std::move(row));
  }
  if (p < 0) throw ParseError("dataset: missing header");
  if (rows.empty()) throw ParseError("dataset: no samples");
  const auto N = static_cast<Eigen::Index>(rows.size());
  data.Y.resize(N, p);
  data.U.resize(N, m);
  for (Eigen::Index k = 0; k < N; ++k) {
    for (int c = 0; c < p; ++c) data.Y(k, c) = rows[k][c];
    for (int c = 0; c < m; ++c) data.U(k, c) = rows[k][p + c];
  }
  data.validate();
  return data;
}

void save_dataset(const std::string& path, const Dataset& data) {
  std::ostringstream out;
  write_dataset_csv(out, data);
  write_text_file(path, out.str());
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset '" + path + "'");
  return read_dataset_csv(in);
}

Json matrix_to_json(const Matrix& M) {
  Json data = Json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j) data.push_back(M(i, j));
  return Json{{"rows", M.rows()}, {"cols", M.cols()}, {"data", std::move(data)}};
}

Matrix matrix_from_json(const Json& j, const std::string& field) {
  if (!j.is_object()) throw ParseError("field '" + field + "' must be a matrix object");
  const auto rows = require(j, "rows").get<long>();
  const auto cols = require(j, "cols").get<long>();
  const Json& data = require(j, "data");
  if (rows < 0 || cols < 0 || !data.is_array() || static_cast<long>(data.size()) != rows * cols) {
    throw ParseError("field '" + field + "': data length does not match rows x cols");
  }
  Matrix M(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long c = 0; c < cols; ++c) {
      const Json& v = data[static_cast<std::size_t>(i * cols + c)];
      if (!v.is_number()) throw ParseError("field '" + field + "' must hold numbers");
      M(i, c) = v.get<double>();
    }
  return M;
}

Json bool_matrix_to_json(const BoolMatrix& M) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    std::string row;
    for (Eigen::Index j = 0; j < M.cols(); ++j) row += M(i, j) ? '1' : '0';
    rows.push_back(row);
  }
  return rows;
}

Json model_to_json(const StateSpaceModel& model) {
  return Json{{"format", "dsfnet-model"},
              {"version", 1},
              {"n", model.n()},
              {"p", model.p()},
              {"m", model.m()},
              {"A", matrix_to_json(model.A)},
              {"B", matrix_to_json(model.B)},
              {"C", matrix_to_json(model.C)},
              {"D", matrix_to_json(model.D)},
              {"sigma", model.sigma},
              {"m0", vector_to_json(model.m0)},
              {"R0", matrix_to_json(model.R0)}};
}

StateSpaceModel model_from_json(const Json& j) {
  StateSpaceModel model;
  model.A = matrix_from_json(require(j, "A"), "A");
  model.B = matrix_from_json(require(j, "B"), "B");
  model.C = matrix_from_json(require(j, "C"), "C");
  model.D = matrix_from_json(require(j, "D"), "D");
  model.sigma = require(j, "sigma").get<double>();
  model.m0 = vector_from_json(require(j, "m0"), "m0");
  model.R0 = matrix_from_json(require(j, "R0"), "R0");
  if (j.contains("n") && j["n"].get<int>() != model.n()) throw ParseError("field 'n' disagrees with A");
  if (j.contains("p") && j["p"].get<int>() != model.p()) throw ParseError("field 'p' disagrees with C");
  if (j.contains("m") && j["m"].get<int>() != model.m()) throw ParseError("field 'm' disagrees with B");
  try {
    model.validate();
  } catch (const Error& e) {
    throw ParseError(std::string("invalid model: ") + e.what());
  }
  return model;
}

Json ground_truth_to_json(const GroundTruth& truth) {
  Json j = model_to_json(truth.model);
  j["generator"] = Json{{"seed", truth.seed}, {"density", truth.density}, {"retries", truth.retries}};
  j["q_structure"] = bool_matrix_to_json(truth.q_structure);
  j["p_structure"] = bool_matrix_to_json(truth.p_structure);
  return j;
}

Json dsf_to_json(const FreqSample& sample, const NetworkGraph& graph) {
  Json points = Json::array();
  for (std::size_t k = 0; k < sample.size(); ++k) {
    points.push_back(Json{{"q", {sample.q_points[k].real(), sample.q_points[k].imag()}},
                          {"Q", complex_matrix_to_json(sample.Q[k])},
                          {"P", complex_matrix_to_json(sample.P[k])},
                          {"H", complex_matrix_to_json(sample.H[k])}});
  }
  return Json{{"q_adj", bool_matrix_to_json(graph.q_adj)},
              {"p_adj", bool_matrix_to_json(graph.p_adj)},
              {"samples", std::move(points)}};
}

Json recon_config_to_json(const ReconConfig& cfg) {
  return Json{{"n_states", cfg.n_states},
              {"mask", to_string(cfg.mask_mode)},
              {"p22", cfg.p22},
              {"outer_max_iter", cfg.outer_max_iter},
              {"outer_tol", cfg.outer_tol},
              {"inner_max_iter", cfg.inner.max_iter},
              {"inner_tol", cfg.inner.tol},
              {"prune_tol", cfg.inner.prune_tol},
              {"svd_eps", cfg.inner.eps},
              {"freeze_sigma2", cfg.inner.freeze_sigma2},
              {"sigma2_denominator",
               cfg.inner.denominator == NoiseDenominator::total_observations ? "total" : "samples"},
              {"gamma_update", cfg.inner.gamma_update == GammaUpdate::em ? "em" : "fixed_point"},
              {"structure_tol", cfg.structure_tol},
              {"structure_z", cfg.structure_z},
              {"init", cfg.init == InitMethod::subspace ? "subspace" : "diagonal"},
              {"seed", cfg.seed},
              {"init_sigma2", cfg.init_sigma2},
              {"init_a", cfg.init_a},
              {"moments", moments_name(cfg.moments)},
              {"warm_start_gamma", cfg.warm_start_gamma},
              {"classical_em", cfg.classical_em}};
}

Json bench_config_to_json(const BenchConfig& cfg) {
  Json snr = Json::array();
  for (double s : cfg.snr_list) snr.push_back(s);
  return Json{{"n_networks", cfg.n_networks},
              {"p", cfg.p},
              {"n_true", cfg.n_true},
              {"n_assumed", cfg.n_assumed},
              {"m", cfg.m},
              {"density", cfg.density},
              {"N_samples", cfg.N_samples},
              {"snr_list", std::move(snr)},
              {"failure_precision_threshold", cfg.failure_precision_threshold},
              {"seed", cfg.seed},
              {"parallelism", cfg.parallelism},
              {"noise", noise_name(cfg.noise)},
              {"unit_noise", cfg.unit_noise},
              {"oracle_start", cfg.oracle_start},
              {"recon", recon_config_to_json(cfg.recon)}};
}

Json result_to_json(const ReconResult& result, const ReconConfig& cfg) {
  Json trace = Json::array();
  for (const auto& t : result.trace) {
    trace.push_back(Json{{"iteration", t.iteration},
                         {"observed_loglik", t.observed_loglik},
                         {"sigma2", t.sigma2},
                         {"active", t.active},
                         {"gamma_max", t.gamma_max},
                         {"w_change", t.w_change},
                         {"inner_iterations", t.inner_iterations},
                         {"evidence_decreases", t.evidence_decreases},
                         {"damped", t.damped}});
  }
  return Json{{"format", "dsfnet-result"},
              {"version", 1},
              {"config", recon_config_to_json(cfg)},
              {"status", to_string(result.status)},
              {"A_hat", matrix_to_json(result.A_hat)},
              {"B_hat", matrix_to_json(result.B_hat)},
              {"sigma2_hat", result.sigma2_hat},
              {"m0_hat", vector_to_json(result.m0_hat)},
              {"R0_hat", matrix_to_json(result.R0_hat)},
              {"noise_ratio", std::isfinite(result.noise_ratio) ? Json(result.noise_ratio) : Json(nullptr)},
              {"structure_tol_used", result.structure_tol_used},
              {"q_adj", bool_matrix_to_json(result.network.q_adj)},
              {"p_adj", bool_matrix_to_json(result.network.p_adj)},
              {"dsf", dsf_to_json(result.dsf, result.network)},
              {"trace", std::move(trace)}};
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("'" + path + "': " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
  if (!out) throw Error("write to '" + path + "' failed");
}

KeyValues read_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string t = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ParseError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ParseError("config line " + std::to_string(line_no) + ": empty key");
    if (!kv.emplace(key, trim(t.substr(eq + 1))).second) {
      throw ParseError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
  }
  return kv;
}

KeyValues load_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config '" + path + "'");
  return read_key_values(in);
}

void apply_recon_config(const KeyValues& kv, ReconConfig& cfg) {
  auto setters = recon_setters(cfg);
  setters["seed"] = [&](auto& v, auto& w) { cfg.seed = parse_u64(v, w); };
  apply_keys(kv, setters);
}

void apply_bench_config(const KeyValues& kv, BenchConfig& cfg) {
  auto s = recon_setters(cfg.recon);
  s["n_networks"] = [&](auto& v, auto& w) { cfg.n_networks = static_cast<int>(parse_int(v, w)); };
  s["p"] = [&](auto& v, auto& w) { cfg.p = static_cast<int>(parse_int(v, w)); };
  s["n_true"] = [&](auto& v, auto& w) { cfg.n_true = static_cast<int>(parse_int(v, w)); };
  s["n_assumed"] = [&](auto& v, auto& w) { cfg.n_assumed = static_cast<int>(parse_int(v, w)); };
  s["m"] = [&](auto& v, auto& w) { cfg.m = static_cast<int>(parse_int(v, w)); };
  s["density"] = [&](auto& v, auto& w) { cfg.density = parse_double(v, w); };
  s["N_samples"] = [&](auto& v, auto& w) { cfg.N_samples = static_cast<int>(parse_int(v, w)); };
  s["snr_list"] = [&](auto& v, auto& w) {
    cfg.snr_list.clear();
    for (const auto& item : split(v, ',')) cfg.snr_list.push_back(parse_double(item, w));
  };
  s["failure_precision_threshold"] = [&](auto& v, auto& w) {
    cfg.failure_precision_threshold = parse_double(v, w);
  };
  s["seed"] = [&](auto& v, auto& w) { cfg.seed = parse_u64(v, w); };
  s["parallelism"] = [&](auto& v, auto& w) { cfg.parallelism = static_cast<int>(parse_int(v, w)); };
  s["noise"] = [&](auto& v, auto& w) {
    const auto t = trim(v);
    if (t == "process_and_output") cfg.noise = NoiseModel::process_and_output;
    else if (t == "process_only") cfg.noise = NoiseModel::process_only;
    else throw ParseError(w + ": expected 'process_and_output' or 'process_only'");
  };
  s["oracle_start"] = [&](auto& v, auto& w) { cfg.oracle_start = parse_bool(v, w); };
  s["unit_noise"] = [&](auto& v, auto& w) { cfg.unit_noise = parse_bool(v, w); };
  apply_keys(kv, s);
}

}  // namespace dsfnet::io
