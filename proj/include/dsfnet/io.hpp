#pragma once

#include <iosfwd>
#include <map>
#include <string>

#include <json.hpp>

#include "dsfnet/bench.hpp"
#include "dsfnet/dsf.hpp"
#include "dsfnet/model.hpp"
#include "dsfnet/reconstruct.hpp"

namespace dsfnet::io {

using Json = nlohmann::ordered_json;

// Dataset CSV: optional leading "# key=value" comment lines (seed, snr_db),
// then the header t,y1..yp,u1..um and one row per sample k = 1..N holding
// y(t_k) and u(t_{k-1}). Values are written with 17 significant digits.
void write_dataset_csv(std::ostream& out, const Dataset& data);
Dataset read_dataset_csv(std::istream& in);
void save_dataset(const std::string& path, const Dataset& data);
Dataset load_dataset(const std::string& path);

Json model_to_json(const StateSpaceModel& model);
StateSpaceModel model_from_json(const Json& j);
Json ground_truth_to_json(const GroundTruth& truth);

Json dsf_to_json(const FreqSample& sample, const NetworkGraph& graph);
Json result_to_json(const ReconResult& result, const ReconConfig& cfg);
Json recon_config_to_json(const ReconConfig& cfg);
Json bench_config_to_json(const BenchConfig& cfg);

Json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

/// Flat key = value file; '#' starts a comment. Keys are unique.
using KeyValues = std::map<std::string, std::string>;
KeyValues read_key_values(std::istream& in);
KeyValues load_key_values(const std::string& path);

/// Applies recognised keys; throws ParseError naming the key on bad values
/// and on unknown keys.
void apply_bench_config(const KeyValues& kv, BenchConfig& cfg);
void apply_recon_config(const KeyValues& kv, ReconConfig& cfg);

Json matrix_to_json(const Matrix& M);
Matrix matrix_from_json(const Json& j, const std::string& field);
Json bool_matrix_to_json(const BoolMatrix& M);

}  // namespace dsfnet::io
