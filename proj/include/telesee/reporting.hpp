#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "telesee/common.hpp"
#include "telesee/metric.hpp"

namespace telesee {

inline constexpr const char* kToolVersion = "0.1.0";

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write file: " + path);
  out << content;
}

inline nlohmann::json load_json_file(const std::string& path) {
  nlohmann::json j = nlohmann::json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw ValidationError("malformed JSON in " + path);
  return j;
}

// Every subcommand writes a manifest beside its primary output: effective
// config, input content hashes, produced files. No timestamps, so re-runs on
// identical inputs are byte-identical.
inline void write_manifest(const std::string& primary_output, const std::string& subcommand,
                           const nlohmann::json& effective_config,
                           const std::vector<std::string>& inputs,
                           const std::vector<std::string>& outputs) {
  nlohmann::json in_hashes = nlohmann::json::object();
  for (const auto& path : inputs)
    in_hashes[path] = "fnv1a64:" + to_hex(fnv1a64(read_file(path)));
  nlohmann::json manifest = {{"tool", "telesee"},
                             {"version", kToolVersion},
                             {"subcommand", subcommand},
                             {"config", effective_config},
                             {"inputs", in_hashes},
                             {"outputs", outputs}};
  write_file(primary_output + ".manifest.json", manifest.dump(2) + "\n");
}

// Run-config file: a flat JSON object whose fields provide defaults; CLI
// flags override. `merge` returns the effective value.
class RunConfig {
 public:
  RunConfig() : data_(nlohmann::json::object()) {}
  explicit RunConfig(const std::string& path) : data_(load_json_file(path)) {
    if (!data_.is_object()) throw ValidationError("run config must be a JSON object: " + path);
  }

  template <typename T>
  T merge(const std::string& key, const T& flag_value, bool flag_given) const {
    if (flag_given) return flag_value;
    if (data_.contains(key)) return data_.at(key).get<T>();
    return flag_value;
  }

  bool has(const std::string& key) const { return data_.contains(key); }
  const nlohmann::json& json() const { return data_; }

 private:
  nlohmann::json data_;
};

// ---------------------------------------------------------------------------
// Plot-ready tables distilled from eval/bench JSON files
// ---------------------------------------------------------------------------

struct EvalFileSummary {
  std::string system;
  std::string mode;
  double corpus_delta = 0.0;
  std::string schema_version;
  std::map<std::string, double> per_attribute;
};

inline EvalFileSummary parse_eval_report(const nlohmann::json& j, const std::string& fallback_name) {
  EvalFileSummary s;
  s.system = j.value("system", fallback_name);
  s.mode = j.at("mode").get<std::string>();
  s.corpus_delta = j.at("corpus_delta").get<double>();
  s.schema_version = j.value("schema_version", std::string{});
  if (j.contains("per_attribute"))
    for (const auto& [k, v] : j.at("per_attribute").items())
      s.per_attribute[k] = v.get<double>();
  return s;
}

struct ReportTables {
  std::string scores_csv;        // system,mode,delta
  std::string attributes_csv;    // system,attribute,score   (radar data)
  std::string correlation_csv;   // pair,pearson,spearman,degenerate
  std::string correlation_points_csv;  // system,multiprop,exact,approx
  std::string throughput_csv;    // system,samples_per_sec,multiprop_delta
  std::optional<CorrelationSummary> correlation;
};

// Builds the tabular data behind the six result panels: per-mode scores,
// per-attribute radar rows, cross-variant correlations, and the
// efficiency-vs-effectiveness scatter.
inline ReportTables build_report_tables(const std::vector<EvalFileSummary>& evals,
                                        const std::vector<nlohmann::json>& bench_files) {
  if (evals.empty() && bench_files.empty())
    throw ValidationError("report: no input files");

  std::set<std::string> versions;
  for (const auto& e : evals)
    if (!e.schema_version.empty()) versions.insert(e.schema_version);
  for (const auto& b : bench_files) {
    std::string v = b.value("schema_version", std::string{});
    if (!v.empty()) versions.insert(v);
  }
  if (versions.size() > 1)
    throw SchemaError("report: inputs come from mixed schema versions");

  ReportTables tables;
  std::ostringstream scores;
  scores << "system,mode,delta\n";
  for (const auto& e : evals)
    scores << e.system << "," << e.mode << "," << e.corpus_delta << "\n";
  tables.scores_csv = scores.str();

  std::ostringstream attrs;
  attrs << "system,attribute,score\n";
  for (const auto& e : evals)
    for (const auto& [key, score] : e.per_attribute)
      attrs << e.system << ",\"" << key << "\"," << score << "\n";
  tables.attributes_csv = attrs.str();

  // Correlation requires complete (exact, approx, multiprop) triples.
  std::map<std::string, SystemScores> by_system;
  for (const auto& e : evals) {
    auto& row = by_system[e.system];
    row.system = e.system;
    if (e.mode == "exact") row.exact = e.corpus_delta;
    else if (e.mode == "approx") row.approx = e.corpus_delta;
    else if (e.mode == "multiprop") row.multiprop = e.corpus_delta;
  }
  std::map<std::string, std::set<std::string>> modes_seen;
  for (const auto& e : evals) modes_seen[e.system].insert(e.mode);
  std::vector<SystemScores> complete;
  for (const auto& [name, modes] : modes_seen)
    if (modes.size() == 3) complete.push_back(by_system[name]);

  if (complete.size() >= 2) {
    tables.correlation = metric_correlation(complete);
    std::ostringstream corr;
    corr << "pair,pearson,spearman,degenerate\n";
    corr << "multiprop_vs_exact," << tables.correlation->pearson_exact << ","
         << tables.correlation->spearman_exact << "," << tables.correlation->degenerate << "\n";
    corr << "multiprop_vs_approx," << tables.correlation->pearson_approx << ","
         << tables.correlation->spearman_approx << "," << tables.correlation->degenerate << "\n";
    tables.correlation_csv = corr.str();

    std::ostringstream points;
    points << "system,multiprop,exact,approx\n";
    for (const auto& s : complete)
      points << s.system << "," << s.multiprop << "," << s.exact << "," << s.approx << "\n";
    tables.correlation_points_csv = points.str();
  }

  std::ostringstream tp;
  tp << "system,samples_per_sec,multiprop_delta\n";
  for (const auto& b : bench_files) {
    std::string system = b.at("system").get<std::string>();
    double sps = b.at("samples_per_sec").get<double>();
    double delta = std::numeric_limits<double>::quiet_NaN();
    if (b.contains("extra") && b["extra"].contains("multiprop_delta"))
      delta = b["extra"]["multiprop_delta"].get<double>();
    else
      for (const auto& e : evals)
        if (e.system == system && e.mode == "multiprop") delta = e.corpus_delta;
    tp << system << "," << sps << ",";
    if (std::isnan(delta)) tp << "";
    else tp << delta;
    tp << "\n";
  }
  tables.throughput_csv = tp.str();
  return tables;
}

}  // namespace telesee
