#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "telesee/common.hpp"
#include "telesee/entity.hpp"
#include "telesee/schema.hpp"
#include "telesee/text.hpp"

namespace telesee {

struct ValidationIssue {
  size_t line = 0;
  std::string doc_id;
  std::string message;

  std::string format() const {
    std::ostringstream os;
    os << "line " << line;
    if (!doc_id.empty()) os << " (doc_id '" << doc_id << "')";
    os << ": " << message;
    return os.str();
  }
};

struct LoadResult {
  std::vector<DocumentRecord> records;
  std::vector<ValidationIssue> issues;

  bool ok() const { return issues.empty(); }
  std::string issue_summary(size_t max_lines = 20) const {
    std::ostringstream os;
    for (size_t i = 0; i < issues.size() && i < max_lines; ++i)
      os << issues[i].format() << "\n";
    if (issues.size() > max_lines)
      os << "... and " << (issues.size() - max_lines) << " more\n";
    return os.str();
  }
};

inline void validate_record(const DocumentRecord& r, const CompiledSchema* schema,
                            size_t line, std::vector<ValidationIssue>& issues) {
  if (r.doc_id.empty()) issues.push_back({line, r.doc_id, "doc_id must be non-empty"});
  if (trim(r.text).empty()) issues.push_back({line, r.doc_id, "text must be non-empty"});
  if (!r.entities) return;
  for (const auto& e : r.entities->entities) {
    if (trim(e.name).empty())
      issues.push_back({line, r.doc_id, "entity name must be non-empty"});
    if (schema) {
      if (!e.type.empty() && !schema->has_type(e.type))
        issues.push_back({line, r.doc_id, "unknown entity type '" + e.type + "'"});
      for (const auto& [k, _] : e.attributes)
        if (!schema->has_key(k))
          issues.push_back({line, r.doc_id, "unknown attribute key '" + k + "'"});
    }
  }
}

// Parses a JSONL dataset file. Every issue carries its line number; callers
// decide whether issues are fatal. `require_gold` demands an entities array
// on every record (reference/training files).
inline LoadResult parse_dataset(const std::string& path, const CompiledSchema* schema,
                                bool require_gold = false) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);
  LoadResult result;
  std::set<std::string> seen_ids;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      result.issues.push_back({lineno, "", "malformed JSON"});
      continue;
    }
    DocumentRecord rec;
    try {
      rec = DocumentRecord::from_json(j);
    } catch (const std::exception& ex) {
      result.issues.push_back({lineno, j.value("doc_id", std::string{}), ex.what()});
      continue;
    }
    if (!seen_ids.insert(rec.doc_id).second)
      result.issues.push_back({lineno, rec.doc_id, "duplicate doc_id"});
    if (require_gold && !rec.entities)
      result.issues.push_back({lineno, rec.doc_id, "missing 'entities' array"});
    validate_record(rec, schema, lineno, result.issues);
    result.records.push_back(std::move(rec));
  }
  return result;
}

// Strict loader: throws with the aggregated report when anything is invalid.
inline std::vector<DocumentRecord> load_dataset(const std::string& path,
                                                const CompiledSchema* schema,
                                                bool require_gold = false) {
  LoadResult r = parse_dataset(path, schema, require_gold);
  if (!r.ok())
    throw ValidationError("dataset validation failed for " + path + ":\n" + r.issue_summary());
  return std::move(r.records);
}

inline void save_dataset(const std::string& path, const std::vector<DocumentRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset file: " + path);
  for (const auto& r : records) out << r.to_json().dump() << "\n";
}

struct CorpusStats {
  int64_t documents = 0;
  int64_t sentences = 0;
  int64_t words = 0;
  int64_t entities = 0;
  std::map<std::string, int64_t> key_histogram;

  nlohmann::json to_json() const {
    return {{"documents", documents},
            {"sentences", sentences},
            {"words", words},
            {"entities", entities},
            {"attribute_key_histogram", key_histogram}};
  }
};

// Counting rules: sentences split on ./?/! followed by whitespace or EOL;
// words are the normalized token multiset per sentence (duplicates kept).
inline CorpusStats stats(const std::vector<DocumentRecord>& records) {
  CorpusStats s;
  s.documents = static_cast<int64_t>(records.size());
  for (const auto& r : records) {
    auto sentences = split_sentences(r.text);
    s.sentences += static_cast<int64_t>(sentences.size());
    for (const auto& sent : sentences)
      s.words += static_cast<int64_t>(normalize_words(sent).size());
    if (r.entities) {
      s.entities += static_cast<int64_t>(r.entities->entities.size());
      for (const auto& e : r.entities->entities)
        for (const auto& [k, _] : e.attributes) ++s.key_histogram[k];
    }
  }
  return s;
}

// Deterministic split with largest-remainder rounding of the ratio sizes.
inline std::array<std::vector<DocumentRecord>, 3> split(
    const std::vector<DocumentRecord>& records, const std::array<double, 3>& ratios,
    uint64_t seed) {
  double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9)
    throw ValidationError("split ratios must sum to 1");
  for (double r : ratios)
    if (r < 0.0) throw ValidationError("split ratios must be non-negative");

  size_t n = records.size();
  std::array<size_t, 3> sizes{};
  std::array<std::pair<double, size_t>, 3> remainders;
  size_t assigned = 0;
  for (size_t i = 0; i < 3; ++i) {
    double exact = ratios[i] * static_cast<double>(n);
    sizes[i] = static_cast<size_t>(std::floor(exact + 1e-12));
    remainders[i] = {exact - std::floor(exact + 1e-12), i};
    assigned += sizes[i];
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (size_t i = 0; assigned < n; ++i, ++assigned) ++sizes[remainders[i % 3].second];

  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  std::array<std::vector<DocumentRecord>, 3> out;
  size_t pos = 0;
  for (size_t part = 0; part < 3; ++part)
    for (size_t i = 0; i < sizes[part]; ++i) out[part].push_back(records[order[pos++]]);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus generator. Template-built abstracts embedding 1-3 entities
// with 2-5 attribute keys each; every gold value string appears verbatim in
// the document text. Deterministic given the seed.
// ---------------------------------------------------------------------------

inline SchemaDef default_6g_schema_def() {
  SchemaDef def;
  def.version = "6gtech-v1";
  def.entity_types = {"6G-related technique"};
  def.attribute_keys = {"Technique functions",
                        "Benefits",
                        "Components and sub-systems",
                        "Associated technologies",
                        "Operating frequency",
                        "Key performance indicators",
                        "Application and deployment scenarios"};
  return def;
}

namespace synth_detail {

inline const std::vector<std::string>& technique_names() {
  static const std::vector<std::string> v = {
      "semantic communication",
      "integrated sensing and communication",
      "reconfigurable intelligent surface",
      "terahertz band transmission",
      "cell free massive mimo",
      "network slicing orchestration",
      "edge intelligence offloading",
      "digital twin network modeling",
      "holographic beamforming",
      "quantum key distribution",
      "non orthogonal multiple access",
      "intelligent spectrum sharing"};
  return v;
}

// Value phrase fragments per attribute key, combined 1-2 at a time.
inline const std::map<std::string, std::vector<std::string>>& value_pool() {
  static const std::map<std::string, std::vector<std::string>> pool = {
      {"Technique functions",
       {"extracts task relevant meaning from raw signals", "jointly senses and communicates over shared waveforms",
        "reshapes the wireless propagation environment", "aggregates distributed computing resources",
        "maps physical network state into virtual replicas", "coordinates beams across distributed antennas",
        "schedules spectrum across heterogeneous users", "secures key exchange over optical links"}},
      {"Benefits",
       {"improved spectral efficiency", "lower end to end latency", "enhanced physical layer security",
        "reduced backhaul congestion", "higher energy efficiency", "robust coverage at cell edges",
        "graceful degradation under mobility", "scalable deployment cost"}},
      {"Components and sub-systems",
       {"a knowledge base and semantic encoder", "dual functional radar communication transceivers",
        "passive reflecting element arrays", "distributed access points with central processing",
        "per slice resource controllers", "lightweight on device inference engines",
        "synchronized twin state estimators", "photon sources and single photon detectors"}},
      {"Associated technologies",
       {"deep joint source channel coding", "millimeter wave beamforming", "artificial noise injection",
        "federated learning", "massive antenna arrays", "software defined networking",
        "graph neural network optimizers", "alternating optimization solvers"}},
      {"Operating frequency",
       {"sub 6 ghz bands", "millimeter wave bands around 28 ghz", "terahertz bands above 100 ghz",
        "unlicensed 60 ghz spectrum", "dynamically shared mid band spectrum"}},
      {"Key performance indicators",
       {"bit error rate below target thresholds", "sensing accuracy and throughput trade off",
        "spectral efficiency in bits per hertz", "secrecy rate under eavesdropping",
        "latency percentiles under load", "coverage probability across the cell"}},
      {"Application and deployment scenarios",
       {"autonomous vehicle coordination", "industrial automation on factory floors",
        "immersive extended reality streaming", "smart city environmental monitoring",
        "remote surgery with haptic feedback", "dense urban hotspot coverage"}}};
  return pool;
}

inline const std::vector<std::string>& intro_templates() {
  static const std::vector<std::string> v = {
      "This paper investigates emerging techniques for future wireless networks.",
      "We study enabling technologies envisioned for next generation systems.",
      "Recent advances motivate a closer look at candidate network techniques.",
      "This work surveys promising directions for intelligent connectivity."};
  return v;
}

// Sentence template per attribute key; <v> is replaced by the value phrase.
inline const std::map<std::string, std::vector<std::string>>& key_templates() {
  static const std::map<std::string, std::vector<std::string>> t = {
      {"Technique functions", {"The technique <v>.", "Functionally it <v>."}},
      {"Benefits", {"Reported benefits include <v>.", "It promises <v>."}},
      {"Components and sub-systems", {"Its architecture builds on <v>.", "Core components include <v>."}},
      {"Associated technologies", {"It is commonly paired with <v>.", "The design leverages <v>."}},
      {"Operating frequency", {"Operation targets <v>.", "It operates in <v>."}},
      {"Key performance indicators", {"Evaluation focuses on <v>.", "Performance is tracked via <v>."}},
      {"Application and deployment scenarios", {"Deployments target <v>.", "It suits <v>."}}};
  return t;
}

inline std::string fill(const std::string& tmpl, const std::string& value) {
  std::string out = tmpl;
  size_t pos = out.find("<v>");
  out.replace(pos, 3, value);
  return out;
}

}  // namespace synth_detail

struct SynthBookkeeping {
  CorpusStats expected;  // counts tracked while generating, used as a test oracle
};

inline std::vector<DocumentRecord> synth_generate(const CompiledSchema& schema, int n_docs,
                                                  uint64_t seed,
                                                  SynthBookkeeping* bookkeeping = nullptr) {
  if (n_docs < 1) throw ValidationError("synth_generate: n_docs must be >= 1");
  using namespace synth_detail;
  Rng rng(seed);
  CorpusStats book;
  std::vector<DocumentRecord> docs;
  const auto& keys = schema.attribute_keys();
  const std::string& ent_type = schema.entity_types().front();

  for (int d = 0; d < n_docs; ++d) {
    std::vector<std::string> sentences;
    sentences.push_back(rng.pick(intro_templates()));

    int n_ent = static_cast<int>(rng.uniform_int(1, 3));
    std::vector<std::string> names = technique_names();
    rng.shuffle(names);

    EntitySet gold;
    gold.schema_version = schema.version();
    for (int e = 0; e < n_ent; ++e) {
      StructuredEntity ent;
      ent.name = names[static_cast<size_t>(e)];
      ent.type = ent_type;
      sentences.push_back("The study considers " + ent.name + " as a candidate technique.");

      int n_keys = static_cast<int>(rng.uniform_int(2, std::min<int64_t>(5, static_cast<int64_t>(keys.size()))));
      std::vector<std::string> chosen = keys;
      rng.shuffle(chosen);
      chosen.resize(static_cast<size_t>(n_keys));
      // Schema order keeps training targets deterministic.
      std::sort(chosen.begin(), chosen.end(), [&](const std::string& a, const std::string& b) {
        auto ia = std::find(keys.begin(), keys.end(), a);
        auto ib = std::find(keys.begin(), keys.end(), b);
        return ia < ib;
      });
      for (const auto& key : chosen) {
        const auto& values = value_pool().at(key);
        std::string value = rng.pick(values);
        ent.attributes[key] = value;
        sentences.push_back(fill(rng.pick(key_templates().at(key)), value));
      }
      gold.entities.push_back(std::move(ent));
    }

    DocumentRecord rec;
    rec.doc_id = "synth-" + std::to_string(seed) + "-" + std::to_string(d);
    rec.text = join(sentences, " ");
    rec.entities = std::move(gold);

    book.documents += 1;
    book.sentences += static_cast<int64_t>(sentences.size());
    for (const auto& s : sentences)
      book.words += static_cast<int64_t>(normalize_words(s).size());
    book.entities += static_cast<int64_t>(rec.entities->entities.size());
    for (const auto& e : rec.entities->entities)
      for (const auto& [k, _] : e.attributes) ++book.key_histogram[k];

    docs.push_back(std::move(rec));
  }
  if (bookkeeping) bookkeeping->expected = book;
  return docs;
}

}  // namespace telesee
