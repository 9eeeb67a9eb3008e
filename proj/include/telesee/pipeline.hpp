#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "telesee/dataset.hpp"
#include "telesee/entity.hpp"
#include "telesee/metric.hpp"
#include "telesee/model.hpp"
#include "telesee/schema.hpp"
#include "telesee/text.hpp"
#include "telesee/vocab.hpp"

namespace telesee {

// ---------------------------------------------------------------------------
// Stage prompts
// ---------------------------------------------------------------------------

// Stage 1: [pred_ent_names]
// Stage 2: [pred_type_and_attribute] [entity_name...]
// Stage 3: [pred_val] [entity_name...] [entity_type] [attribute_key]
struct StagePrompt {
  int stage = 0;
  std::vector<int> ids;
};

inline StagePrompt stage1_prompt(const Vocabulary& vocab) {
  return {1, {vocab.prompt_ent_names_id()}};
}

inline StagePrompt stage2_prompt(const Vocabulary& vocab, const std::string& entity_name) {
  StagePrompt p{2, {vocab.prompt_type_attr_id()}};
  auto name_ids = vocab.encode_text(entity_name);
  p.ids.insert(p.ids.end(), name_ids.begin(), name_ids.end());
  return p;
}

inline StagePrompt stage3_prompt(const Vocabulary& vocab, const CompiledSchema& schema,
                                 const std::string& entity_name, const std::string& type_display,
                                 const std::string& key_display) {
  StagePrompt p{3, {vocab.prompt_val_id()}};
  auto name_ids = vocab.encode_text(entity_name);
  p.ids.insert(p.ids.end(), name_ids.begin(), name_ids.end());
  p.ids.push_back(vocab.id_of(schema.token_for_type(type_display)));
  p.ids.push_back(vocab.id_of(schema.token_for_key(key_display)));
  return p;
}

// ---------------------------------------------------------------------------
// Extraction
// ---------------------------------------------------------------------------

struct StageTrace {
  size_t prompts = 0;
  size_t emitted_tokens = 0;  // includes terminating EOS steps
  double wall_ms = 0.0;
};

struct ExtractionTrace {
  size_t encoder_calls = 0;
  bool truncated_input = false;
  StageTrace stage[4];  // index 1..3
  size_t dropped_entities = 0;   // stage-2 produced no entity type
  size_t discarded_special_ids = 0;  // special ids stripped from name/value text
  size_t oov_tokens = 0;
  bool parallel = false;

  nlohmann::json to_json() const {
    nlohmann::json stages = nlohmann::json::array();
    for (int s = 1; s <= 3; ++s)
      stages.push_back({{"stage", s},
                        {"prompts", stage[s].prompts},
                        {"emitted_tokens", stage[s].emitted_tokens},
                        {"wall_ms", stage[s].wall_ms}});
    return {{"encoder_calls", encoder_calls},
            {"truncated_input", truncated_input},
            {"stages", stages},
            {"dropped_entities", dropped_entities},
            {"discarded_special_ids", discarded_special_ids},
            {"oov_tokens", oov_tokens},
            {"parallel", parallel}};
  }
};

struct ExtractOptions {
  bool parallel = true;
  int jobs = 0;  // 0 = hardware concurrency
  size_t stage1_max_tokens = 48;
  size_t stage2_max_tokens = 24;
  size_t stage3_max_tokens = 24;
};

namespace pipeline_detail {

// Words only: control/schema special ids inside generated text are dropped.
inline std::string detokenize_words(const Vocabulary& vocab, const std::vector<int>& ids,
                                    size_t* discarded, size_t* oov) {
  std::vector<std::string> words;
  for (int id : ids) {
    if (vocab.is_special(id)) {
      if (discarded) ++(*discarded);
      continue;
    }
    if (id == vocab.unk_id() && oov) ++(*oov);
    words.push_back(vocab.token_of(id));
  }
  return join(words, " ");
}

// Runs one decode per work item, either sequentially or across a small
// thread pool. Results land at their item index, so batch composition and
// execution order never affect the output. The first worker exception is
// rethrown after all threads join.
inline void run_batch(size_t n_items, bool parallel, int jobs,
                      const std::function<void(size_t)>& work) {
  if (n_items == 0) return;
  unsigned hw = std::thread::hardware_concurrency();
  size_t n_threads = parallel ? std::min<size_t>(n_items, jobs > 0 ? static_cast<size_t>(jobs)
                                                                   : (hw ? hw : 1))
                              : 1;
  if (n_threads <= 1) {
    for (size_t i = 0; i < n_items; ++i) work(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::exception_ptr> errors(n_threads);
  std::vector<std::thread> threads;
  for (size_t t = 0; t < n_threads; ++t)
    threads.emplace_back([&, t]() {
      try {
        for (size_t i = next.fetch_add(1); i < n_items; i = next.fetch_add(1)) work(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : threads) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace pipeline_detail

// Splits a raw stage-1 decode on the separator token, drops empty segments
// and collapses case-insensitive duplicates preserving first occurrence.
inline std::vector<std::string> parse_stage1_names(const Vocabulary& vocab,
                                                   const std::vector<int>& ids,
                                                   ExtractionTrace* trace = nullptr) {
  std::vector<std::vector<int>> segments(1);
  for (int id : ids) {
    if (id == vocab.ent_sep_id())
      segments.emplace_back();
    else
      segments.back().push_back(id);
  }
  std::vector<std::string> names;
  std::set<std::string> seen;
  for (const auto& seg : segments) {
    std::string name = pipeline_detail::detokenize_words(
        vocab, seg, trace ? &trace->discarded_special_ids : nullptr,
        trace ? &trace->oov_tokens : nullptr);
    if (name.empty()) continue;
    std::string folded = lowercase(name);
    if (seen.insert(folded).second) names.push_back(name);
  }
  return names;
}

inline std::vector<std::string> stage1_identify(const ModelParams& params,
                                                const EncoderOutput& enc, const Vocabulary& vocab,
                                                size_t max_tokens, ExtractionTrace* trace) {
  auto result = greedy_decode(params, enc, stage1_prompt(vocab).ids, vocab.bos_id(),
                              DecodeConstraint::unrestricted(vocab.eos_id()), max_tokens);
  if (trace) {
    ++trace->stage[1].prompts;
    trace->stage[1].emitted_tokens += result.steps;
  }
  return parse_stage1_names(vocab, result.ids, trace);
}

// Maps a raw constrained stage-2 decode back to schema display names. The
// first token must be an entity type; later key tokens are deduplicated and
// stray type tokens ignored. Empty decode -> nothing (entity is dropped).
inline std::optional<std::pair<std::string, std::vector<std::string>>> parse_stage2_elements(
    const Vocabulary& vocab, const CompiledSchema& schema, const std::vector<int>& ids) {
  if (ids.empty()) return std::nullopt;
  std::string type_display;
  std::vector<std::string> keys;
  std::set<std::string> seen_keys;
  for (size_t i = 0; i < ids.size(); ++i) {
    SchemaElement el = schema.decode_token(vocab.token_of(ids[i]));
    if (i == 0) {
      type_display = el.display;  // constraint guarantees a type token first
    } else if (el.kind == ElementKind::AttributeKey && seen_keys.insert(el.display).second) {
      keys.push_back(el.display);
    }
  }
  return std::make_pair(type_display, keys);
}

// Stage 2: constrained decode of the entity type plus attribute keys.
inline std::optional<std::pair<std::string, std::vector<std::string>>> stage2_keys(
    const ModelParams& params, const EncoderOutput& enc, const Vocabulary& vocab,
    const CompiledSchema& schema, const std::string& entity_name, size_t max_tokens,
    ExtractionTrace* trace) {
  auto result = greedy_decode(params, enc, stage2_prompt(vocab, entity_name).ids, vocab.bos_id(),
                              DecodeConstraint::first_token_type(vocab), max_tokens);
  if (trace) {
    ++trace->stage[2].prompts;
    trace->stage[2].emitted_tokens += result.steps;
  }
  return parse_stage2_elements(vocab, schema, result.ids);
}

// Stage 3: unconstrained value decode for one <entity, key> pair.
inline std::string stage3_values(const ModelParams& params, const EncoderOutput& enc,
                                 const Vocabulary& vocab, const CompiledSchema& schema,
                                 const std::string& entity_name, const std::string& type_display,
                                 const std::string& key_display, size_t max_tokens,
                                 ExtractionTrace* trace) {
  auto result = greedy_decode(params, enc,
                              stage3_prompt(vocab, schema, entity_name, type_display, key_display).ids,
                              vocab.bos_id(), DecodeConstraint::unrestricted(vocab.eos_id()),
                              max_tokens);
  if (trace) {
    ++trace->stage[3].prompts;
    trace->stage[3].emitted_tokens += result.steps;
  }
  return pipeline_detail::detokenize_words(vocab, result.ids,
                                           trace ? &trace->discarded_special_ids : nullptr,
                                           trace ? &trace->oov_tokens : nullptr);
}

// Full three-stage extraction for one document. The text is encoded exactly
// once; all stage-2 and stage-3 prompts decode against that shared encoding
// as one logical batch per stage.
inline std::pair<EntitySet, ExtractionTrace> extract(const ModelParams& params,
                                                     const Vocabulary& vocab,
                                                     const CompiledSchema& schema,
                                                     const std::string& text,
                                                     const ExtractOptions& opts = {}) {
  using clock = std::chrono::steady_clock;
  ExtractionTrace trace;
  trace.parallel = opts.parallel;

  EncoderOutput enc = encode(params, vocab.encode_text(text), vocab.pad_id());
  trace.encoder_calls = 1;
  trace.truncated_input = enc.truncated;

  auto t1 = clock::now();
  std::vector<std::string> names =
      stage1_identify(params, enc, vocab, opts.stage1_max_tokens, &trace);
  trace.stage[1].wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t1).count();

  EntitySet out;
  out.schema_version = schema.version();
  if (names.empty()) return {out, trace};

  // Stage 2 batch: one prompt per entity name.
  auto t2 = clock::now();
  std::vector<std::optional<std::pair<std::string, std::vector<std::string>>>> stage2(names.size());
  std::vector<ExtractionTrace> stage2_traces(names.size());
  pipeline_detail::run_batch(names.size(), opts.parallel, opts.jobs, [&](size_t i) {
    stage2[i] = stage2_keys(params, enc, vocab, schema, names[i], opts.stage2_max_tokens,
                            &stage2_traces[i]);
  });
  for (const auto& st : stage2_traces) {
    trace.stage[2].prompts += st.stage[2].prompts;
    trace.stage[2].emitted_tokens += st.stage[2].emitted_tokens;
  }
  trace.stage[2].wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t2).count();

  struct ValueJob {
    size_t entity;
    std::string key;
  };
  std::vector<size_t> kept;  // indices into names with a decoded type
  std::vector<ValueJob> jobs;
  for (size_t i = 0; i < names.size(); ++i) {
    if (!stage2[i]) {
      ++trace.dropped_entities;
      continue;
    }
    kept.push_back(i);
    for (const auto& key : stage2[i]->second) jobs.push_back({i, key});
  }

  // Stage 3 batch: one prompt per <entity, key> pair.
  auto t3 = clock::now();
  std::vector<std::string> values(jobs.size());
  std::vector<ExtractionTrace> stage3_traces(jobs.size());
  pipeline_detail::run_batch(jobs.size(), opts.parallel, opts.jobs, [&](size_t j) {
    values[j] = stage3_values(params, enc, vocab, schema, names[jobs[j].entity],
                              stage2[jobs[j].entity]->first, jobs[j].key, opts.stage3_max_tokens,
                              &stage3_traces[j]);
  });
  for (const auto& st : stage3_traces) {
    trace.stage[3].prompts += st.stage[3].prompts;
    trace.stage[3].emitted_tokens += st.stage[3].emitted_tokens;
    trace.discarded_special_ids += st.discarded_special_ids;
    trace.oov_tokens += st.oov_tokens;
  }
  trace.stage[3].wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t3).count();

  for (size_t i : kept) {
    StructuredEntity ent;
    ent.name = names[i];
    ent.type = stage2[i]->first;
    for (size_t j = 0; j < jobs.size(); ++j)
      if (jobs[j].entity == i) ent.attributes[jobs[j].key] = values[j];
    out.entities.push_back(std::move(ent));
  }
  return {out, trace};
}

// ---------------------------------------------------------------------------
// Training examples (teacher forcing)
// ---------------------------------------------------------------------------

// Stage-1 targets list gold names in document order (first mention); stage-2
// targets emit the type token then the entity's keys in schema declaration
// order; stage-3 targets are the raw value word ids.
inline std::vector<TrainExample> build_training_examples(const DocumentRecord& record,
                                                         const CompiledSchema& schema,
                                                         const Vocabulary& vocab) {
  if (!record.entities)
    throw ValidationError("build_training_examples: record '" + record.doc_id +
                          "' has no gold entities");
  for (const auto& e : record.entities->entities) {
    if (!schema.has_type(e.type))
      throw ValidationError("record '" + record.doc_id + "': unknown entity type '" + e.type + "'");
    for (const auto& [k, _] : e.attributes)
      if (!schema.has_key(k))
        throw ValidationError("record '" + record.doc_id + "': unknown attribute key '" + k + "'");
  }

  std::vector<int> src = vocab.encode_text(record.text);
  std::vector<TrainExample> out;

  // Document order = position of first mention; entities whose names never
  // appear verbatim keep their original relative order at the end.
  std::vector<size_t> order(record.entities->entities.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::string folded_text = lowercase(record.text);
  std::vector<size_t> mention(order.size());
  for (size_t i = 0; i < order.size(); ++i) {
    size_t pos = folded_text.find(lowercase(record.entities->entities[i].name));
    mention[i] = pos == std::string::npos ? std::numeric_limits<size_t>::max() : pos;
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return mention[a] < mention[b]; });

  TrainExample stage1;
  stage1.stage = 1;
  stage1.src_ids = src;
  stage1.prompt_ids = stage1_prompt(vocab).ids;
  for (size_t idx = 0; idx < order.size(); ++idx) {
    if (idx) stage1.target_ids.push_back(vocab.ent_sep_id());
    auto ids = vocab.encode_text(record.entities->entities[order[idx]].name);
    stage1.target_ids.insert(stage1.target_ids.end(), ids.begin(), ids.end());
  }
  out.push_back(std::move(stage1));

  for (size_t idx : order) {
    const auto& ent = record.entities->entities[idx];
    TrainExample stage2;
    stage2.stage = 2;
    stage2.src_ids = src;
    stage2.prompt_ids = stage2_prompt(vocab, ent.name).ids;
    stage2.target_ids.push_back(vocab.id_of(schema.token_for_type(ent.type)));
    for (const auto& key : schema.attribute_keys())
      if (ent.attributes.count(key))
        stage2.target_ids.push_back(vocab.id_of(schema.token_for_key(key)));
    out.push_back(std::move(stage2));

    for (const auto& key : schema.attribute_keys()) {
      auto it = ent.attributes.find(key);
      if (it == ent.attributes.end()) continue;
      TrainExample stage3;
      stage3.stage = 3;
      stage3.src_ids = src;
      stage3.prompt_ids = stage3_prompt(vocab, schema, ent.name, ent.type, key).ids;
      stage3.target_ids = vocab.encode_text(it->second);
      out.push_back(std::move(stage3));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Monolithic JSON baseline
// ---------------------------------------------------------------------------

namespace lmjson {

// Structural tokens the baseline vocabulary needs beyond corpus words.
inline std::vector<std::string> structural_tokens() {
  return {"{", "}", "[", "]", ":", ",", "\"", "entities", "name", "type", "attributes"};
}

inline void append_quoted(std::vector<std::string>& out, const std::string& text) {
  out.push_back("\"");
  for (auto& w : normalize_words(text)) out.push_back(w);
  out.push_back("\"");
}

// Token-level JSON rendering of an entity set; every name/key/value is
// spelled out as words, which is exactly the output-length contrast with the
// staged special-token pipeline.
inline std::vector<std::string> serialize_tokens(const EntitySet& set) {
  std::vector<std::string> out = {"{", "\"", "entities", "\"", ":", "["};
  for (size_t i = 0; i < set.entities.size(); ++i) {
    const auto& e = set.entities[i];
    if (i) out.push_back(",");
    out.push_back("{");
    out.push_back("\""); out.push_back("name"); out.push_back("\""); out.push_back(":");
    append_quoted(out, e.name);
    out.push_back(",");
    out.push_back("\""); out.push_back("type"); out.push_back("\""); out.push_back(":");
    append_quoted(out, e.type);
    out.push_back(",");
    out.push_back("\""); out.push_back("attributes"); out.push_back("\""); out.push_back(":");
    out.push_back("{");
    size_t k = 0;
    for (const auto& [key, value] : e.attributes) {
      if (k++) out.push_back(",");
      append_quoted(out, key);
      out.push_back(":");
      append_quoted(out, value);
    }
    out.push_back("}");
    out.push_back("}");
  }
  out.push_back("]");
  out.push_back("}");
  return out;
}

struct ParseResult {
  EntitySet entities;
  bool clean = true;  // false when repair/recovery kicked in
};

// Lenient parser over the decoded token stream. Tolerates missing closers
// and stray tokens; quoted spans end at the next quote or structural token.
// Spelled-out keys and types are canonicalized back to schema display names.
inline ParseResult parse_tokens(const std::vector<std::string>& tokens,
                                const CompiledSchema& schema) {
  std::map<std::string, std::string> key_by_words, type_by_words;
  for (const auto& k : schema.attribute_keys())
    key_by_words[join(normalize_words(k), " ")] = k;
  for (const auto& t : schema.entity_types())
    type_by_words[join(normalize_words(t), " ")] = t;
  auto canonical_key = [&](const std::string& words) {
    auto it = key_by_words.find(words);
    return it == key_by_words.end() ? words : it->second;
  };
  auto canonical_type = [&](const std::string& words) {
    auto it = type_by_words.find(words);
    return it == type_by_words.end() ? words : it->second;
  };

  ParseResult result;
  result.entities.schema_version = schema.version();
  size_t i = 0;
  auto is_structural = [](const std::string& t) {
    return t == "{" || t == "}" || t == "[" || t == "]" || t == ":" || t == "," || t == "\"";
  };
  auto read_quoted = [&]() -> std::string {
    std::vector<std::string> words;
    if (i < tokens.size() && tokens[i] == "\"") ++i;
    else result.clean = false;
    while (i < tokens.size() && !is_structural(tokens[i])) words.push_back(tokens[i++]);
    if (i < tokens.size() && tokens[i] == "\"") ++i;
    else result.clean = false;
    return join(words, " ");
  };

  while (i < tokens.size()) {
    // Find the next entity object: a '{' followed by a quoted "name".
    if (tokens[i] != "{") {
      ++i;
      continue;
    }
    size_t save = i++;
    StructuredEntity ent;
    bool got_name = false;
    while (i < tokens.size() && tokens[i] != "}") {
      if (tokens[i] == "\"") {
        std::string field = read_quoted();
        if (i < tokens.size() && tokens[i] == ":") ++i;
        if (field == "name") {
          ent.name = read_quoted();
          got_name = true;
        } else if (field == "type") {
          ent.type = canonical_type(read_quoted());
        } else if (field == "attributes") {
          if (i < tokens.size() && tokens[i] == "{") ++i;
          else result.clean = false;
          while (i < tokens.size() && tokens[i] != "}") {
            if (tokens[i] == ",") { ++i; continue; }
            if (tokens[i] != "\"") { ++i; result.clean = false; continue; }
            std::string key = read_quoted();
            if (i < tokens.size() && tokens[i] == ":") ++i;
            else result.clean = false;
            std::string value = read_quoted();
            if (!key.empty()) ent.attributes[canonical_key(key)] = value;
          }
          if (i < tokens.size()) ++i;  // closing '}'
          else result.clean = false;
        } else if (field == "entities") {
          if (i < tokens.size() && tokens[i] == "[") ++i;
          break;  // wrapper object, not an entity
        }
      } else {
        ++i;
      }
    }
    if (got_name && !trim(ent.name).empty()) {
      if (i < tokens.size() && tokens[i] == "}") ++i;
      else result.clean = false;
      result.entities.entities.push_back(std::move(ent));
    } else {
      i = save + 1;
    }
  }
  return result;
}

inline TrainExample build_training_example(const DocumentRecord& record,
                                           const Vocabulary& vocab) {
  if (!record.entities)
    throw ValidationError("lmjson: record '" + record.doc_id + "' has no gold entities");
  TrainExample ex;
  ex.stage = 0;
  ex.src_ids = vocab.encode_text(record.text);
  ex.target_ids = vocab.encode_tokens(serialize_tokens(*record.entities));
  return ex;
}

struct BaselineResult {
  EntitySet entities;
  bool clean = true;
  size_t emitted_tokens = 0;
};

// Single unconstrained decode of the whole JSON string, then lenient parse.
inline BaselineResult baseline_json_extract(const ModelParams& params, const Vocabulary& vocab,
                                            const CompiledSchema& schema, const std::string& text,
                                            size_t max_tokens = 0) {
  EncoderOutput enc = encode(params, vocab.encode_text(text), vocab.pad_id());
  size_t limit = max_tokens ? max_tokens : static_cast<size_t>(params.config.max_tgt_len) - 2;
  auto result = greedy_decode(params, enc, {}, vocab.bos_id(),
                              DecodeConstraint::unrestricted(vocab.eos_id()), limit);
  BaselineResult out;
  out.emitted_tokens = result.steps;
  auto parsed = parse_tokens(vocab.decode(result.ids), schema);
  out.entities = std::move(parsed.entities);
  out.clean = parsed.clean && result.ended_with_eos;
  return out;
}

}  // namespace lmjson

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainOptions {
  int epochs = 100;
  int batch_size = 8;
  OptimizerConfig optimizer;
  uint64_t seed = 7;
  int jobs = 1;
  bool dropout = false;  // applies config.dropout_rate when true
  // Called after each epoch (1-based) with the current parameters.
  std::function<void(int, const ModelParams&)> snapshot_hook;
  std::function<void(const struct EpochStats&)> log_hook;
};

struct EpochStats {
  int epoch = 0;
  double total = 0.0;             // summed cross-entropy over the epoch
  double stage_sums[4] = {0, 0, 0, 0};
  int64_t tokens = 0;
  double mean_per_token = 0.0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch},
            {"total", total},
            {"stage1", stage_sums[1]},
            {"stage2", stage_sums[2]},
            {"stage3", stage_sums[3]},
            {"monolithic", stage_sums[0]},
            {"tokens", tokens},
            {"mean_per_token", mean_per_token}};
  }
};

struct TrainResult {
  std::vector<EpochStats> history;
  int64_t steps = 0;
  int64_t skipped_steps = 0;
};

// Shuffled mini-batch training over pre-built examples. Per-stage sums and
// the reported total come from the same per-example losses, so additivity
// holds to reassociation error.
inline TrainResult train(ModelParams& params, const std::vector<TrainExample>& examples,
                         const Vocabulary& vocab, const TrainOptions& opts) {
  if (examples.empty()) throw ValidationError("train: no examples");
  OptimizerState state = OptimizerState::for_params(params);
  TrainResult result;
  std::vector<size_t> order(examples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    Rng rng(opts.seed ^ (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(epoch)));
    rng.shuffle(order);
    EpochStats stats;
    stats.epoch = epoch;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(opts.batch_size)) {
      size_t end = std::min(order.size(), start + static_cast<size_t>(opts.batch_size));
      std::vector<TrainExample> batch;
      batch.reserve(end - start);
      for (size_t i = start; i < end; ++i) batch.push_back(examples[order[i]]);
      uint64_t dropout_seed =
          opts.dropout ? (opts.seed ^ (static_cast<uint64_t>(result.steps) + 1) * 0x2545f4914f6cdd1dull)
                       : 0;
      LossResult loss = batch_loss(params, batch, vocab.pad_id(), vocab.bos_id(), vocab.eos_id(),
                                   true, opts.jobs, dropout_seed);
      if (!std::isfinite(loss.total))
        throw Error("train: non-finite loss at epoch " + std::to_string(epoch));
      for (size_t i = start; i < end; ++i)
        stats.stage_sums[examples[order[i]].stage] += loss.per_example[i - start];
      stats.total += loss.total;
      stats.tokens += loss.target_tokens;

      double scale = loss.target_tokens > 0 ? 1.0 / static_cast<double>(loss.target_tokens) : 0.0;
      for (double& g : loss.grads) g *= scale;
      if (train_step(params, state, loss.grads, opts.optimizer)) ++result.steps;
      else ++result.skipped_steps;
    }
    stats.mean_per_token =
        stats.tokens > 0 ? stats.total / static_cast<double>(stats.tokens) : 0.0;
    result.history.push_back(stats);
    if (opts.log_hook) opts.log_hook(stats);
    if (opts.snapshot_hook) opts.snapshot_hook(epoch, params);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Throughput benchmark
// ---------------------------------------------------------------------------

struct BenchResult {
  std::string system;
  size_t documents = 0;
  int repetitions = 0;
  double samples_per_sec = 0.0;        // median across repetitions
  std::vector<double> per_rep;
  double latency_ms_mean = 0.0;
  double latency_ms_p50 = 0.0;
  double latency_ms_p90 = 0.0;
  double latency_ms_max = 0.0;
  std::string schema_version;
  nlohmann::json extra;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"system", system},
                        {"documents", documents},
                        {"repetitions", repetitions},
                        {"samples_per_sec", samples_per_sec},
                        {"per_rep_samples_per_sec", per_rep},
                        {"latency_ms", {{"mean", latency_ms_mean},
                                        {"p50", latency_ms_p50},
                                        {"p90", latency_ms_p90},
                                        {"max", latency_ms_max}}},
                        {"schema_version", schema_version},
                        {"hardware", {{"threads", std::thread::hardware_concurrency()}}}};
    if (!extra.is_null()) j["extra"] = extra;
    return j;
  }
};

// Times `process(doc_index)` over the corpus. Per-document latencies come
// from the first repetition; samples/sec is the median across repetitions.
inline BenchResult bench_throughput(const std::string& system_name, size_t n_docs,
                                    int repetitions,
                                    const std::function<void(size_t)>& process) {
  if (n_docs == 0) throw ValidationError("bench: empty corpus");
  if (repetitions < 1) throw ValidationError("bench: repetitions must be >= 1");
  using clock = std::chrono::steady_clock;
  BenchResult result;
  result.system = system_name;
  result.documents = n_docs;
  result.repetitions = repetitions;

  std::vector<double> latencies;
  for (int rep = 0; rep < repetitions; ++rep) {
    auto rep_start = clock::now();
    for (size_t i = 0; i < n_docs; ++i) {
      auto doc_start = clock::now();
      process(i);
      if (rep == 0)
        latencies.push_back(
            std::chrono::duration<double, std::milli>(clock::now() - doc_start).count());
    }
    double secs = std::chrono::duration<double>(clock::now() - rep_start).count();
    result.per_rep.push_back(static_cast<double>(n_docs) / std::max(secs, 1e-9));
  }
  std::vector<double> sorted = result.per_rep;
  std::sort(sorted.begin(), sorted.end());
  result.samples_per_sec = sorted[sorted.size() / 2];

  std::sort(latencies.begin(), latencies.end());
  double sum = 0.0;
  for (double l : latencies) sum += l;
  result.latency_ms_mean = sum / static_cast<double>(latencies.size());
  result.latency_ms_p50 = latencies[latencies.size() / 2];
  result.latency_ms_p90 = latencies[(latencies.size() * 9) / 10];
  result.latency_ms_max = latencies.back();
  return result;
}

}  // namespace telesee
