// telesee: structured entity extraction toolkit CLI.
//
// Subcommands: schema compile, dataset {validate,stats,synth,split}, train,
// extract, eval, bench, report. Exit codes: 0 success, 1 runtime failure,
// 2 usage error, 3 validation/schema error.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "telesee/common.hpp"
#include "telesee/dataset.hpp"
#include "telesee/metric.hpp"
#include "telesee/model.hpp"
#include "telesee/pipeline.hpp"
#include "telesee/reporting.hpp"
#include "telesee/schema.hpp"
#include "telesee/text.hpp"
#include "telesee/vocab.hpp"

namespace ts = telesee;
using nlohmann::json;

namespace {

// Accepts either an uncompiled schema definition or an already-compiled
// registry file.
ts::CompiledSchema load_schema_any(const std::string& path) {
  json j = ts::load_json_file(path);
  if (j.contains("entity_types") && j["entity_types"].is_array() &&
      !j["entity_types"].empty() && j["entity_types"][0].is_object())
    return ts::CompiledSchema::from_json(j);
  return ts::compile_schema(ts::SchemaDef::from_json(j));
}

uint64_t resolve_seed(bool flag_given, uint64_t flag_value, const ts::RunConfig& cfg) {
  if (flag_given) return flag_value;
  if (cfg.has("seed")) return cfg.json().at("seed").get<uint64_t>();
  if (const char* env = std::getenv("TELESEE_SEED")) return std::strtoull(env, nullptr, 10);
  return flag_value;
}

std::vector<std::string> corpus_texts(const std::vector<ts::DocumentRecord>& records) {
  std::vector<std::string> texts;
  texts.reserve(records.size());
  for (const auto& r : records) texts.push_back(r.text);
  return texts;
}

// Extra (non-special) vocabulary entries every trained model carries: the
// baseline's structural JSON tokens plus the schema display-name words, so
// both systems share one vocabulary of equal size.
std::vector<std::string> vocab_extras(const ts::CompiledSchema& schema) {
  std::vector<std::string> extras = ts::lmjson::structural_tokens();
  for (const auto& t : schema.entity_types())
    for (auto& w : ts::normalize_words(t)) extras.push_back(w);
  for (const auto& k : schema.attribute_keys())
    for (auto& w : ts::normalize_words(k)) extras.push_back(w);
  return extras;
}

struct EvalOutcome {
  json report;
  std::string per_attribute_csv;
};

EvalOutcome run_eval(const std::vector<ts::DocumentRecord>& pred_docs,
                     const std::vector<ts::DocumentRecord>& ref_docs, const ts::MatchMode& mode,
                     const std::string& pooling, const std::string& system_name, int jobs = 1) {
  std::map<std::string, const ts::DocumentRecord*> pred_by_id;
  for (const auto& d : pred_docs) pred_by_id[d.doc_id] = &d;

  json per_doc = json::array();
  std::vector<std::string> missing;
  double delta_sum = 0.0;
  double pooled_matched = 0.0;
  int64_t pooled_k = 0;
  std::string schema_version;

  // Pair up the sets first; evaluation across documents can then run in
  // parallel and be merged in document order.
  std::vector<std::pair<ts::EntitySet, ts::EntitySet>> kept;
  kept.reserve(ref_docs.size());
  for (const auto& ref : ref_docs) {
    if (!ref.entities)
      throw ts::ValidationError("reference record '" + ref.doc_id + "' has no entities");
    ts::EntitySet pred_set;
    auto it = pred_by_id.find(ref.doc_id);
    if (it == pred_by_id.end() || !it->second->entities) {
      missing.push_back(ref.doc_id);
      pred_set.schema_version = ref.entities->schema_version;
    } else {
      pred_set = *it->second->entities;
    }
    if (ref.entities->schema_version) schema_version = *ref.entities->schema_version;
    kept.emplace_back(std::move(pred_set), *ref.entities);
  }

  std::vector<ts::EvalReport> reports(kept.size());
  ts::pipeline_detail::run_batch(kept.size(), jobs > 1, jobs, [&](size_t i) {
    reports[i] = ts::evaluate(kept[i].first, kept[i].second, mode);
  });

  // Corpus-wide matched pairs for the aggregated per-attribute table.
  std::vector<std::pair<const ts::StructuredEntity*, const ts::StructuredEntity*>> all_pairs;
  for (size_t i = 0; i < kept.size(); ++i) {
    const auto& rep = reports[i];
    delta_sum += rep.delta;
    pooled_matched += rep.delta * static_cast<double>(rep.k);
    pooled_k += static_cast<int64_t>(rep.k);
    per_doc.push_back({{"doc_id", ref_docs[i].doc_id},
                       {"delta", rep.delta},
                       {"m", rep.m},
                       {"n", rep.n},
                       {"k", rep.k}});
    for (const auto& pr : rep.per_pair)
      all_pairs.emplace_back(&kept[i].first.entities[pr.pred_index],
                             &kept[i].second.entities[pr.ref_index]);
  }

  double corpus_delta;
  if (pooling == "pooled")
    corpus_delta = pooled_k > 0 ? pooled_matched / static_cast<double>(pooled_k) : 1.0;
  else
    corpus_delta = ref_docs.empty() ? 1.0 : delta_sum / static_cast<double>(ref_docs.size());

  auto per_attr = ts::attribute_accuracy(all_pairs);

  EvalOutcome out;
  out.report = {{"system", system_name},
                {"mode", mode.name()},
                {"name_weight", mode.name_weight},
                {"pooling", pooling},
                {"corpus_delta", corpus_delta},
                {"documents", ref_docs.size()},
                {"schema_version", schema_version},
                {"missing_predictions", missing},
                {"per_doc", per_doc},
                {"per_attribute", per_attr}};
  std::ostringstream csv;
  csv << "attribute,score\n";
  for (const auto& [key, score] : per_attr) csv << "\"" << key << "\"," << score << "\n";
  out.per_attribute_csv = csv.str();
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"telesee: schema-guided structured entity extraction toolkit"};
  app.require_subcommand(1);

  try {
    // ---- schema compile ----
    auto* schema_cmd = app.add_subcommand("schema", "schema tooling");
    schema_cmd->require_subcommand(1);
    auto* compile_cmd = schema_cmd->add_subcommand("compile", "compile a schema into its token registry");
    std::string sc_in, sc_out;
    compile_cmd->add_option("--in", sc_in, "schema JSON")->required();
    compile_cmd->add_option("--out", sc_out, "compiled registry output")->required();
    compile_cmd->callback([&]() {
      json def = ts::load_json_file(sc_in);
      ts::CompiledSchema schema = ts::compile_schema(ts::SchemaDef::from_json(def));
      json out = schema.to_json();
      out["token_savings"] = ts::token_savings(schema).to_json();
      ts::write_file(sc_out, out.dump(2) + "\n");
      ts::write_manifest(sc_out, "schema compile", {{"in", sc_in}, {"out", sc_out}}, {sc_in},
                         {sc_out});
      std::cout << "compiled " << schema.entity_types().size() << " entity types, "
                << schema.attribute_keys().size() << " attribute keys\n";
    });

    // ---- dataset ----
    auto* dataset_cmd = app.add_subcommand("dataset", "dataset tooling");
    dataset_cmd->require_subcommand(1);

    auto* val_cmd = dataset_cmd->add_subcommand("validate", "validate a JSONL dataset");
    std::string dv_in, dv_schema;
    val_cmd->add_option("--in", dv_in)->required();
    val_cmd->add_option("--schema", dv_schema)->required();
    val_cmd->callback([&]() {
      ts::CompiledSchema schema = load_schema_any(dv_schema);
      ts::LoadResult result = ts::parse_dataset(dv_in, &schema, true);
      std::cout << "records: " << result.records.size() << ", issues: " << result.issues.size()
                << "\n";
      if (!result.ok()) {
        std::cerr << result.issue_summary(50);
        throw ts::ValidationError("dataset validation failed");
      }
    });

    auto* stats_cmd = dataset_cmd->add_subcommand("stats", "corpus statistics");
    std::string dst_in, dst_out, dst_schema;
    int64_t dst_expect_sentences = -1, dst_expect_words = -1;
    stats_cmd->add_option("--in", dst_in)->required();
    stats_cmd->add_option("--out", dst_out);
    stats_cmd->add_option("--schema", dst_schema);
    stats_cmd->add_option("--expect-sentences", dst_expect_sentences,
                          "reference sentence total to print beside the measured one");
    stats_cmd->add_option("--expect-words", dst_expect_words,
                          "reference word total to print beside the measured one");
    stats_cmd->callback([&]() {
      std::optional<ts::CompiledSchema> schema;
      if (!dst_schema.empty()) schema = load_schema_any(dst_schema);
      ts::LoadResult result = ts::parse_dataset(dst_in, schema ? &*schema : nullptr, false);
      if (!result.ok()) {
        std::cerr << result.issue_summary(50);
        throw ts::ValidationError("dataset validation failed");
      }
      ts::CorpusStats s = ts::stats(result.records);
      std::cout << "documents: " << s.documents << "\nsentences: " << s.sentences
                << "\nwords: " << s.words << "\nentities: " << s.entities << "\n";
      if (dst_expect_sentences >= 0 || dst_expect_words >= 0) {
        if (dst_expect_sentences >= 0)
          std::cout << "reference sentences: " << dst_expect_sentences << " (measured "
                    << s.sentences << ")\n";
        if (dst_expect_words >= 0)
          std::cout << "reference words: " << dst_expect_words << " (measured " << s.words
                    << ")\n";
        std::cout << "note: counting rules differ between tools; this tool splits sentences on "
                     ".?! and counts normalized word tokens, so totals are comparable but not "
                     "expected to match exactly.\n";
      }
      if (!dst_out.empty()) {
        json out = s.to_json();
        if (dst_expect_sentences >= 0) out["reference_sentences"] = dst_expect_sentences;
        if (dst_expect_words >= 0) out["reference_words"] = dst_expect_words;
        ts::write_file(dst_out, out.dump(2) + "\n");
        ts::write_manifest(dst_out, "dataset stats", {{"in", dst_in}}, {dst_in}, {dst_out});
      }
    });

    auto* synth_cmd = dataset_cmd->add_subcommand("synth", "generate a synthetic corpus");
    int synth_n = 200;
    uint64_t synth_seed = 7;
    std::string synth_out, synth_schema_in, synth_schema_out;
    synth_cmd->add_option("--n", synth_n);
    auto* synth_seed_opt = synth_cmd->add_option("--seed", synth_seed);
    synth_cmd->add_option("--out", synth_out)->required();
    synth_cmd->add_option("--schema", synth_schema_in, "schema to draw keys from");
    synth_cmd->add_option("--out-schema", synth_schema_out, "also write the compiled schema");
    synth_cmd->callback([&]() {
      uint64_t seed = resolve_seed(synth_seed_opt->count() > 0, synth_seed, ts::RunConfig{});
      ts::CompiledSchema schema = synth_schema_in.empty()
                                      ? ts::compile_schema(ts::default_6g_schema_def())
                                      : load_schema_any(synth_schema_in);
      auto docs = ts::synth_generate(schema, synth_n, seed);
      ts::save_dataset(synth_out, docs);
      std::vector<std::string> outputs = {synth_out};
      if (!synth_schema_out.empty()) {
        json out = schema.to_json();
        out["token_savings"] = ts::token_savings(schema).to_json();
        ts::write_file(synth_schema_out, out.dump(2) + "\n");
        outputs.push_back(synth_schema_out);
      }
      ts::write_manifest(synth_out, "dataset synth",
                         {{"n", synth_n}, {"seed", seed}}, {}, outputs);
      std::cout << "wrote " << docs.size() << " documents to " << synth_out << "\n";
    });

    auto* split_cmd = dataset_cmd->add_subcommand("split", "train/dev/test split");
    std::string sp_in, sp_ratios = "0.8,0.1,0.1", sp_prefix;
    uint64_t sp_seed = 7;
    split_cmd->add_option("--in", sp_in)->required();
    split_cmd->add_option("--ratios", sp_ratios);
    auto* sp_seed_opt = split_cmd->add_option("--seed", sp_seed);
    split_cmd->add_option("--out-prefix", sp_prefix)->required();
    split_cmd->callback([&]() {
      uint64_t seed = resolve_seed(sp_seed_opt->count() > 0, sp_seed, ts::RunConfig{});
      std::array<double, 3> ratios{};
      {
        std::stringstream ss(sp_ratios);
        std::string part;
        size_t i = 0;
        while (std::getline(ss, part, ',') && i < 3) ratios[i++] = std::stod(part);
        if (i != 3) throw ts::UsageError("--ratios wants three comma-separated numbers");
      }
      ts::LoadResult loaded = ts::parse_dataset(sp_in, nullptr, false);
      if (!loaded.ok()) {
        std::cerr << loaded.issue_summary(50);
        throw ts::ValidationError("dataset validation failed");
      }
      auto parts = ts::split(loaded.records, ratios, seed);
      const char* names[3] = {"train", "dev", "test"};
      std::vector<std::string> outputs;
      for (size_t i = 0; i < 3; ++i) {
        std::string path = sp_prefix + "." + names[i] + ".jsonl";
        ts::save_dataset(path, parts[i]);
        outputs.push_back(path);
        std::cout << names[i] << ": " << parts[i].size() << " -> " << path << "\n";
      }
      ts::write_manifest(outputs[0], "dataset split",
                         {{"ratios", sp_ratios}, {"seed", seed}}, {sp_in}, outputs);
    });

    // ---- train ----
    auto* train_cmd = app.add_subcommand("train", "train a model");
    std::string tr_data, tr_schema, tr_out, tr_out_vocab, tr_system = "telesee", tr_config;
    std::string tr_snapshot_prefix;
    int tr_epochs = 100, tr_batch = 8, tr_warmup = 100, tr_jobs = 1, tr_min_count = 1;
    int tr_snapshot_every = 0, tr_log_every = 10;
    double tr_lr = 0.0001, tr_wd = 0.01, tr_dropout = 0.0;
    int tr_d_model = 64, tr_heads = 4, tr_enc_layers = 2, tr_dec_layers = 2, tr_ffn = 128;
    int tr_max_src = 192, tr_max_tgt = 160;
    uint64_t tr_seed = 7;
    train_cmd->add_option("--data", tr_data)->required();
    train_cmd->add_option("--schema", tr_schema)->required();
    train_cmd->add_option("--out", tr_out)->required();
    train_cmd->add_option("--out-vocab", tr_out_vocab);
    train_cmd->add_option("--system", tr_system)->check(CLI::IsMember({"telesee", "lm-json"}));
    train_cmd->add_option("--config", tr_config, "run-config JSON (flags override)");
    auto* tr_epochs_opt = train_cmd->add_option("--epochs", tr_epochs);
    auto* tr_batch_opt = train_cmd->add_option("--batch-size", tr_batch);
    auto* tr_lr_opt = train_cmd->add_option("--lr", tr_lr);
    auto* tr_wd_opt = train_cmd->add_option("--weight-decay", tr_wd);
    auto* tr_warmup_opt = train_cmd->add_option("--warmup", tr_warmup);
    auto* tr_seed_opt = train_cmd->add_option("--seed", tr_seed);
    train_cmd->add_option("--jobs", tr_jobs);
    train_cmd->add_option("--min-count", tr_min_count);
    auto* tr_dm_opt = train_cmd->add_option("--d-model", tr_d_model);
    auto* tr_h_opt = train_cmd->add_option("--heads", tr_heads);
    auto* tr_el_opt = train_cmd->add_option("--enc-layers", tr_enc_layers);
    auto* tr_dl_opt = train_cmd->add_option("--dec-layers", tr_dec_layers);
    auto* tr_ffn_opt = train_cmd->add_option("--ffn", tr_ffn);
    auto* tr_ms_opt = train_cmd->add_option("--max-src", tr_max_src);
    auto* tr_mt_opt = train_cmd->add_option("--max-tgt", tr_max_tgt);
    auto* tr_do_opt = train_cmd->add_option("--dropout", tr_dropout);
    train_cmd->add_option("--snapshot-every", tr_snapshot_every);
    train_cmd->add_option("--snapshot-prefix", tr_snapshot_prefix);
    train_cmd->add_option("--log-every", tr_log_every);
    train_cmd->callback([&]() {
      ts::RunConfig cfg = tr_config.empty() ? ts::RunConfig{} : ts::RunConfig{tr_config};
      uint64_t seed = resolve_seed(tr_seed_opt->count() > 0, tr_seed, cfg);
      int epochs = cfg.merge("epochs", tr_epochs, tr_epochs_opt->count() > 0);
      int batch = cfg.merge("batch_size", tr_batch, tr_batch_opt->count() > 0);
      double lr = cfg.merge("lr", tr_lr, tr_lr_opt->count() > 0);
      double wd = cfg.merge("weight_decay", tr_wd, tr_wd_opt->count() > 0);
      int warmup = cfg.merge("warmup", tr_warmup, tr_warmup_opt->count() > 0);

      ts::CompiledSchema schema = load_schema_any(tr_schema);
      auto records = ts::load_dataset(tr_data, &schema, true);
      ts::Vocabulary vocab =
          ts::build_vocab(corpus_texts(records), schema, tr_min_count, vocab_extras(schema));

      // Model block: run-config "model" object supplies defaults, flags win.
      const nlohmann::json model_block =
          cfg.has("model") ? cfg.json().at("model") : nlohmann::json::object();
      auto model_merge = [&](const char* key, auto flag_value, bool flag_given) {
        using T = decltype(flag_value);
        if (flag_given) return flag_value;
        if (model_block.contains(key)) return model_block.at(key).get<T>();
        return flag_value;
      };
      ts::ModelConfig mc;
      mc.vocab_size = vocab.size();
      mc.d_model = model_merge("d_model", tr_d_model, tr_dm_opt->count() > 0);
      mc.n_heads = model_merge("n_heads", tr_heads, tr_h_opt->count() > 0);
      mc.n_enc_layers = model_merge("n_enc_layers", tr_enc_layers, tr_el_opt->count() > 0);
      mc.n_dec_layers = model_merge("n_dec_layers", tr_dec_layers, tr_dl_opt->count() > 0);
      mc.ffn_dim = model_merge("ffn_dim", tr_ffn, tr_ffn_opt->count() > 0);
      mc.max_src_len = model_merge("max_src_len", tr_max_src, tr_ms_opt->count() > 0);
      mc.max_tgt_len = model_merge("max_tgt_len", tr_max_tgt, tr_mt_opt->count() > 0);
      mc.dropout_rate = model_merge("dropout_rate", tr_dropout, tr_do_opt->count() > 0);
      mc.seed = seed;
      ts::ModelParams params = ts::init_params(mc);

      std::vector<ts::TrainExample> examples;
      for (const auto& rec : records) {
        if (tr_system == "telesee") {
          auto ex = ts::build_training_examples(rec, schema, vocab);
          examples.insert(examples.end(), ex.begin(), ex.end());
        } else {
          examples.push_back(ts::lmjson::build_training_example(rec, vocab));
        }
      }

      ts::TrainOptions opts;
      opts.epochs = epochs;
      opts.batch_size = batch;
      opts.optimizer.lr = lr;
      opts.optimizer.weight_decay = wd;
      opts.optimizer.warmup_steps = warmup;
      opts.seed = seed;
      opts.jobs = tr_jobs;
      opts.dropout = tr_dropout > 0.0;
      opts.log_hook = [&](const ts::EpochStats& s) {
        if (tr_log_every > 0 && (s.epoch % tr_log_every == 0 || s.epoch == 1))
          std::cout << "epoch " << s.epoch << " loss/token " << s.mean_per_token << "\n";
      };
      if (tr_snapshot_every > 0 && !tr_snapshot_prefix.empty())
        opts.snapshot_hook = [&](int epoch, const ts::ModelParams& p) {
          if (epoch % tr_snapshot_every == 0)
            ts::save_checkpoint(tr_snapshot_prefix + ".epoch" + std::to_string(epoch) + ".ckpt",
                                p, vocab);
        };

      ts::TrainResult result = ts::train(params, examples, vocab, opts);
      ts::save_checkpoint(tr_out, params, vocab);
      std::vector<std::string> outputs = {tr_out};
      if (!tr_out_vocab.empty()) {
        vocab.save(tr_out_vocab);
        outputs.push_back(tr_out_vocab);
      }
      json effective = {{"system", tr_system}, {"epochs", epochs},   {"batch_size", batch},
                        {"lr", lr},            {"weight_decay", wd}, {"warmup", warmup},
                        {"seed", seed},        {"model", mc.to_json()}};
      ts::write_manifest(tr_out, "train", effective, {tr_data, tr_schema}, outputs);
      if (!result.history.empty())
        std::cout << "final loss/token " << result.history.back().mean_per_token << " ("
                  << result.steps << " steps, " << result.skipped_steps << " skipped)\n";
    });

    // ---- extract ----
    auto* extract_cmd = app.add_subcommand("extract", "run three-stage extraction");
    std::string ex_model, ex_schema, ex_in, ex_out, ex_trace, ex_config;
    bool ex_sequential = false;
    int ex_jobs = 0;
    extract_cmd->add_option("--model", ex_model)->required();
    extract_cmd->add_option("--schema", ex_schema)->required();
    extract_cmd->add_option("--in", ex_in)->required();
    extract_cmd->add_option("--out", ex_out)->required();
    extract_cmd->add_option("--trace", ex_trace);
    extract_cmd->add_flag("--sequential", ex_sequential);
    auto* ex_jobs_opt = extract_cmd->add_option("--jobs", ex_jobs,
                                                "bound on document-level parallelism");
    extract_cmd->add_option("--config", ex_config, "run-config JSON (flags override)");
    extract_cmd->callback([&]() {
      ts::RunConfig ex_cfg = ex_config.empty() ? ts::RunConfig{} : ts::RunConfig{ex_config};
      ex_jobs = ex_cfg.merge("jobs", ex_jobs, ex_jobs_opt->count() > 0);
      ts::Checkpoint ckpt = ts::load_checkpoint(ex_model);
      ts::CompiledSchema schema = load_schema_any(ex_schema);
      if (ckpt.vocab.schema_version() != schema.version())
        throw ts::SchemaError("checkpoint was trained under schema version '" +
                              ckpt.vocab.schema_version() + "' but --schema is '" +
                              schema.version() + "'");
      ts::LoadResult loaded = ts::parse_dataset(ex_in, nullptr, false);
      if (!loaded.ok()) {
        std::cerr << loaded.issue_summary(50);
        throw ts::ValidationError("dataset validation failed");
      }
      const auto& docs = loaded.records;

      std::vector<ts::DocumentRecord> out_docs(docs.size());
      std::vector<json> traces(docs.size());
      ts::ExtractOptions eopts;
      eopts.parallel = false;  // document-level parallelism instead
      ts::pipeline_detail::run_batch(docs.size(), !ex_sequential, ex_jobs, [&](size_t i) {
        auto [entities, trace] = ts::extract(ckpt.params, ckpt.vocab, schema, docs[i].text,
                                             eopts);
        ts::DocumentRecord rec;
        rec.doc_id = docs[i].doc_id;
        rec.text = docs[i].text;
        rec.entities = std::move(entities);
        out_docs[i] = std::move(rec);
        traces[i] = trace.to_json();
        traces[i]["doc_id"] = docs[i].doc_id;
      });
      ts::save_dataset(ex_out, out_docs);
      std::vector<std::string> outputs = {ex_out};
      if (!ex_trace.empty()) {
        std::ostringstream ss;
        for (const auto& t : traces) ss << t.dump() << "\n";
        ts::write_file(ex_trace, ss.str());
        outputs.push_back(ex_trace);
      }
      ts::write_manifest(ex_out, "extract",
                         {{"sequential", ex_sequential}, {"jobs", ex_jobs}},
                         {ex_model, ex_schema, ex_in}, outputs);
      std::cout << "extracted " << out_docs.size() << " documents\n";
    });

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "score predictions against references");
    std::string ev_pred, ev_ref, ev_schema, ev_out, ev_csv, ev_mode = "multiprop";
    std::string ev_pooling = "per-document", ev_system, ev_config;
    double ev_name_weight = 0.5;
    int ev_jobs = 1;
    eval_cmd->add_option("--pred", ev_pred)->required();
    eval_cmd->add_option("--ref", ev_ref)->required();
    eval_cmd->add_option("--schema", ev_schema);
    auto* ev_mode_opt = eval_cmd->add_option("--mode", ev_mode)
        ->check(CLI::IsMember({"exact", "approx", "multiprop"}));
    auto* ev_nw_opt = eval_cmd->add_option("--name-weight", ev_name_weight);
    eval_cmd->add_option("--out", ev_out)->required();
    eval_cmd->add_option("--per-attribute", ev_csv);
    auto* ev_pool_opt = eval_cmd->add_option("--pooling", ev_pooling)
        ->check(CLI::IsMember({"per-document", "pooled"}));
    eval_cmd->add_option("--system", ev_system, "system label (default: prediction file stem)");
    eval_cmd->add_option("--config", ev_config, "run-config JSON (flags override)");
    eval_cmd->add_option("--jobs", ev_jobs, "bound on document-level parallelism");
    eval_cmd->callback([&]() {
      ts::RunConfig cfg = ev_config.empty() ? ts::RunConfig{} : ts::RunConfig{ev_config};
      ev_mode = cfg.merge("mode", ev_mode, ev_mode_opt->count() > 0);
      ev_name_weight = cfg.merge("name_weight", ev_name_weight, ev_nw_opt->count() > 0);
      ev_pooling = cfg.merge("pooling", ev_pooling, ev_pool_opt->count() > 0);
      std::optional<ts::CompiledSchema> schema;
      if (!ev_schema.empty()) schema = load_schema_any(ev_schema);
      auto preds = ts::load_dataset(ev_pred, schema ? &*schema : nullptr, true);
      auto refs = ts::load_dataset(ev_ref, schema ? &*schema : nullptr, true);
      std::string system = ev_system;
      if (system.empty()) {
        system = ev_pred;
        if (auto slash = system.find_last_of('/'); slash != std::string::npos)
          system = system.substr(slash + 1);
        if (auto dot = system.find('.'); dot != std::string::npos) system = system.substr(0, dot);
      }
      ts::MatchMode mode = ts::MatchMode::parse(ev_mode, ev_name_weight);
      EvalOutcome outcome = run_eval(preds, refs, mode, ev_pooling, system, ev_jobs);
      ts::write_file(ev_out, outcome.report.dump(2) + "\n");
      std::vector<std::string> outputs = {ev_out};
      if (!ev_csv.empty()) {
        ts::write_file(ev_csv, outcome.per_attribute_csv);
        outputs.push_back(ev_csv);
      }
      ts::write_manifest(ev_out, "eval",
                         {{"mode", ev_mode},
                          {"name_weight", ev_name_weight},
                          {"pooling", ev_pooling},
                          {"system", system}},
                         {ev_pred, ev_ref}, outputs);
      std::cout << "corpus delta (" << ev_mode << "): " << outcome.report["corpus_delta"]
                << "\n";
    });

    // ---- bench ----
    auto* bench_cmd = app.add_subcommand("bench", "throughput benchmark");
    std::string bn_model, bn_schema, bn_in, bn_out, bn_system = "telesee", bn_ref, bn_config;
    int bn_reps = 5, bn_jobs = 0;
    bool bn_sequential = false;
    bench_cmd->add_option("--model", bn_model)->required();
    bench_cmd->add_option("--schema", bn_schema)->required();
    bench_cmd->add_option("--in", bn_in)->required();
    bench_cmd->add_option("--out", bn_out)->required();
    auto* bn_system_opt = bench_cmd->add_option("--system", bn_system)
        ->check(CLI::IsMember({"telesee", "lm-json"}));
    auto* bn_reps_opt = bench_cmd->add_option("--reps", bn_reps);
    bench_cmd->add_option("--ref", bn_ref, "optional gold file; adds a MultiProp score");
    bench_cmd->add_flag("--sequential", bn_sequential);
    bench_cmd->add_option("--jobs", bn_jobs);
    bench_cmd->add_option("--config", bn_config, "run-config JSON (flags override)");
    bench_cmd->callback([&]() {
      ts::RunConfig bn_cfg = bn_config.empty() ? ts::RunConfig{} : ts::RunConfig{bn_config};
      bn_reps = bn_cfg.merge("reps", bn_reps, bn_reps_opt->count() > 0);
      bn_system = bn_cfg.merge("system", bn_system, bn_system_opt->count() > 0);
      ts::Checkpoint ckpt = ts::load_checkpoint(bn_model);
      ts::CompiledSchema schema = load_schema_any(bn_schema);
      if (ckpt.vocab.schema_version() != schema.version())
        throw ts::SchemaError("checkpoint was trained under schema version '" +
                              ckpt.vocab.schema_version() + "' but --schema is '" +
                              schema.version() + "'");
      ts::LoadResult loaded = ts::parse_dataset(bn_in, nullptr, false);
      if (!loaded.ok()) {
        std::cerr << loaded.issue_summary(50);
        throw ts::ValidationError("dataset validation failed");
      }
      const auto& docs = loaded.records;
      if (docs.empty()) throw ts::ValidationError("bench: empty corpus");

      std::vector<ts::EntitySet> outputs(docs.size());
      ts::ExtractOptions eopts;
      eopts.parallel = !bn_sequential;
      eopts.jobs = bn_jobs;
      auto process = [&](size_t i) {
        if (bn_system == "telesee") {
          auto [entities, trace] =
              ts::extract(ckpt.params, ckpt.vocab, schema, docs[i].text, eopts);
          outputs[i] = std::move(entities);
        } else {
          auto result =
              ts::lmjson::baseline_json_extract(ckpt.params, ckpt.vocab, schema, docs[i].text);
          outputs[i] = std::move(result.entities);
        }
      };
      ts::BenchResult result = ts::bench_throughput(bn_system, docs.size(), bn_reps, process);
      result.schema_version = ckpt.vocab.schema_version();

      if (!bn_ref.empty()) {
        auto refs = ts::load_dataset(bn_ref, nullptr, true);
        std::map<std::string, size_t> index;
        for (size_t i = 0; i < docs.size(); ++i) index[docs[i].doc_id] = i;
        double sum = 0.0;
        size_t n = 0;
        for (const auto& ref : refs) {
          auto it = index.find(ref.doc_id);
          if (it == index.end() || !ref.entities) continue;
          sum += ts::evaluate(outputs[it->second], *ref.entities, ts::MatchMode::multiprop()).delta;
          ++n;
        }
        result.extra = {{"multiprop_delta", n ? sum / static_cast<double>(n) : 0.0}};
      }
      ts::write_file(bn_out, result.to_json().dump(2) + "\n");
      ts::write_manifest(bn_out, "bench",
                         {{"system", bn_system}, {"reps", bn_reps}, {"sequential", bn_sequential}},
                         {bn_model, bn_schema, bn_in}, {bn_out});
      std::cout << bn_system << ": " << result.samples_per_sec << " samples/sec\n";
    });

    // ---- report ----
    auto* report_cmd = app.add_subcommand("report", "plot-ready tables from eval/bench outputs");
    std::vector<std::string> rp_eval, rp_bench;
    std::string rp_prefix;
    report_cmd->add_option("--eval", rp_eval, "eval report JSON files");
    report_cmd->add_option("--bench", rp_bench, "bench JSON files");
    report_cmd->add_option("--out-prefix", rp_prefix)->required();
    report_cmd->callback([&]() {
      std::vector<ts::EvalFileSummary> evals;
      for (const auto& path : rp_eval) {
        std::string stem = path;
        if (auto slash = stem.find_last_of('/'); slash != std::string::npos)
          stem = stem.substr(slash + 1);
        evals.push_back(ts::parse_eval_report(ts::load_json_file(path), stem));
      }
      std::vector<json> benches;
      for (const auto& path : rp_bench) benches.push_back(ts::load_json_file(path));

      ts::ReportTables tables = ts::build_report_tables(evals, benches);
      std::vector<std::string> outputs;
      auto emit = [&](const std::string& suffix, const std::string& content) {
        if (content.empty()) return;
        std::string path = rp_prefix + "_" + suffix + ".csv";
        ts::write_file(path, content);
        outputs.push_back(path);
      };
      emit("scores", tables.scores_csv);
      emit("attributes", tables.attributes_csv);
      emit("correlation", tables.correlation_csv);
      emit("correlation_points", tables.correlation_points_csv);
      emit("throughput", tables.throughput_csv);
      std::vector<std::string> inputs = rp_eval;
      inputs.insert(inputs.end(), rp_bench.begin(), rp_bench.end());
      ts::write_manifest(rp_prefix + "_scores.csv", "report", json::object(), inputs, outputs);
      for (const auto& o : outputs) std::cout << "wrote " << o << "\n";
    });

    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp") {
      app.exit(e);
      return 0;
    }
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const ts::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const ts::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 3;
  } catch (const ts::SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
