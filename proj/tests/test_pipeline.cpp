#include <catch_amalgamated.hpp>

#include <cmath>

#include "support.hpp"
#include "telesee/dataset.hpp"
#include "telesee/pipeline.hpp"

using namespace telesee;
using test_support::g6_schema;

namespace {

DocumentRecord two_entity_record() {
  DocumentRecord rec;
  rec.doc_id = "r1";
  rec.text = "The study considers semantic communication here. Later it considers edge "
             "intelligence offloading too.";
  EntitySet gold;
  gold.schema_version = "6gtech-v1";
  StructuredEntity a;
  a.name = "semantic communication";
  a.type = "6G-related technique";
  a.attributes = {{"Benefits", "improved spectral efficiency"},
                  {"Technique functions", "extracts meaning"},
                  {"Operating frequency", "sub 6 ghz bands"}};
  StructuredEntity b;
  b.name = "edge intelligence offloading";
  b.type = "6G-related technique";
  b.attributes = {{"Benefits", "lower latency"},
                  {"Associated technologies", "federated learning"},
                  {"Application and deployment scenarios", "dense urban coverage"}};
  gold.entities = {a, b};
  rec.entities = std::move(gold);
  return rec;
}

struct TrainedSetup {
  CompiledSchema schema;
  Vocabulary vocab;
  ModelParams params;
  std::vector<DocumentRecord> docs;
};

// Small but real training run shared by the extraction tests.
TrainedSetup overfit_two_docs(int max_epochs = 400) {
  TrainedSetup s{g6_schema(), {}, {}, {}};
  s.docs = synth_generate(s.schema, 2, 91);
  std::vector<std::string> texts;
  for (const auto& d : s.docs) texts.push_back(d.text);
  s.vocab = build_vocab(texts, s.schema, 1, lmjson::structural_tokens());

  ModelConfig cfg;
  cfg.vocab_size = s.vocab.size();
  cfg.d_model = 48;
  cfg.n_heads = 4;
  cfg.n_enc_layers = 2;
  cfg.n_dec_layers = 2;
  cfg.ffn_dim = 96;
  cfg.max_src_len = 192;
  cfg.max_tgt_len = 64;
  cfg.seed = 5;
  s.params = init_params(cfg);

  std::vector<TrainExample> examples;
  for (const auto& rec : s.docs) {
    auto ex = build_training_examples(rec, s.schema, s.vocab);
    examples.insert(examples.end(), ex.begin(), ex.end());
  }
  TrainOptions opts;
  opts.epochs = max_epochs;
  opts.batch_size = 32;
  opts.optimizer.lr = 0.002;
  opts.optimizer.warmup_steps = 30;
  opts.seed = 13;
  opts.jobs = 2;
  train(s.params, examples, s.vocab, opts);
  return s;
}

}  // namespace

TEST_CASE("training example counts follow the closed form") {
  auto schema = g6_schema();
  Vocabulary vocab = build_vocab({two_entity_record().text}, schema, 1);
  auto rec = two_entity_record();
  auto examples = build_training_examples(rec, schema, vocab);
  CHECK(examples.size() == 1 + 2 + 6);  // 1 stage-1, per entity 1 stage-2 + |keys| stage-3

  DocumentRecord empty_rec;
  empty_rec.doc_id = "e";
  empty_rec.text = "Nothing to find here.";
  empty_rec.entities = EntitySet{};
  auto empty_examples = build_training_examples(empty_rec, schema, vocab);
  REQUIRE(empty_examples.size() == 1);
  CHECK(empty_examples[0].stage == 1);
  CHECK(empty_examples[0].target_ids.empty());

  auto docs = synth_generate(schema, 25, 3);
  std::vector<std::string> texts;
  for (const auto& d : docs) texts.push_back(d.text);
  Vocabulary v2 = build_vocab(texts, schema, 1);
  size_t total = 0, expected = 0;
  for (const auto& d : docs) {
    total += build_training_examples(d, schema, v2).size();
    expected += 1 + d.entities->entities.size();
    for (const auto& e : d.entities->entities) expected += e.attributes.size();
  }
  CHECK(total == expected);
}

TEST_CASE("stage targets and prompts have the documented structure") {
  auto schema = g6_schema();
  auto rec = two_entity_record();
  Vocabulary vocab = build_vocab({rec.text}, schema, 1);
  auto examples = build_training_examples(rec, schema, vocab);

  // Stage 1: names in document order separated by the entity separator.
  const auto& s1 = examples[0];
  CHECK(s1.prompt_ids == std::vector<int>{vocab.prompt_ent_names_id()});
  auto sep_count = std::count(s1.target_ids.begin(), s1.target_ids.end(), vocab.ent_sep_id());
  CHECK(sep_count == 1);
  auto decoded = vocab.decode(s1.target_ids);
  CHECK(decoded.front() == "semantic");

  // Stage 2: type token first, then the entity's keys in schema order.
  const auto& s2 = examples[1];
  CHECK(s2.stage == 2);
  REQUIRE_FALSE(s2.target_ids.empty());
  CHECK(vocab.token_of(s2.target_ids[0]) == "ent_type_6g_related_technique");
  std::vector<std::string> key_tokens;
  for (size_t i = 1; i < s2.target_ids.size(); ++i)
    key_tokens.push_back(vocab.token_of(s2.target_ids[i]));
  CHECK(key_tokens == std::vector<std::string>{"attr_technique_functions", "attr_benefits",
                                               "attr_operating_frequency"});

  // Stage 3 prompts differ only in the trailing key id for the same entity.
  const auto& s3a = examples[2];
  const auto& s3b = examples[3];
  REQUIRE(s3a.stage == 3);
  REQUIRE(s3b.stage == 3);
  REQUIRE(s3a.prompt_ids.size() == s3b.prompt_ids.size());
  CHECK(s3a.prompt_ids[0] == vocab.prompt_val_id());
  for (size_t i = 0; i + 1 < s3a.prompt_ids.size(); ++i)
    CHECK(s3a.prompt_ids[i] == s3b.prompt_ids[i]);
  CHECK(s3a.prompt_ids.back() != s3b.prompt_ids.back());

  // Unknown schema elements are validation errors.
  DocumentRecord bad = rec;
  bad.entities->entities[0].attributes["Speed"] = "fast";
  CHECK_THROWS_AS(build_training_examples(bad, schema, vocab), ValidationError);
}

TEST_CASE("stage-1 output parsing dedupes and drops empties") {
  auto schema = g6_schema();
  Vocabulary vocab = build_vocab({"alpha beta gamma"}, schema, 1);
  int a = vocab.id_of("alpha"), b = vocab.id_of("beta"), sep = vocab.ent_sep_id();

  CHECK(parse_stage1_names(vocab, {a, sep, a}) == std::vector<std::string>{"alpha"});
  CHECK(parse_stage1_names(vocab, {a, b, sep, sep, a}) ==
        std::vector<std::string>{"alpha beta", "alpha"});
  CHECK(parse_stage1_names(vocab, {}).empty());
  CHECK(parse_stage1_names(vocab, {sep, sep}).empty());

  // Stray special tokens inside a segment are stripped.
  ExtractionTrace trace;
  auto names = parse_stage1_names(vocab, {a, vocab.prompt_val_id(), b}, &trace);
  CHECK(names == std::vector<std::string>{"alpha beta"});
  CHECK(trace.discarded_special_ids == 1);
}

TEST_CASE("stage-2 output parsing maps tokens to display names") {
  auto schema = g6_schema();
  Vocabulary vocab = build_vocab({"x"}, schema, 1);
  int type_id = vocab.id_of("ent_type_6g_related_technique");
  int benefits = vocab.id_of("attr_benefits");
  int functions = vocab.id_of("attr_technique_functions");

  auto parsed = parse_stage2_elements(vocab, schema, {type_id, benefits, functions, benefits});
  REQUIRE(parsed.has_value());
  CHECK(parsed->first == "6G-related technique");
  CHECK(parsed->second == std::vector<std::string>{"Benefits", "Technique functions"});

  CHECK_FALSE(parse_stage2_elements(vocab, schema, {}).has_value());

  // A stray second type token is ignored rather than treated as a key.
  auto stray = parse_stage2_elements(vocab, schema, {type_id, type_id, benefits});
  REQUIRE(stray.has_value());
  CHECK(stray->second == std::vector<std::string>{"Benefits"});
}

TEST_CASE("extraction encodes once and is batch-order independent") {
  auto schema = g6_schema();
  auto docs = synth_generate(schema, 5, 17);
  std::vector<std::string> texts;
  for (const auto& d : docs) texts.push_back(d.text);
  Vocabulary vocab = build_vocab(texts, schema, 1);
  ModelConfig cfg;
  cfg.vocab_size = vocab.size();
  cfg.d_model = 32;
  cfg.n_heads = 4;
  cfg.n_enc_layers = 1;
  cfg.n_dec_layers = 1;
  cfg.ffn_dim = 64;
  cfg.max_src_len = 192;
  cfg.max_tgt_len = 48;
  cfg.seed = 3;
  ModelParams params = init_params(cfg);  // untrained is fine for determinism checks

  for (const auto& doc : docs) {
    ExtractOptions seq;
    seq.parallel = false;
    ExtractOptions par;
    par.parallel = true;
    par.jobs = 2;
    auto [set_seq, trace_seq] = extract(params, vocab, schema, doc.text, seq);
    auto [set_par, trace_par] = extract(params, vocab, schema, doc.text, par);
    CHECK(trace_seq.encoder_calls == 1);
    CHECK(trace_par.encoder_calls == 1);
    REQUIRE(set_seq.entities.size() == set_par.entities.size());
    for (size_t i = 0; i < set_seq.entities.size(); ++i)
      CHECK(set_seq.entities[i] == set_par.entities[i]);
    // Stage-2 closure: everything decoded resolves in the schema.
    for (const auto& e : set_seq.entities) {
      CHECK(schema.has_type(e.type));
      for (const auto& [k, _] : e.attributes) CHECK(schema.has_key(k));
    }
  }
}

TEST_CASE("a memorized corpus is reproduced end to end") {
  TrainedSetup s = overfit_two_docs();
  double min_delta = 1.0;
  for (const auto& doc : s.docs) {
    auto [extracted, trace] = extract(s.params, s.vocab, s.schema, doc.text);
    CHECK(trace.encoder_calls == 1);
    EvalReport rep = evaluate(extracted, *doc.entities, MatchMode::multiprop());
    min_delta = std::min(min_delta, rep.delta);
  }
  CHECK(min_delta >= 0.95);
}

TEST_CASE("per-stage losses sum to the reported total") {
  auto schema = g6_schema();
  auto docs = synth_generate(schema, 3, 19);
  std::vector<std::string> texts;
  for (const auto& d : docs) texts.push_back(d.text);
  Vocabulary vocab = build_vocab(texts, schema, 1);
  ModelConfig cfg;
  cfg.vocab_size = vocab.size();
  cfg.d_model = 32;
  cfg.n_heads = 4;
  cfg.n_enc_layers = 1;
  cfg.n_dec_layers = 1;
  cfg.ffn_dim = 64;
  cfg.max_src_len = 192;
  cfg.max_tgt_len = 48;
  cfg.seed = 3;
  ModelParams params = init_params(cfg);
  std::vector<TrainExample> examples;
  for (const auto& rec : docs) {
    auto ex = build_training_examples(rec, schema, vocab);
    examples.insert(examples.end(), ex.begin(), ex.end());
  }
  TrainOptions opts;
  opts.epochs = 3;
  opts.batch_size = 8;
  opts.seed = 2;
  TrainResult result = train(params, examples, vocab, opts);
  REQUIRE(result.history.size() == 3);
  for (const auto& stats : result.history) {
    double stage_total = stats.stage_sums[0] + stats.stage_sums[1] + stats.stage_sums[2] +
                         stats.stage_sums[3];
    CHECK(std::abs(stage_total - stats.total) <= 1e-9);
  }

  // Fixed seed reproduces the loss curve bit for bit.
  ModelParams params2 = init_params(cfg);
  TrainResult result2 = train(params2, examples, vocab, opts);
  for (size_t i = 0; i < result.history.size(); ++i)
    CHECK(result.history[i].total == result2.history[i].total);
}

TEST_CASE("json serialization round trips through the lenient parser") {
  auto schema = g6_schema();
  Rng rng(73);
  for (int trial = 0; trial < 20; ++trial) {
    EntitySet gold = test_support::random_entity_set(rng, schema, static_cast<size_t>(rng.uniform_int(1, 3)));
    // Names/values in the json vocabulary are normalized words; mirror that.
    for (auto& e : gold.entities) {
      e.name = join(normalize_words(e.name), " ");
      std::map<std::string, std::string> attrs;
      for (auto& [k, v] : e.attributes) attrs[k] = join(normalize_words(v), " ");
      e.attributes = std::move(attrs);
    }
    auto tokens = lmjson::serialize_tokens(gold);
    auto parsed = lmjson::parse_tokens(tokens, schema);
    CHECK(parsed.clean);
    REQUIRE(parsed.entities.entities.size() == gold.entities.size());
    for (size_t i = 0; i < gold.entities.size(); ++i) {
      CHECK(parsed.entities.entities[i].name == gold.entities[i].name);
      CHECK(parsed.entities.entities[i].attributes == gold.entities[i].attributes);
    }
  }
}

TEST_CASE("truncated or garbled json streams degrade gracefully") {
  auto schema = g6_schema();
  StructuredEntity e;
  e.name = "semantic communication";
  e.type = "6G-related technique";
  e.attributes = {{"Benefits", "security"}};
  EntitySet set;
  set.entities = {e};
  auto tokens = lmjson::serialize_tokens(set);

  auto truncated = tokens;
  truncated.resize(tokens.size() / 2);
  auto parsed = lmjson::parse_tokens(truncated, schema);
  CHECK_FALSE(parsed.clean);

  auto garbage = lmjson::parse_tokens({"went", "wrong", "completely"}, schema);
  CHECK(garbage.entities.entities.empty());

  auto empty = lmjson::parse_tokens({}, schema);
  CHECK(empty.entities.entities.empty());
}

TEST_CASE("spelled-out json targets are longer than summed stage targets") {
  auto schema = g6_schema();
  auto docs = synth_generate(schema, 20, 29);
  std::vector<std::string> texts;
  for (const auto& d : docs) texts.push_back(d.text);
  Vocabulary vocab = build_vocab(texts, schema, 1, lmjson::structural_tokens());
  double staged_total = 0.0, json_total = 0.0;
  for (const auto& rec : docs) {
    for (const auto& ex : build_training_examples(rec, schema, vocab))
      staged_total += static_cast<double>(ex.target_ids.size());
    json_total +=
        static_cast<double>(lmjson::build_training_example(rec, vocab).target_ids.size());
  }
  CHECK(json_total > staged_total);
}

TEST_CASE("bench harness reports medians and validates input") {
  auto result = bench_throughput("dummy", 4, 3, [&](size_t) {
    volatile double x = 0.0;
    for (int i = 0; i < 20000; ++i) x = x + std::sqrt(static_cast<double>(i));
  });
  CHECK(result.per_rep.size() == 3);
  CHECK(result.samples_per_sec > 0.0);
  CHECK(result.latency_ms_p50 >= 0.0);
  CHECK(result.latency_ms_max >= result.latency_ms_p50);
  CHECK_THROWS_AS(bench_throughput("dummy", 0, 1, [](size_t) {}), ValidationError);
  CHECK_THROWS_AS(bench_throughput("dummy", 1, 0, [](size_t) {}), ValidationError);
}
