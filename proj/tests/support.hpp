#pragma once

// Shared helpers for the unit and acceptance suites.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "telesee/common.hpp"
#include "telesee/dataset.hpp"
#include "telesee/entity.hpp"
#include "telesee/metric.hpp"
#include "telesee/model.hpp"
#include "telesee/schema.hpp"
#include "telesee/vocab.hpp"

namespace test_support {

inline std::string temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "telesee_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

inline telesee::CompiledSchema g6_schema() {
  return telesee::compile_schema(telesee::default_6g_schema_def());
}

// Small word pool for generated entities; names and values are built from it.
inline const std::vector<std::string>& word_pool() {
  static const std::vector<std::string> words = {
      "semantic", "communication", "sensing",   "integrated", "joint",    "network",
      "beam",     "surface",       "edge",      "latency",    "spectrum", "antenna",
      "channel",  "coding",        "security",  "noise",      "twin",     "slicing",
      "terahertz","massive",       "efficiency","coverage",   "holographic", "quantum"};
  return words;
}

inline std::string random_phrase(telesee::Rng& rng, int min_words, int max_words) {
  int n = static_cast<int>(rng.uniform_int(min_words, max_words));
  std::vector<std::string> ws;
  for (int i = 0; i < n; ++i) ws.push_back(rng.pick(word_pool()));
  return telesee::join(ws, " ");
}

// A structured entity with a distinct discriminator word in the name so that
// generated sets rarely produce tied pairing scores.
inline telesee::StructuredEntity random_entity(telesee::Rng& rng, const telesee::CompiledSchema& schema,
                                               int tag) {
  telesee::StructuredEntity e;
  e.name = random_phrase(rng, 1, 3) + " v" + std::to_string(tag);
  e.type = schema.entity_types().front();
  const auto& keys = schema.attribute_keys();
  int n_keys = static_cast<int>(rng.uniform_int(0, 4));
  for (int i = 0; i < n_keys; ++i) {
    const auto& key = keys[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(keys.size()) - 1))];
    e.attributes[key] = random_phrase(rng, 1, 5);
  }
  return e;
}

inline telesee::EntitySet random_entity_set(telesee::Rng& rng, const telesee::CompiledSchema& schema,
                                            size_t n) {
  telesee::EntitySet set;
  set.schema_version = schema.version();
  for (size_t i = 0; i < n; ++i)
    set.entities.push_back(random_entity(rng, schema, static_cast<int>(rng.uniform_int(0, 999))));
  return set;
}

// Mutates some attribute values / drops keys to produce a plausibly-noisy
// prediction of `ref`.
inline telesee::EntitySet perturb_entity_set(telesee::Rng& rng, const telesee::EntitySet& ref,
                                             double noise) {
  telesee::EntitySet out;
  out.schema_version = ref.schema_version;
  for (const auto& e : ref.entities) {
    if (rng.uniform() < noise * 0.3) continue;  // dropped entity
    telesee::StructuredEntity p = e;
    for (auto& [k, v] : p.attributes)
      if (rng.uniform() < noise) v = random_phrase(rng, 1, 4);
    if (rng.uniform() < noise * 0.5) p.name = random_phrase(rng, 1, 3);
    out.entities.push_back(std::move(p));
  }
  return out;
}

// Tiny vocabulary + config pair usable for fast model tests (< 10k params).
struct TinySetup {
  telesee::CompiledSchema schema;
  telesee::Vocabulary vocab;
  telesee::ModelConfig config;
};

inline TinySetup tiny_setup(uint64_t seed = 11) {
  TinySetup s{g6_schema(), {}, {}};
  std::vector<std::string> corpus = {
      "semantic communication improves spectral efficiency in future networks",
      "integrated sensing and communication shares waveforms across links",
      "edge intelligence reduces latency for dense deployments"};
  s.vocab = telesee::build_vocab(corpus, s.schema, 1);
  s.config.vocab_size = s.vocab.size();
  s.config.d_model = 16;
  s.config.n_heads = 2;
  s.config.n_enc_layers = 1;
  s.config.n_dec_layers = 1;
  s.config.ffn_dim = 32;
  s.config.max_src_len = 16;
  s.config.max_tgt_len = 16;
  s.config.seed = seed;
  return s;
}

}  // namespace test_support
