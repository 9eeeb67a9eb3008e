#include <catch_amalgamated.hpp>

#include "support.hpp"
#include "telesee/dataset.hpp"
#include "telesee/vocab.hpp"

using namespace telesee;

TEST_CASE("min_count threshold maps rare words to unk") {
  auto schema = test_support::g6_schema();
  Vocabulary v = build_vocab({"a a b"}, schema, 2);
  CHECK(v.contains("a"));
  CHECK_FALSE(v.contains("b"));
  auto ids = v.encode_text("a b");
  REQUIRE(ids.size() == 2);
  CHECK(ids[0] != v.unk_id());
  CHECK(ids[1] == v.unk_id());
}

TEST_CASE("all schema and control specials are present regardless of corpus") {
  auto schema = test_support::g6_schema();
  Vocabulary v = build_vocab({"tiny"}, schema, 1);
  size_t expected = schema.entity_types().size() + schema.attribute_keys().size() +
                    control::all().size();
  CHECK(static_cast<size_t>(v.specials_end()) == expected);
  for (const auto& tok : schema.all_special_tokens()) {
    CHECK(v.contains(tok));
    CHECK(v.is_special(v.id_of(tok)));
  }
  CHECK_FALSE(v.is_special(v.unk_id()));
  // unk/pad/bos/eos all distinct
  std::set<int> ids = {v.unk_id(), v.pad_id(), v.bos_id(), v.eos_id()};
  CHECK(ids.size() == 4);
}

TEST_CASE("ids are contiguous and specials form a prefix block") {
  auto schema = test_support::g6_schema();
  Vocabulary v = build_vocab({"alpha beta gamma"}, schema, 1);
  for (int id = 0; id < v.size(); ++id) CHECK(v.id_of(v.token_of(id)) == id);
  for (int id = 0; id < v.specials_end(); ++id) CHECK(v.is_special(id));
}

TEST_CASE("schema special tokens encode to single ids") {
  auto schema = test_support::g6_schema();
  Vocabulary v = build_vocab({"some words"}, schema, 1);
  auto ids = v.encode_tokens({"attr_benefits"});
  REQUIRE(ids.size() == 1);
  CHECK(v.is_schema_token(ids[0]));
  CHECK(v.token_of(ids[0]) == "attr_benefits");
}

TEST_CASE("encode/decode round trip and padding removal") {
  auto schema = test_support::g6_schema();
  Vocabulary v = build_vocab({"semantic communication systems"}, schema, 1);
  auto toks = v.decode(v.encode_text("semantic communication"));
  CHECK(toks == std::vector<std::string>{"semantic", "communication"});
  CHECK(v.decode({v.pad_id()}).empty());
  CHECK_THROWS_AS(v.token_of(v.size()), ValidationError);
  CHECK_THROWS_AS(v.token_of(-1), ValidationError);
}

TEST_CASE("round trip on sampled synthetic sentences") {
  auto schema = test_support::g6_schema();
  auto docs = synth_generate(schema, 30, 99);
  std::vector<std::string> texts;
  for (const auto& d : docs) texts.push_back(d.text);
  Vocabulary v = build_vocab(texts, schema, 1);
  Rng rng(5);
  int checked = 0;
  for (int i = 0; i < 100; ++i) {
    const auto& doc = docs[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(docs.size()) - 1))];
    auto sentences = split_sentences(doc.text);
    const auto& sentence = sentences[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(sentences.size()) - 1))];
    auto words = normalize_words(sentence);
    auto decoded = v.decode(v.encode_tokens(words));
    CHECK(decoded == words);
    ++checked;
  }
  CHECK(checked == 100);
}

TEST_CASE("vocabulary file round trip preserves ids and hash") {
  auto schema = test_support::g6_schema();
  Vocabulary v = build_vocab({"semantic communication"}, schema, 1, {"{", "}"});
  std::string path = test_support::temp_path("vocab.json");
  v.save(path);
  Vocabulary loaded = Vocabulary::load(path);
  CHECK(loaded.size() == v.size());
  CHECK(loaded.hash() == v.hash());
  CHECK(loaded.id_of("semantic") == v.id_of("semantic"));
  CHECK(loaded.pad_id() == v.pad_id());
  CHECK(loaded.schema_version() == v.schema_version());
}

TEST_CASE("empty corpus and bad min_count are rejected") {
  auto schema = test_support::g6_schema();
  CHECK_THROWS_AS(build_vocab({}, schema, 1), ValidationError);
  CHECK_THROWS_AS(build_vocab({"x"}, schema, 0), ValidationError);
}
