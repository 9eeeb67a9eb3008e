#include <catch_amalgamated.hpp>
#include <fstream>

#include "support.hpp"
#include "telesee/dataset.hpp"

using namespace telesee;

namespace {
void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const auto& l : lines) out << l << "\n";
}
}  // namespace

TEST_CASE("loading a valid two-line file") {
  auto schema = test_support::g6_schema();
  std::string path = test_support::temp_path("valid.jsonl");
  write_lines(path, {
      R"({"doc_id":"d1","text":"Semantic communication appears here.","entities":[{"name":"semantic communication","type":"6G-related technique","attributes":{"Benefits":"improved efficiency"}}]})",
      R"({"doc_id":"d2","text":"No entities in this one.","entities":[]})"});
  auto records = load_dataset(path, &schema, true);
  REQUIRE(records.size() == 2);
  CHECK(records[0].entities->entities.size() == 1);
  CHECK(records[1].entities->entities.empty());
}

TEST_CASE("validation issues carry line numbers and doc ids") {
  auto schema = test_support::g6_schema();
  std::string path = test_support::temp_path("invalid.jsonl");
  write_lines(path, {
      R"({"doc_id":"d1","text":"ok.","entities":[]})",
      "not json at all",
      R"({"doc_id":"d1","text":"dup id.","entities":[]})",
      R"({"doc_id":"d3","text":"bad key.","entities":[{"name":"x","type":"6G-related technique","attributes":{"Speed":"fast"}}]})"});
  LoadResult result = parse_dataset(path, &schema, true);
  REQUIRE(result.issues.size() == 3);
  CHECK(result.issues[0].line == 2);
  CHECK(result.issues[0].message.find("malformed") != std::string::npos);
  CHECK(result.issues[1].line == 3);
  CHECK(result.issues[1].message.find("duplicate") != std::string::npos);
  CHECK(result.issues[2].doc_id == "d3");
  CHECK(result.issues[2].message.find("Speed") != std::string::npos);
  CHECK_THROWS_AS(load_dataset(path, &schema, true), ValidationError);
}

TEST_CASE("save then load round trips records") {
  auto schema = test_support::g6_schema();
  auto docs = synth_generate(schema, 5, 21);
  std::string path = test_support::temp_path("roundtrip.jsonl");
  save_dataset(path, docs);
  auto loaded = load_dataset(path, &schema, true);
  REQUIRE(loaded.size() == docs.size());
  for (size_t i = 0; i < docs.size(); ++i) {
    CHECK(loaded[i].doc_id == docs[i].doc_id);
    CHECK(loaded[i].text == docs[i].text);
    REQUIRE(loaded[i].entities.has_value());
    CHECK(loaded[i].entities->entities == docs[i].entities->entities);
  }
}

TEST_CASE("stats on the empty corpus are all zero") {
  CorpusStats s = stats({});
  CHECK(s.documents == 0);
  CHECK(s.sentences == 0);
  CHECK(s.words == 0);
  CHECK(s.entities == 0);
}

TEST_CASE("stats agree with the generator's own bookkeeping") {
  auto schema = test_support::g6_schema();
  SynthBookkeeping book;
  auto docs = synth_generate(schema, 50, 1234, &book);
  CorpusStats measured = stats(docs);
  CHECK(measured.documents == book.expected.documents);
  CHECK(measured.sentences == book.expected.sentences);
  CHECK(measured.words == book.expected.words);
  CHECK(measured.entities == book.expected.entities);
  CHECK(measured.key_histogram == book.expected.key_histogram);
}

TEST_CASE("split respects largest-remainder sizes and is a partition") {
  auto schema = test_support::g6_schema();
  auto docs = synth_generate(schema, 10, 3);
  auto parts = split(docs, {0.8, 0.1, 0.1}, 77);
  CHECK(parts[0].size() == 8);
  CHECK(parts[1].size() == 1);
  CHECK(parts[2].size() == 1);

  auto again = split(docs, {0.8, 0.1, 0.1}, 77);
  for (size_t p = 0; p < 3; ++p) {
    REQUIRE(parts[p].size() == again[p].size());
    for (size_t i = 0; i < parts[p].size(); ++i)
      CHECK(parts[p][i].doc_id == again[p][i].doc_id);
  }

  std::multiset<std::string> all_ids, split_ids;
  for (const auto& d : docs) all_ids.insert(d.doc_id);
  for (const auto& part : parts)
    for (const auto& d : part) split_ids.insert(d.doc_id);
  CHECK(all_ids == split_ids);

  CHECK_THROWS_AS(split(docs, {0.5, 0.2, 0.2}, 1), ValidationError);
}

TEST_CASE("synthetic generator embeds every gold value verbatim") {
  auto schema = test_support::g6_schema();
  auto docs = synth_generate(schema, 200, 42);
  CHECK(docs.size() == 200);
  for (const auto& doc : docs) {
    REQUIRE(doc.entities.has_value());
    for (const auto& e : doc.entities->entities) {
      CHECK(doc.text.find(e.name) != std::string::npos);
      CHECK(e.attributes.size() >= 2);
      CHECK(e.attributes.size() <= 5);
      for (const auto& [k, v] : e.attributes)
        CHECK(doc.text.find(v) != std::string::npos);
    }
    size_t n = doc.entities->entities.size();
    CHECK(n >= 1);
    CHECK(n <= 3);
  }
}

TEST_CASE("synthetic corpus keeps the vocabulary small") {
  auto schema = test_support::g6_schema();
  auto docs = synth_generate(schema, 200, 42);
  std::vector<std::string> texts;
  for (const auto& d : docs) texts.push_back(d.text);
  Vocabulary v = build_vocab(texts, schema, 1);
  CHECK(v.size() < 2000);
}

TEST_CASE("generation is deterministic and differs across seeds") {
  auto schema = test_support::g6_schema();
  auto a = synth_generate(schema, 3, 5);
  auto b = synth_generate(schema, 3, 5);
  auto c = synth_generate(schema, 3, 6);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(a[i].text == b[i].text);
    CHECK(a[i].entities->entities == b[i].entities->entities);
  }
  bool any_diff = false;
  for (size_t i = 0; i < 3; ++i) any_diff |= a[i].text != c[i].text;
  CHECK(any_diff);
}

TEST_CASE("golden synthetic record is stable") {
  auto schema = test_support::g6_schema();
  auto docs = synth_generate(schema, 1, 7);
  REQUIRE(docs.size() == 1);
  nlohmann::json j = docs[0].to_json();
  std::string fixture_path = std::string(TELESEE_TEST_DATA_DIR) + "/synth_golden.json";
  std::ifstream in(fixture_path);
  REQUIRE(in.good());
  nlohmann::json expected;
  in >> expected;
  CHECK(j == expected);
}
