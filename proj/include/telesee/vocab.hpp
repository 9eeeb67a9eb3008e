#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "telesee/common.hpp"
#include "telesee/schema.hpp"
#include "telesee/text.hpp"

namespace telesee {

inline constexpr const char* kUnkToken = "<unk>";

// Word-level model vocabulary. Ids are contiguous from 0; schema and control
// tokens occupy the reserved block [0, specials_end); <unk> sits right after.
class Vocabulary {
 public:
  Vocabulary() = default;

  int size() const { return static_cast<int>(id_to_token_.size()); }
  const std::string& token_of(int id) const {
    if (id < 0 || id >= size()) throw ValidationError("token id out of range: " + std::to_string(id));
    return id_to_token_[static_cast<size_t>(id)];
  }
  int id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? unk_id_ : it->second;
  }
  bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

  int pad_id() const { return pad_id_; }
  int bos_id() const { return bos_id_; }
  int eos_id() const { return eos_id_; }
  int unk_id() const { return unk_id_; }
  int ent_sep_id() const { return ent_sep_id_; }
  int prompt_ent_names_id() const { return prompt_ent_names_id_; }
  int prompt_type_attr_id() const { return prompt_type_attr_id_; }
  int prompt_val_id() const { return prompt_val_id_; }

  int specials_end() const { return specials_end_; }
  bool is_special(int id) const { return id >= 0 && id < specials_end_; }
  bool is_schema_token(int id) const {
    return std::binary_search(type_token_ids_.begin(), type_token_ids_.end(), id) ||
           std::binary_search(key_token_ids_.begin(), key_token_ids_.end(), id);
  }
  const std::vector<int>& type_token_ids() const { return type_token_ids_; }
  const std::vector<int>& key_token_ids() const { return key_token_ids_; }
  const std::string& schema_version() const { return schema_version_; }

  // Order-sensitive content hash; checkpoints refuse to load on mismatch.
  uint64_t hash() const {
    std::string blob = schema_version_;
    for (const auto& t : id_to_token_) {
      blob.push_back('\0');
      blob += t;
    }
    return fnv1a64(blob);
  }

  std::vector<int> encode_tokens(const std::vector<std::string>& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id_of(t));
    return ids;
  }

  // Normalizes raw text to the word sequence, then maps to ids (oov -> unk).
  std::vector<int> encode_text(const std::string& text) const {
    return encode_tokens(normalize_words(text));
  }

  // Ids back to token strings; padding is stripped.
  std::vector<std::string> decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    for (int id : ids) {
      if (id == pad_id_) continue;
      out.push_back(token_of(id));
    }
    return out;
  }

  nlohmann::json to_json() const {
    return {{"tokens", id_to_token_},
            {"specials",
             {{"block_end", specials_end_},
              {"pad", pad_id_},
              {"bos", bos_id_},
              {"eos", eos_id_},
              {"unk", unk_id_},
              {"ent_sep", ent_sep_id_},
              {"prompt_ent_names", prompt_ent_names_id_},
              {"prompt_type_attr", prompt_type_attr_id_},
              {"prompt_val", prompt_val_id_},
              {"type_token_ids", type_token_ids_},
              {"key_token_ids", key_token_ids_}}},
            {"schema_version", schema_version_}};
  }

  static Vocabulary from_json(const nlohmann::json& j) {
    Vocabulary v;
    v.id_to_token_ = j.at("tokens").get<std::vector<std::string>>();
    for (int i = 0; i < static_cast<int>(v.id_to_token_.size()); ++i)
      v.token_to_id_[v.id_to_token_[static_cast<size_t>(i)]] = i;
    const auto& s = j.at("specials");
    v.specials_end_ = s.at("block_end").get<int>();
    v.pad_id_ = s.at("pad").get<int>();
    v.bos_id_ = s.at("bos").get<int>();
    v.eos_id_ = s.at("eos").get<int>();
    v.unk_id_ = s.at("unk").get<int>();
    v.ent_sep_id_ = s.at("ent_sep").get<int>();
    v.prompt_ent_names_id_ = s.at("prompt_ent_names").get<int>();
    v.prompt_type_attr_id_ = s.at("prompt_type_attr").get<int>();
    v.prompt_val_id_ = s.at("prompt_val").get<int>();
    v.type_token_ids_ = s.at("type_token_ids").get<std::vector<int>>();
    v.key_token_ids_ = s.at("key_token_ids").get<std::vector<int>>();
    v.schema_version_ = j.value("schema_version", std::string{});
    return v;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write vocabulary file: " + path);
    out << to_json().dump(2) << "\n";
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read vocabulary file: " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }

  friend Vocabulary build_vocab(const std::vector<std::string>&, const CompiledSchema&, int,
                                const std::vector<std::string>&);

 private:
  int push(const std::string& token) {
    int id = size();
    id_to_token_.push_back(token);
    token_to_id_[token] = id;
    return id;
  }

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  int pad_id_ = -1, bos_id_ = -1, eos_id_ = -1, unk_id_ = -1, ent_sep_id_ = -1;
  int prompt_ent_names_id_ = -1, prompt_type_attr_id_ = -1, prompt_val_id_ = -1;
  int specials_end_ = 0;
  std::vector<int> type_token_ids_;
  std::vector<int> key_token_ids_;
  std::string schema_version_;
};

// Builds the vocabulary from a corpus. All schema/control tokens are always
// present regardless of corpus frequency; corpus words below min_count map
// to <unk>. `extra_tokens` are plain (non-special) entries, used e.g. for
// the JSON baseline's structural punctuation.
inline Vocabulary build_vocab(const std::vector<std::string>& corpus,
                              const CompiledSchema& schema, int min_count = 1,
                              const std::vector<std::string>& extra_tokens = {}) {
  if (corpus.empty()) throw ValidationError("build_vocab: empty corpus");
  if (min_count < 1) throw ValidationError("build_vocab: min_count must be >= 1");

  Vocabulary v;
  v.schema_version_ = schema.version();
  v.pad_id_ = v.push(control::kPad);
  v.bos_id_ = v.push(control::kBos);
  v.eos_id_ = v.push(control::kEos);
  v.ent_sep_id_ = v.push(control::kEntSep);
  v.prompt_ent_names_id_ = v.push(control::kPredEntNames);
  v.prompt_type_attr_id_ = v.push(control::kPredTypeAndAttr);
  v.prompt_val_id_ = v.push(control::kPredVal);
  for (const auto& t : schema.entity_types())
    v.type_token_ids_.push_back(v.push(schema.token_for_type(t)));
  for (const auto& k : schema.attribute_keys())
    v.key_token_ids_.push_back(v.push(schema.token_for_key(k)));
  v.specials_end_ = v.size();
  v.unk_id_ = v.push(kUnkToken);

  for (const auto& t : extra_tokens)
    if (!v.contains(t)) v.push(t);

  std::map<std::string, int64_t> counts;
  for (const auto& text : corpus)
    for (auto& w : normalize_words(text)) ++counts[w];

  std::vector<std::pair<std::string, int64_t>> items(counts.begin(), counts.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (const auto& [word, count] : items) {
    if (count < min_count) continue;
    if (!v.contains(word)) v.push(word);
  }
  return v;
}

}  // namespace telesee
