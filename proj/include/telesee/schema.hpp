#pragma once

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "telesee/common.hpp"
#include "telesee/text.hpp"

namespace telesee {

// Control tokens used by prompts and decoding. The three prompt strings are
// fixed; the separator/termination tokens belong to this toolkit.
namespace control {
inline constexpr const char* kPredEntNames = "pred_ent_names";
inline constexpr const char* kPredTypeAndAttr = "pred_type_and_attribute";
inline constexpr const char* kPredVal = "pred_val";
inline constexpr const char* kEntSep = "<ent_sep>";
inline constexpr const char* kBos = "<bos>";
inline constexpr const char* kEos = "<eos>";
inline constexpr const char* kPad = "<pad>";

inline const std::vector<std::string>& all() {
  static const std::vector<std::string> tokens = {
      kPad, kBos, kEos, kEntSep, kPredEntNames, kPredTypeAndAttr, kPredVal};
  return tokens;
}
}  // namespace control

struct SchemaDef {
  std::string version;
  std::vector<std::string> entity_types;
  std::vector<std::string> attribute_keys;

  static SchemaDef from_json(const nlohmann::json& j) {
    SchemaDef def;
    if (!j.is_object()) throw ValidationError("schema: top-level JSON object expected");
    def.version = j.value("version", std::string{});
    if (!j.contains("entity_types") || !j["entity_types"].is_array())
      throw ValidationError("schema: 'entity_types' array is required");
    if (!j.contains("attribute_keys") || !j["attribute_keys"].is_array())
      throw ValidationError("schema: 'attribute_keys' array is required");
    for (const auto& e : j["entity_types"]) def.entity_types.push_back(e.get<std::string>());
    for (const auto& e : j["attribute_keys"]) def.attribute_keys.push_back(e.get<std::string>());
    return def;
  }

  nlohmann::json to_json() const {
    return {{"version", version},
            {"entity_types", entity_types},
            {"attribute_keys", attribute_keys}};
  }

  void validate() const {
    if (entity_types.empty()) throw ValidationError("schema: entity_types must be non-empty");
    if (attribute_keys.empty()) throw ValidationError("schema: attribute_keys must be non-empty");
    auto check_list = [](const std::vector<std::string>& names, const char* what) {
      std::set<std::string> seen;
      for (const auto& name : names) {
        std::string norm = lowercase(trim(name));
        if (norm.empty())
          throw ValidationError(std::string("schema: empty ") + what + " display name");
        if (!seen.insert(norm).second)
          throw ValidationError(std::string("schema: duplicate ") + what + " '" + name + "'");
      }
    };
    check_list(entity_types, "entity type");
    check_list(attribute_keys, "attribute key");
  }
};

enum class ElementKind { EntityType, AttributeKey };

struct SchemaElement {
  ElementKind kind;
  std::string display;
};

// Slug rule: lowercase the display name, collapse runs of non-alphanumerics
// to '_' and strip edge underscores, then prefix by element kind.
inline std::string slugify(std::string_view display) {
  std::string slug;
  bool pending_sep = false;
  for (char ch : display) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      if (pending_sep && !slug.empty()) slug.push_back('_');
      pending_sep = false;
      slug.push_back(detail::ascii_lower(ch));
    } else {
      pending_sep = true;
    }
  }
  return slug;
}

class CompiledSchema {
 public:
  CompiledSchema() = default;

  const std::string& version() const { return version_; }
  const std::vector<std::string>& entity_types() const { return entity_types_; }
  const std::vector<std::string>& attribute_keys() const { return attribute_keys_; }

  const std::string& token_for_type(const std::string& display) const {
    auto it = type_to_token_.find(display);
    if (it == type_to_token_.end())
      throw SchemaError("unknown entity type '" + display + "'");
    return it->second;
  }

  const std::string& token_for_key(const std::string& display) const {
    auto it = key_to_token_.find(display);
    if (it == key_to_token_.end())
      throw SchemaError("unknown attribute key '" + display + "'");
    return it->second;
  }

  bool has_type(const std::string& display) const { return type_to_token_.count(display) > 0; }
  bool has_key(const std::string& display) const { return key_to_token_.count(display) > 0; }

  // Lookup by display name across both element kinds.
  const std::string& lookup_token(const std::string& display) const {
    auto t = type_to_token_.find(display);
    auto k = key_to_token_.find(display);
    if (t != type_to_token_.end() && k != key_to_token_.end())
      throw SchemaError("ambiguous element '" + display + "' (both type and key)");
    if (t != type_to_token_.end()) return t->second;
    if (k != key_to_token_.end()) return k->second;
    throw SchemaError("unknown schema element '" + display + "'");
  }

  SchemaElement decode_token(const std::string& token) const {
    auto it = token_to_element_.find(token);
    if (it == token_to_element_.end())
      throw SchemaError("not a registered special token: '" + token + "'");
    return it->second;
  }

  bool is_registered(const std::string& token) const {
    return token_to_element_.count(token) > 0;
  }

  // Control tokens plus type and key tokens, in the canonical order used to
  // reserve the vocabulary's special block.
  std::vector<std::string> all_special_tokens() const {
    std::vector<std::string> out = control::all();
    for (const auto& t : entity_types_) out.push_back(type_to_token_.at(t));
    for (const auto& k : attribute_keys_) out.push_back(key_to_token_.at(k));
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json types = nlohmann::json::array();
    for (const auto& t : entity_types_)
      types.push_back({{"display", t}, {"token", type_to_token_.at(t)}});
    nlohmann::json keys = nlohmann::json::array();
    for (const auto& k : attribute_keys_)
      keys.push_back({{"display", k}, {"token", key_to_token_.at(k)}});
    return {{"version", version_},
            {"entity_types", types},
            {"attribute_keys", keys},
            {"control_tokens", control::all()}};
  }

  static CompiledSchema from_json(const nlohmann::json& j) {
    SchemaDef def;
    def.version = j.value("version", std::string{});
    for (const auto& e : j.at("entity_types")) def.entity_types.push_back(e.at("display").get<std::string>());
    for (const auto& e : j.at("attribute_keys")) def.attribute_keys.push_back(e.at("display").get<std::string>());
    return compile(def);
  }

  static CompiledSchema compile(const SchemaDef& def) {
    def.validate();
    CompiledSchema cs;
    cs.version_ = def.version;
    cs.entity_types_ = def.entity_types;
    cs.attribute_keys_ = def.attribute_keys;
    std::map<std::string, std::string> token_owner;  // token -> display
    for (const auto& c : control::all()) token_owner[c] = "(control token)";
    auto add = [&](const std::string& display, ElementKind kind) {
      std::string slug = slugify(display);
      if (slug.empty())
        throw ValidationError("schema: display name '" + display + "' slugs to nothing");
      std::string token =
          (kind == ElementKind::EntityType ? "ent_type_" : "attr_") + slug;
      auto [it, inserted] = token_owner.emplace(token, display);
      if (!inserted)
        throw SchemaError("slug collision on '" + token + "' between '" + it->second +
                          "' and '" + display + "'");
      if (kind == ElementKind::EntityType)
        cs.type_to_token_[display] = token;
      else
        cs.key_to_token_[display] = token;
      cs.token_to_element_[token] = SchemaElement{kind, display};
    };
    for (const auto& t : def.entity_types) add(t, ElementKind::EntityType);
    for (const auto& k : def.attribute_keys) add(k, ElementKind::AttributeKey);
    return cs;
  }

 private:
  std::string version_;
  std::vector<std::string> entity_types_;
  std::vector<std::string> attribute_keys_;
  std::map<std::string, std::string> type_to_token_;
  std::map<std::string, std::string> key_to_token_;
  std::map<std::string, SchemaElement> token_to_element_;
};

inline CompiledSchema compile_schema(const SchemaDef& def) {
  return CompiledSchema::compile(def);
}

struct SavingsRow {
  ElementKind kind;
  std::string display;
  std::string token;
  size_t baseline_pieces;
  double ratio;  // baseline_pieces / 1
};

struct SavingsReport {
  std::vector<SavingsRow> rows;
  double mean_ratio = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& r : rows)
      items.push_back({{"kind", r.kind == ElementKind::EntityType ? "entity_type" : "attribute_key"},
                       {"display", r.display},
                       {"token", r.token},
                       {"baseline_tokens", r.baseline_pieces},
                       {"special_tokens", 1},
                       {"ratio", r.ratio}});
    return {{"elements", items}, {"mean_ratio", mean_ratio}};
  }
};

// Per-element cost of spelling a schema phrase out versus emitting its
// single special token. `splitter` defaults to the subword-style splitter.
inline SavingsReport token_savings(
    const CompiledSchema& schema,
    const std::function<std::vector<std::string>(std::string_view)>& splitter = subword_pieces) {
  SavingsReport report;
  auto add = [&](const std::string& display, const std::string& token, ElementKind kind) {
    size_t pieces = splitter(display).size();
    if (pieces == 0) pieces = 1;
    report.rows.push_back({kind, display, token, pieces, static_cast<double>(pieces)});
  };
  for (const auto& t : schema.entity_types())
    add(t, schema.token_for_type(t), ElementKind::EntityType);
  for (const auto& k : schema.attribute_keys())
    add(k, schema.token_for_key(k), ElementKind::AttributeKey);
  double sum = 0.0;
  for (const auto& r : report.rows) sum += r.ratio;
  report.mean_ratio = report.rows.empty() ? 0.0 : sum / static_cast<double>(report.rows.size());
  return report;
}

inline const char* element_kind_name(ElementKind k) {
  return k == ElementKind::EntityType ? "entity type" : "attribute key";
}

}  // namespace telesee
