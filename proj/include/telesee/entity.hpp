#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "telesee/common.hpp"

namespace telesee {

// One extracted unit: a name, an entity type, and attribute key -> value.
// Keys are schema display names; values may be empty strings.
struct StructuredEntity {
  std::string name;
  std::string type;
  std::map<std::string, std::string> attributes;

  bool operator==(const StructuredEntity&) const = default;

  nlohmann::json to_json() const {
    return {{"name", name}, {"type", type}, {"attributes", attributes}};
  }

  static StructuredEntity from_json(const nlohmann::json& j) {
    StructuredEntity e;
    e.name = j.at("name").get<std::string>();
    e.type = j.value("type", std::string{});
    if (j.contains("attributes")) {
      if (!j["attributes"].is_object())
        throw ValidationError("entity 'attributes' must be an object");
      for (const auto& [k, val] : j["attributes"].items())
        e.attributes[k] = val.get<std::string>();
    }
    return e;
  }
};

// Ordered for presentation only; the metric is order-invariant.
struct EntitySet {
  std::vector<StructuredEntity> entities;
  std::optional<std::string> schema_version;

  size_t size() const { return entities.size(); }
  bool empty() const { return entities.empty(); }
};

struct DocumentRecord {
  std::string doc_id;
  std::string text;
  std::optional<EntitySet> entities;  // absent for extraction inputs

  nlohmann::json to_json() const {
    nlohmann::json j = {{"doc_id", doc_id}, {"text", text}};
    if (entities) {
      nlohmann::json ents = nlohmann::json::array();
      for (const auto& e : entities->entities) ents.push_back(e.to_json());
      j["entities"] = ents;
      if (entities->schema_version) j["schema_version"] = *entities->schema_version;
    }
    return j;
  }

  static DocumentRecord from_json(const nlohmann::json& j) {
    DocumentRecord r;
    r.doc_id = j.at("doc_id").get<std::string>();
    r.text = j.at("text").get<std::string>();
    if (j.contains("entities")) {
      EntitySet set;
      for (const auto& e : j["entities"]) set.entities.push_back(StructuredEntity::from_json(e));
      if (j.contains("schema_version"))
        set.schema_version = j["schema_version"].get<std::string>();
      r.entities = std::move(set);
    }
    return r;
  }
};

}  // namespace telesee
