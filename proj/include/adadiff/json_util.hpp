#pragma once

#include "adadiff/error.hpp"

#include <json.hpp>

#include <set>
#include <string>

namespace adadiff {

using json = nlohmann::ordered_json;

/// Reads fields from a JSON object and rejects keys that were never asked for.
///
///   ObjectReader r(node, "mapper");
///   r.read("epochs", cfg.epochs);
///   r.finish();   // throws ConfigError naming any unknown key
class ObjectReader {
public:
  ObjectReader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) {
      throw ConfigError(path_ + ": expected an object");
    }
  }

  bool has(const std::string& key) const { return node_.contains(key); }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!node_.contains(key)) {
      return;
    }
    try {
      out = node_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  const json& child(const std::string& key) {
    seen_.insert(key);
    return node_.at(key);
  }

  std::string childPath(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& item : node_.items()) {
      if (!seen_.count(item.key())) {
        throw ConfigError(path_ + ": unknown key '" + item.key() + "'");
      }
    }
  }

private:
  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

} // namespace adadiff
