#pragma once

#include <fstream>
#include <initializer_list>
#include <string>

#include "duomodal/errors.hpp"

#include "json.hpp"

namespace duomodal {

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw_data("cannot open: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw_data(path + ": invalid JSON: " + e.what());
  }
  return j;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw_data("cannot open for writing: " + path);
  os << j.dump(2) << "\n";
}

// Configs reject keys they do not understand instead of ignoring typos.
inline void require_known_keys(const nlohmann::json& j,
                               std::initializer_list<const char*> allowed,
                               const std::string& ctx) {
  if (!j.is_object()) throw_data(ctx + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) throw_data(ctx + ": unknown key \"" + it.key() + "\"");
  }
}

// Applies one dotted-key override ("model.d=128") onto a JSON document. The
// value is parsed as JSON when possible and kept as a string otherwise.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw_usage("override must look like key=value, got \"" + assignment +
                "\"");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  nlohmann::json* node = &j;
  std::size_t pos = 0;
  while (true) {
    const auto dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot - pos);
    if (part.empty())
      throw_usage("override key \"" + key + "\" has an empty segment");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    pos = dot + 1;
  }
}

}  // namespace duomodal
