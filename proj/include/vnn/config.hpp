#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "vnn/errors.hpp"

namespace vnn {

// Flat `key = value` configuration with [section] headers and '#' comments.
// Keys are addressed as "section.key"; keys before any header have no prefix.
// Unknown keys are rejected against a schema so typos fail loudly.
class Config {
 public:
  Config() = default;

  static Config parse_text(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string s = strip(line);
      if (s.empty() || s[0] == '#') continue;
      if (s.front() == '[') {
        if (s.back() != ']')
          throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section");
        section = strip(s.substr(1, s.size() - 2));
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
      std::string key = strip(s.substr(0, eq));
      std::string value = strip(s.substr(eq + 1));
      if (key.empty())
        throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
      cfg.values_[section.empty() ? key : section + "." + key] = value;
    }
    return cfg;
  }

  // Loads either the flat text format or a manifest.json produced by a
  // previous run (its resolved_config object re-creates the run exactly).
  static Config load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (path.extension() == ".json") {
      nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
      if (j.is_discarded()) throw ConfigError("config: " + path.string() + " is not valid JSON");
      const auto& rc = j.contains("resolved_config") ? j.at("resolved_config") : j;
      Config cfg;
      for (const auto& [k, v] : rc.items())
        cfg.values_[k] = v.is_string() ? v.get<std::string>() : v.dump();
      return cfg;
    }
    return parse_text(text);
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError("config field '" + key + "': expected a number, got '" + it->second +
                        "'");
    }
  }

  long get_int(const std::string& key, long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const long v = std::stol(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError("config field '" + key + "': expected an integer, got '" + it->second +
                        "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config field '" + key + "': expected true/false, got '" + it->second +
                      "'");
  }

  // Comma- or space-separated list of numbers.
  template <typename T>
  std::vector<T> get_list(const std::string& key, const std::vector<T>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<T> out;
    std::string item;
    std::istringstream in(it->second);
    std::string token;
    while (std::getline(in, token, ',')) {
      std::istringstream ts(token);
      std::string word;
      while (ts >> word) {
        try {
          if constexpr (std::is_integral_v<T>)
            out.push_back(static_cast<T>(std::stol(word)));
          else
            out.push_back(static_cast<T>(std::stod(word)));
        } catch (...) {
          throw ConfigError("config field '" + key + "': bad list element '" + word + "'");
        }
      }
    }
    if (out.empty())
      throw ConfigError("config field '" + key + "': expected a non-empty list");
    return out;
  }

  std::vector<std::string> get_string_list(const std::string& key,
                                           const std::vector<std::string>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::string> out;
    std::istringstream in(it->second);
    std::string token;
    while (std::getline(in, token, ',')) {
      std::istringstream ts(token);
      std::string word;
      while (ts >> word) out.push_back(word);
    }
    if (out.empty())
      throw ConfigError("config field '" + key + "': expected a non-empty list");
    return out;
  }

  // Every key must belong to the schema; reports the first unknown field.
  void validate_keys(const std::vector<std::string>& schema) const {
    for (const auto& [k, v] : values_) {
      bool known = false;
      for (const auto& s : schema)
        if (s == k) {
          known = true;
          break;
        }
      if (!known) throw ConfigError("config field '" + k + "' is not a recognized key");
    }
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string strip(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace vnn
