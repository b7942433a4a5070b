// Key=value configuration text: the config-file format, the manifest
// format, and the config block embedded in checkpoints all share it.
// Lines are `key = value`; '#' starts a comment.
#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace taylornet {

class KeyValues {
 public:
  void set(const std::string& k, const std::string& v) { kv_[k] = v; }
  void set_int(const std::string& k, int64_t v) { kv_[k] = std::to_string(v); }
  void set_double(const std::string& k, double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    kv_[k] = os.str();
  }
  void set_bool(const std::string& k, bool v) { kv_[k] = v ? "true" : "false"; }

  bool has(const std::string& k) const { return kv_.count(k) > 0; }

  std::string get(const std::string& k) const {
    auto it = kv_.find(k);
    if (it == kv_.end()) throw std::invalid_argument("missing config key: " + k);
    return it->second;
  }
  std::string get_or(const std::string& k, const std::string& dflt) const {
    auto it = kv_.find(k);
    return it == kv_.end() ? dflt : it->second;
  }
  int64_t get_int(const std::string& k) const {
    try {
      return std::stoll(get(k));
    } catch (const std::exception&) {
      throw std::invalid_argument("config key " + k + " is not an integer: " + get(k));
    }
  }
  double get_double(const std::string& k) const {
    try {
      return std::stod(get(k));
    } catch (const std::exception&) {
      throw std::invalid_argument("config key " + k + " is not a number: " + get(k));
    }
  }
  bool get_bool(const std::string& k) const {
    const std::string v = get(k);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config key " + k + " is not a boolean: " + v);
  }

  const std::map<std::string, std::string>& entries() const { return kv_; }

  std::string serialize() const {
    std::ostringstream os;
    for (const auto& [k, v] : kv_) os << k << " = " << v << "\n";
    return os.str();
  }

  static KeyValues parse(const std::string& text) {
    KeyValues out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const size_t eq = line.find('=');
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
      };
      if (eq == std::string::npos) {
        if (!trim(line).empty())
          throw std::invalid_argument("config line " + std::to_string(lineno) +
                                      " is not `key = value`: " + line);
        continue;
      }
      const std::string k = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
      if (k.empty()) throw std::invalid_argument("empty key on config line " + std::to_string(lineno));
      out.kv_[k] = v;
    }
    return out;
  }

  static KeyValues load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config file: " + path);
    out << serialize();
  }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace taylornet
