#include "varda/config.hpp"

#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace varda {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<KeyValue> parse_key_values(const std::string& text) {
  std::vector<KeyValue> out;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key = value, got '" + t + "'", n);
    KeyValue kv{trim(t.substr(0, eq)), trim(t.substr(eq + 1)), n};
    if (kv.key.empty()) throw ConfigError("empty key", n);
    out.push_back(std::move(kv));
  }
  return out;
}

std::vector<KeyValue> read_key_values_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path, 0);
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_key_values(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what(), e.line());
  }
}

double parse_double(const KeyValue& kv) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(kv.value.c_str(), &end);
  if (kv.value.empty() || *end != '\0' || errno == ERANGE)
    throw ConfigError(kv.key + ": expected a number, got '" + kv.value + "'", kv.line);
  return v;
}

std::int64_t parse_int(const KeyValue& kv) {
  std::int64_t v = 0;
  const auto* b = kv.value.data();
  const auto [p, ec] = std::from_chars(b, b + kv.value.size(), v);
  if (ec != std::errc{} || p != b + kv.value.size())
    throw ConfigError(kv.key + ": expected an integer, got '" + kv.value + "'", kv.line);
  return v;
}

std::uint64_t parse_uint(const KeyValue& kv) {
  std::uint64_t v = 0;
  const auto* b = kv.value.data();
  const auto [p, ec] = std::from_chars(b, b + kv.value.size(), v);
  if (ec != std::errc{} || p != b + kv.value.size())
    throw ConfigError(kv.key + ": expected a nonnegative integer, got '" + kv.value + "'", kv.line);
  return v;
}

bool parse_bool(const KeyValue& kv) {
  if (kv.value == "1" || kv.value == "true" || kv.value == "yes") return true;
  if (kv.value == "0" || kv.value == "false" || kv.value == "no") return false;
  throw ConfigError(kv.key + ": expected true or false, got '" + kv.value + "'", kv.line);
}

void apply_key_values(const std::vector<KeyValue>& kvs, const std::function<bool(const KeyValue&)>& assign,
                      bool ignore_unknown) {
  for (const auto& kv : kvs)
    if (!assign(kv) && !ignore_unknown) throw ConfigError("unknown key '" + kv.key + "'", kv.line);
}

std::string format_double(double v) {
  char buf[32];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace varda
