#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "varda/error.hpp"

namespace varda {

struct KeyValue {
  std::string key;
  std::string value;
  int line = 0;
};

/// Parses `key = value` lines. Blank lines and lines starting with '#' are
/// skipped; whitespace around keys and values is trimmed.
std::vector<KeyValue> parse_key_values(const std::string& text);
std::vector<KeyValue> read_key_values_file(const std::string& path);

double parse_double(const KeyValue& kv);
std::int64_t parse_int(const KeyValue& kv);
std::uint64_t parse_uint(const KeyValue& kv);
bool parse_bool(const KeyValue& kv);

/// Feeds every entry to `assign`, which returns false for keys it does not
/// know. Unknown keys raise ConfigError unless `ignore_unknown`.
void apply_key_values(const std::vector<KeyValue>& kvs, const std::function<bool(const KeyValue&)>& assign,
                      bool ignore_unknown = false);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

}  // namespace varda
