#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "varda/config.hpp"

namespace varda {

inline constexpr const char* kToolVersion = "0.1.0";

/// Record of one command invocation. The id hashes only what determines the
/// outputs (command, resolved config, seed, tool version, dataset hash), so
/// reruns with the same inputs share an id and produce identical files.
struct RunManifest {
  std::string command;
  std::vector<KeyValue> config;
  std::uint64_t seed = 0;
  std::string tool_version = kToolVersion;
  std::string dataset_hash;
  std::vector<std::pair<std::string, std::string>> paths;
  std::string started_at;  // UTC, ISO 8601

  std::string id() const;
  std::string text() const;
  /// Writes to a sibling temporary and renames over `path`.
  void write_atomic(const std::filesystem::path& path) const;
};

std::string utc_timestamp();

/// Writes `bytes` to a sibling temporary and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace varda
