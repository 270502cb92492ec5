#pragma once

#include <filesystem>
#include <string>

#include "varda/synth.hpp"

namespace varda {

/// Writes manifest.txt plus one .vten file per image and label under `dir`
/// (created if missing). Layout is described in docs/formats.md.
void save_dataset(const std::filesystem::path& dir, const Splits& splits);

/// Inverse of save_dataset. Throws FormatError on a malformed manifest or
/// tensor file; the offset is a byte offset into the offending file.
Splits load_dataset(const std::filesystem::path& dir);

/// Git-style content hash of a saved dataset (hex SHA-1 over the manifest and
/// the blob hash of every referenced file).
std::string dataset_hash(const std::filesystem::path& dir);

std::string sha1_hex(const std::string& bytes);

/// SHA-1 of "blob <size>\0<bytes>", as git computes for a file.
std::string git_blob_hash(const std::string& bytes);

}  // namespace varda
