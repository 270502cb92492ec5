#include "varda/manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include "varda/dataset_io.hpp"

namespace varda {

std::string RunManifest::id() const {
  std::ostringstream os;
  os << "command=" << command << '\n' << "seed=" << seed << '\n' << "version=" << tool_version << '\n'
     << "dataset=" << dataset_hash << '\n';
  for (const auto& kv : config) os << kv.key << '=' << kv.value << '\n';
  return sha1_hex(os.str()).substr(0, 16);
}

std::string RunManifest::text() const {
  std::ostringstream os;
  os << "# varda run manifest\n"
     << "id = " << id() << '\n'
     << "command = " << command << '\n'
     << "tool_version = " << tool_version << '\n'
     << "seed = " << seed << '\n'
     << "dataset_hash = " << dataset_hash << '\n'
     << "started_at = " << started_at << '\n';
  for (const auto& [k, v] : paths) os << "path." << k << " = " << v << '\n';
  for (const auto& kv : config) os << "config." << kv.key << " = " << kv.value << '\n';
  return os.str();
}

void RunManifest::write_atomic(const std::filesystem::path& path) const { write_file_atomic(path, text()); }

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << bytes;
    out.flush();
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace varda
