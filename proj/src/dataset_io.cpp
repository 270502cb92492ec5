#include "varda/dataset_io.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "varda/serialize.hpp"

namespace fs = std::filesystem;

namespace varda {

namespace {

constexpr const char* kMagicLine = "varda-dataset 1";

struct Record {
  std::string id, split;
  Domain domain;
  bool has_label;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open " + p.string(), 0);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

std::string tensor_bytes(const Tensor<double>& t) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  return os.str();
}

Tensor<double> load_tensor_file(const fs::path& p) {
  const std::string bytes = read_file(p);
  std::istringstream in(bytes, std::ios::binary);
  io::Reader r(in);
  try {
    Tensor<double> t = read_tensor<double>(r);
    if (r.offset() != bytes.size()) throw FormatError("trailing bytes after tensor record", r.offset());
    return t;
  } catch (const FormatError& e) {
    throw FormatError(p.string() + ": " + e.what(), e.offset());
  }
}

fs::path image_path(const Record& r) { return fs::path(r.split) / (r.id + ".image.vten"); }
fs::path label_path(const Record& r) { return fs::path(r.split) / (r.id + ".label.vten"); }

std::vector<Record> records_of(const Splits& s) {
  std::vector<Record> out;
  auto add = [&](const std::vector<LabeledImage>& v, const char* split) {
    for (const auto& li : v) out.push_back({li.id, split, li.domain, li.label.has_value()});
  };
  add(s.source, "source");
  add(s.target_train, "target_train");
  add(s.target_test, "target_test");
  return out;
}

std::vector<Record> parse_manifest(const fs::path& dir) {
  const std::string text = read_file(dir / "manifest.txt");
  std::istringstream in(text);
  std::string line;
  std::uint64_t offset = 0;
  auto next = [&](const char* what) {
    if (!std::getline(in, line)) throw FormatError(std::string("manifest ends before ") + what, offset);
    const std::uint64_t at = offset;
    offset += line.size() + 1;
    return at;
  };
  std::uint64_t at = next("header");
  if (line != kMagicLine) throw FormatError("manifest: bad header line", at);
  at = next("record count");
  long long count = -1;
  if (std::sscanf(line.c_str(), "records %lld", &count) != 1 || count < 0)
    throw FormatError("manifest: bad record count line", at);
  std::vector<Record> recs;
  for (long long i = 0; i < count; ++i) {
    at = next("all records");
    std::istringstream ls(line);
    Record r;
    std::string domain;
    int label = -1;
    if (!(ls >> r.id >> r.split >> domain >> label) || (label != 0 && label != 1))
      throw FormatError("manifest: malformed record '" + line + "'", at);
    if (r.split != "source" && r.split != "target_train" && r.split != "target_test")
      throw FormatError("manifest: unknown split '" + r.split + "'", at);
    try {
      r.domain = parse_domain(domain);
    } catch (const FormatError&) {
      throw FormatError("manifest: unknown domain '" + domain + "'", at);
    }
    r.has_label = label == 1;
    recs.push_back(std::move(r));
  }
  while (std::getline(in, line)) {
    if (!line.empty()) throw FormatError("manifest: more records than declared", offset);
    offset += line.size() + 1;
  }
  return recs;
}

std::string hex(const unsigned char* d, std::size_t n) {
  std::string out;
  char buf[3];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", d[i]);
    out += buf;
  }
  return out;
}


}  // namespace

std::string sha1_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha1(), nullptr) != 1)
    throw std::runtime_error("SHA-1 digest failed");
  return hex(md, len);
}

std::string git_blob_hash(const std::string& bytes) {
  std::string blob = "blob " + std::to_string(bytes.size());
  blob.push_back('\0');
  blob += bytes;
  return sha1_hex(blob);
}

void save_dataset(const fs::path& dir, const Splits& splits) {
  fs::create_directories(dir);
  for (const char* s : {"source", "target_train", "target_test"}) fs::create_directories(dir / s);
  const auto recs = records_of(splits);
  std::ostringstream manifest;
  manifest << kMagicLine << '\n' << "records " << recs.size() << '\n';
  for (const auto& r : recs)
    manifest << r.id << ' ' << r.split << ' ' << domain_name(r.domain) << ' ' << (r.has_label ? 1 : 0)
             << '\n';
  std::size_t i = 0;
  for (const auto* split : {&splits.source, &splits.target_train, &splits.target_test})
    for (const auto& li : *split) {
      const Record& r = recs[i++];
      write_file(dir / image_path(r), tensor_bytes(li.image));
      if (li.label) write_file(dir / label_path(r), tensor_bytes(*li.label));
    }
  write_file(dir / "manifest.txt", manifest.str());
}

Splits load_dataset(const fs::path& dir) {
  Splits out;
  for (const auto& r : parse_manifest(dir)) {
    LabeledImage li;
    li.id = r.id;
    li.domain = r.domain;
    li.image = load_tensor_file(dir / image_path(r));
    if (r.has_label) li.label = load_tensor_file(dir / label_path(r));
    auto& dst = r.split == "source" ? out.source : r.split == "target_train" ? out.target_train : out.target_test;
    dst.push_back(std::move(li));
  }
  return out;
}

std::string dataset_hash(const fs::path& dir) {
  const std::string manifest = read_file(dir / "manifest.txt");
  std::string listing = "manifest.txt " + git_blob_hash(manifest) + "\n";
  for (const auto& r : parse_manifest(dir)) {
    for (const fs::path& p : {image_path(r), label_path(r)}) {
      if (p == label_path(r) && !r.has_label) continue;
      listing += p.generic_string() + ' ' + git_blob_hash(read_file(dir / p)) + '\n';
    }
  }
  return sha1_hex(listing);
}

}  // namespace varda
