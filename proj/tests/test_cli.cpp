#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "varda/dataset_io.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = varda::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "varda_cli_test" / name;
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string manifest_id(const fs::path& manifest) {
  std::istringstream in(slurp(manifest));
  for (std::string line; std::getline(in, line);)
    if (line.rfind("id = ", 0) == 0) return line.substr(5);
  return {};
}

// Small dataset shared by the train and eval cases.
fs::path small_dataset() {
  static const fs::path dir = [] {
    const fs::path d = scratch("small");
    fs::create_directories(d.parent_path());
    std::ofstream(d.parent_path() / "small.spec") << "n_source = 12\nn_target_train = 12\nn_target_test = 6\n";
    REQUIRE(run({"gen", "--spec", (d.parent_path() / "small.spec").string(), "--out", d.string()}).code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("gen: default counts, reproducible hash, created directories") {
  const fs::path a = scratch("gen_a/nested/deeper"), b = scratch("gen_b");
  const Result ra = run({"gen", "--out", a.string(), "--seed", "7"});
  REQUIRE(ra.code == 0);
  CHECK(ra.out.find("source 120, target_train 120, target_test 40") != std::string::npos);
  CHECK(fs::is_directory(a));
  const Result rb = run({"gen", "--out", b.string(), "--seed", "7"});
  REQUIRE(rb.code == 0);
  CHECK(varda::dataset_hash(a) == varda::dataset_hash(b));
  CHECK(manifest_id(a / "run.manifest") == manifest_id(b / "run.manifest"));
  const fs::path c = scratch("gen_c");
  REQUIRE(run({"gen", "--out", c.string(), "--seed", "8"}).code == 0);
  CHECK(varda::dataset_hash(a) != varda::dataset_hash(c));
}

TEST_CASE("gen: spec errors carry the line number") {
  const fs::path spec = scratch("bad.spec");
  fs::create_directories(spec.parent_path());
  std::ofstream(spec) << "# comment\nn_source = 10\nn_target_test = ten\n";
  const Result r = run({"gen", "--spec", spec.string(), "--out", scratch("bad_out").string()});
  CHECK(r.code == varda::cli::usage);
  CHECK(r.err.find("line 3") != std::string::npos);
  std::ofstream(spec) << "source.class_means = 0.1,0.2\n";
  const Result r2 = run({"gen", "--spec", spec.string(), "--out", scratch("bad_out").string()});
  CHECK(r2.code == varda::cli::usage);
  CHECK(r2.err.find("line 1") != std::string::npos);
}

TEST_CASE("train writes manifest, loss CSV and checkpoint that reference one id") {
  const fs::path out = scratch("train");
  const Result r = run({"train", "--data", small_dataset().string(), "--out", out.string(), "--iters", "4", "--batch",
                        "3", "--seed", "2", "--alpha3", "0.5", "--disc-mode", "full"});
  REQUIRE(r.code == 0);
  const std::string id = manifest_id(out / "run.manifest");
  REQUIRE(id.size() == 16);
  const std::string csv = slurp(out / "loss.csv");
  CHECK(csv.rfind("# manifest " + id + "\niter,seg_loss,remainder_S,target_loss,discrepancy,total\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2 + 4);
  CHECK(slurp(out / "target_test_metrics.csv").rfind("# manifest " + id, 0) == 0);
  CHECK(slurp(out / "run.manifest").find("config.train.disc_mode = full") != std::string::npos);

  // same inputs, different output directory: same id, identical CSV
  const fs::path again = scratch("train_again");
  REQUIRE(run({"train", "--data", small_dataset().string(), "--out", again.string(), "--iters", "4", "--batch", "3",
               "--seed", "2", "--alpha3", "0.5", "--disc-mode", "full"})
              .code == 0);
  CHECK(slurp(again / "loss.csv") == csv);

  const Result e = run({"eval", "--checkpoint", (out / "checkpoint.vckp").string(), "--data",
                        small_dataset().string(), "--out", (out / "eval").string()});
  REQUIRE(e.code == 0);
  std::istringstream lines(slurp(out / "eval" / "eval_metrics.csv"));
  std::string first, header;
  std::getline(lines, first);
  std::getline(lines, header);
  CHECK(first.rfind("# manifest ", 0) == 0);
  CHECK(header == "class,dice_mean,dice_sd,assd_mean,assd_sd,n_undefined");
}

TEST_CASE("eval: ground-truth injector and configuration mismatch") {
  const Result o = run({"eval", "--oracle", "--data", small_dataset().string()});
  REQUIRE(o.code == 0);
  CHECK(o.out.find("mean    100.00") != std::string::npos);

  const fs::path out = scratch("mismatch");
  REQUIRE(run({"train", "--data", small_dataset().string(), "--out", out.string(), "--iters", "1", "--batch", "2"})
              .code == 0);
  const fs::path cfg = out / "expect.cfg";
  std::ofstream(cfg) << "latent_channels = 8\ndecoder_depth = 7\n";
  const Result m = run({"eval", "--checkpoint", (out / "checkpoint.vckp").string(), "--data",
                        small_dataset().string(), "--config", cfg.string()});
  CHECK(m.code == varda::cli::usage);
  CHECK(m.err.find("latent_channels: 8 vs 4") != std::string::npos);
  CHECK(m.err.find("decoder_depth: 7 vs 3") != std::string::npos);
}

TEST_CASE("flag validation and exit codes") {
  const std::string data = small_dataset().string();
  CHECK(run({}).code == varda::cli::usage);
  CHECK(run({"train", "--data", data}).code == varda::cli::usage);
  CHECK(run({"train", "--data", data, "--out", scratch("x").string(), "--disc-mode", "wide"}).code ==
        varda::cli::usage);
  const Result ld = run({"train", "--data", data, "--out", scratch("ld").string(), "--latent-dim", "30"});
  CHECK(ld.code == varda::cli::usage);
  CHECK(ld.err.find("latent grid") != std::string::npos);
  const fs::path ld2 = scratch("ld2");
  CHECK(run({"train", "--data", data, "--out", ld2.string(), "--latent-dim", "32", "--iters", "1"}).code == 0);
  CHECK(slurp(ld2 / "run.manifest").find("config.net.latent_channels = 2") != std::string::npos);
  CHECK(run({"train", "--data", scratch("nowhere").string(), "--out", scratch("y").string()}).code ==
        varda::cli::usage);
  CHECK(run({"--help"}).code == 0);

  setenv("VARDA_THREADS", "many", 1);
  CHECK(run({"train", "--data", data, "--out", scratch("th").string(), "--iters", "1"}).code == varda::cli::usage);
  setenv("VARDA_THREADS", "2", 1);
  CHECK(run({"train", "--data", data, "--out", scratch("th").string(), "--iters", "1"}).code == 0);
  unsetenv("VARDA_THREADS");
}

TEST_CASE("numerical abort exits with code 3 and a diagnostic") {
  const Result r = run({"train", "--data", small_dataset().string(), "--out", scratch("nan").string(), "--iters",
                        "50", "--lr", "1e200", "--batch", "2"});
  CHECK(r.code == varda::cli::numerical);
  CHECK(r.err.find("non-finite loss") != std::string::npos);
  CHECK(r.err.find("parameter norms") != std::string::npos);
}
