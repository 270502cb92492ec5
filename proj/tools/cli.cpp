#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "varda/dataset_io.hpp"
#include "varda/experiment.hpp"
#include "varda/manifest.hpp"
#include "varda/verify/suite.hpp"

namespace fs = std::filesystem;

namespace varda::cli {

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int env_threads() {
  const char* v = std::getenv("VARDA_THREADS");
  if (!v || !*v) return int(std::max(1u, std::thread::hardware_concurrency()));
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024) throw UsageError(std::string("VARDA_THREADS must be a positive integer, got '") + v + "'");
  return int(n);
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw UsageError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string cell; std::getline(ss, cell, ',');)
    if (!cell.empty()) out.push_back(cell);
  return out;
}

// Flags shared by train and grid. Unset optionals leave the config file or
// the defaults in force.
struct TrainFlags {
  std::string config, data, out;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha1, alpha2, alpha3, lr;
  std::optional<long> latent_dim, iters;
  std::optional<int> decoder_depth, batch;
  std::optional<std::string> disc_mode;
  bool weak = false;
  std::string precision = "double";
  long checkpoint_every = 0;
  bool early_stop = false;

  void add_to(CLI::App* app, bool with_seed = true) {
    app->add_option("--config", config, "key = value file with network and training settings");
    app->add_option("--data", data, "dataset directory written by `varda gen`")->required();
    app->add_option("--out", out, "output directory (created if missing)")->required();
    if (with_seed) app->add_option("--seed", seed, "seeds initialization, sampling and noise");
    app->add_option("--alpha1", alpha1, "source ELBO weight");
    app->add_option("--alpha2", alpha2, "target ELBO weight");
    app->add_option("--alpha3", alpha3, "discrepancy weight");
    app->add_option("--latent-dim", latent_dim, "latent dimension n; a multiple of the latent grid size");
    app->add_option("--decoder-depth", decoder_depth, "decoder convolution layers, 0 drops the decoder");
    app->add_flag("--weak", weak, "decoders reconstruct from the latent code alone");
    app->add_option("--disc-mode", disc_mode, "discrepancy: sliced or full")->check(CLI::IsMember({"sliced", "full"}));
    app->add_option("--iters", iters, "iteration budget");
    app->add_option("--batch", batch, "images per domain per iteration");
    app->add_option("--lr", lr, "initial learning rate");
    app->add_option("--precision", precision, "float or double")->check(CLI::IsMember({"float", "double"}));
    app->add_option("--checkpoint-every", checkpoint_every, "periodic checkpoint interval, 0 disables");
    app->add_flag("--early-stop", early_stop, "stop when the moving-average loss flattens");
  }
};

struct Resolved {
  NetConfig net;
  TrainConfig train;
};

Resolved resolve(const TrainFlags& f, const DomainData& sample) {
  Resolved r;
  if (!f.config.empty()) {
    apply_key_values(read_key_values_file(f.config),
                     [&](const KeyValue& kv) { return r.net.assign(kv) || r.train.assign(kv); });
  }
  r.net.height = sample.images.dim(2);
  r.net.width = sample.images.dim(3);
  r.net.channels = sample.images.dim(1);
  if (f.seed) {
    r.train.seed = *f.seed;
    r.net.init_seed = *f.seed;
  }
  if (f.alpha1) r.train.weights.alpha1 = *f.alpha1;
  if (f.alpha2) r.train.weights.alpha2 = *f.alpha2;
  if (f.alpha3) r.train.weights.alpha3 = *f.alpha3;
  if (f.lr) r.train.lr = *f.lr;
  if (f.iters) r.train.iterations = *f.iters;
  if (f.batch) r.train.batch = *f.batch;
  if (f.disc_mode) r.train.disc_mode = parse_disc_mode(*f.disc_mode);
  if (f.decoder_depth) r.net.decoder_depth = *f.decoder_depth;
  if (f.weak) r.net.conditioning = Conditioning::without_label;
  if (f.checkpoint_every) r.train.checkpoint_every = f.checkpoint_every;
  if (f.early_stop) r.train.early_stop = true;
  if (f.latent_dim) {
    const Index cells = r.net.grid_h() * r.net.grid_w();
    if (*f.latent_dim < 1 || cells == 0 || *f.latent_dim % cells != 0)
      throw UsageError("--latent-dim must be a positive multiple of the " + std::to_string(r.net.grid_h()) + "x" +
                       std::to_string(r.net.grid_w()) + " latent grid (" + std::to_string(cells) + ")");
    r.net.latent_channels = *f.latent_dim / cells;
  }
  try {
    r.net.validate();
    r.train.validate();
  } catch (const ContractViolation& e) {
    throw UsageError(e.what());
  }
  return r;
}

std::vector<KeyValue> manifest_config(const Resolved& r) {
  std::vector<KeyValue> out;
  for (const auto& kv : r.net.entries()) out.push_back({"net." + kv.key, kv.value, 0});
  for (const auto& kv : r.train.entries())
    if (kv.key != "checkpoint_path") out.push_back({"train." + kv.key, kv.value, 0});
  return out;
}

struct LoadedData {
  Splits splits;
  Benchmark bench;
  std::string hash;
};

LoadedData load_data(const std::string& dir) {
  if (!fs::is_directory(dir)) throw UsageError("no dataset directory " + dir);
  LoadedData d;
  d.splits = load_dataset(dir);
  if (d.splits.source.empty() || d.splits.target_train.empty())
    throw UsageError("dataset " + dir + " needs source and target_train images");
  d.bench = make_benchmark(d.splits);
  d.hash = dataset_hash(dir);
  return d;
}

std::string with_manifest(const std::string& id, const std::string& body) { return "# manifest " + id + "\n" + body; }

template <typename Scalar>
int train_impl(const Resolved& r, const LoadedData& d, const fs::path& out, const RunManifest& m, int threads,
               std::ostream& os) {
  VardaNet<Scalar> net(r.net);
  TrainConfig tc = r.train;
  const fs::path ckpt = out / "checkpoint.vckp";
  tc.checkpoint_path = ckpt.string();
  Trainer<Scalar> trainer(tc, net, d.bench.source, d.bench.target_train);
  trainer.set_manifest_id(m.id());
  LossCsv csv((out / "loss.csv").string(), m.id());
  const long every = std::max<long>(1, tc.iterations / 10);
  const TrainResult res = trainer.run([&](long it, const LossBreakdown& b) {
    csv.write(it, b);
    if ((it + 1) % every == 0)
      os << "iter " << it + 1 << "/" << tc.iterations << "  total " << b.total << "  discrepancy " << b.discrepancy
         << '\n';
  });
  csv.flush();
  trainer.save(ckpt.string());
  os << "trained " << res.history.size() << " iterations" << (res.stopped_early ? " (early stop)" : "") << '\n';
  if (!d.splits.target_test.empty()) {
    const MetricsReport rep = evaluate(net, d.bench.target_test, target_route(tc.weights), threads);
    write_file_atomic(out / "target_test_metrics.csv", with_manifest(m.id(), rep.csv()));
    os << "target test split:\n" << rep.table();
  }
  os << "manifest " << m.id() << '\n';
  return ok;
}

int cmd_gen(const std::string& spec_file, const std::string& out, std::optional<std::uint64_t> seed,
            std::ostream& os) {
  SynthSpec spec;
  if (!spec_file.empty()) {
    try {
      spec = parse_synth_spec(read_text(spec_file));
    } catch (const ConfigError& e) {
      throw ConfigError(spec_file + ": " + e.what(), e.line());
    }
  }
  if (seed) spec.seed = *seed;
  fs::create_directories(out);
  const Splits s = generate(spec);
  save_dataset(out, s);
  RunManifest m;
  m.command = "gen";
  m.config = spec.entries();
  m.seed = spec.seed;
  m.dataset_hash = dataset_hash(out);
  m.paths = {{"spec", spec_file}, {"out", out}};
  m.started_at = utc_timestamp();
  m.write_atomic(fs::path(out) / "run.manifest");
  os << "source " << s.source.size() << ", target_train " << s.target_train.size() << ", target_test "
     << s.target_test.size() << '\n'
     << "dataset hash " << m.dataset_hash << '\n';
  return ok;
}

int cmd_train(const TrainFlags& f, std::ostream& os) {
  const LoadedData d = load_data(f.data);
  const Resolved r = resolve(f, d.bench.source);
  const fs::path out(f.out);
  fs::create_directories(out);
  RunManifest m;
  m.command = "train";
  m.config = manifest_config(r);
  m.config.push_back({"precision", f.precision, 0});
  m.seed = r.train.seed;
  m.dataset_hash = d.hash;
  m.paths = {{"config", f.config}, {"data", f.data}, {"out", f.out}};
  m.started_at = utc_timestamp();
  m.write_atomic(out / "run.manifest");
  const int threads = env_threads();
  return f.precision == "float" ? train_impl<float>(r, d, out, m, threads, os)
                                : train_impl<double>(r, d, out, m, threads, os);
}

struct EvalFlags {
  std::string checkpoint, data, out, config;
  std::string split = "target_test";
  std::string domain;
  bool oracle = false;
};

int cmd_eval(const EvalFlags& f, std::ostream& os, std::ostream& es) {
  if (!fs::is_directory(f.data)) throw UsageError("no dataset directory " + f.data);
  const Splits s = load_dataset(f.data);
  const auto& items = f.split == "source" ? s.source : s.target_test;
  if (items.empty()) throw UsageError("split " + f.split + " is empty");
  const DomainData data = stack(items, true);

  RunManifest m;
  m.command = "eval";
  m.dataset_hash = dataset_hash(f.data);
  m.paths = {{"checkpoint", f.checkpoint}, {"data", f.data}, {"out", f.out}};
  m.started_at = utc_timestamp();
  MetricsReport rep;
  if (f.oracle) {
    m.config = {{"predictor", "ground-truth injector", 0}, {"split", f.split, 0}};
    rep = evaluate_oracle(data);
  } else {
    if (f.checkpoint.empty()) throw UsageError("eval needs --checkpoint (or --oracle)");
    std::ifstream in(f.checkpoint, std::ios::binary);
    if (!in) throw UsageError("cannot open checkpoint " + f.checkpoint);
    Checkpoint<double> ck = read_checkpoint<double>(in);
    NetConfig expect = ck.config;
    if (!f.config.empty())
      apply_key_values(read_key_values_file(f.config), [&](const KeyValue& kv) {
        TrainConfig ignored;
        return expect.assign(kv) || ignored.assign(kv);
      });
    expect.height = data.images.dim(2);
    expect.width = data.images.dim(3);
    expect.channels = data.images.dim(1);
    expect.classes = int(data.labels->dim(1));
    const auto diff = config_diff(expect, ck.config);
    if (!diff.empty()) {
      es << "configuration does not match the checkpoint (config/data vs checkpoint):\n";
      for (const auto& line : diff) es << "  " << line << '\n';
      return usage;
    }
    const TrainConfig tc = checkpoint_train_config(ck.state);
    Domain route = f.split == "source" ? Domain::source : target_route(tc.weights);
    if (!f.domain.empty()) route = parse_domain(f.domain);
    m.config.push_back({"split", f.split, 0});
    m.config.push_back({"route", domain_name(route), 0});
    for (const auto& kv : ck.config.entries()) m.config.push_back({"net." + kv.key, kv.value, 0});
    m.seed = tc.seed;
    const VardaNet<double> net(ck.config, ck.params);
    rep = evaluate(net, data, route, env_threads());
  }
  os << rep.table();
  if (!f.out.empty()) {
    fs::create_directories(f.out);
    m.write_atomic(fs::path(f.out) / "run.manifest");
    write_file_atomic(fs::path(f.out) / "eval_metrics.csv", with_manifest(m.id(), rep.csv()));
  }
  os << "manifest " << m.id() << '\n';
  return ok;
}

int cmd_verify(bool json, bool skip_mutation, long det_iters, std::ostream& os) {
  verify::SuiteOptions o;
  std::vector<verify::Check> checks{verify::kernel_oracle(o), verify::mixture_oracle(o), verify::spot_values(o),
                                    verify::kl_oracle(o)};
  for (auto& c : verify::gradient_checks(o)) checks.push_back(c);
  checks.push_back(verify::zero_iff(o));
  checks.push_back(verify::stability(o));
  checks.push_back(verify::metric_oracles(o));
  checks.push_back(verify::training_determinism(det_iters, 11));
  if (!skip_mutation) {
    // The quadrature check has to notice a sign flip in the kernel exponent.
    verify::SuiteOptions mutated = o;
    mutated.mutate_kernel = true;
    mutated.kernel_instances = 50;
    const verify::Check k = verify::kernel_oracle(mutated);
    verify::Check c{"mutation: flipped kernel exponent", !k.pass, k.measured, k.tolerance,
                    k.pass ? "quadrature check did not notice the mutation" : "quadrature check failed as it should",
                    k.seconds};
    checks.push_back(c);
  }
  bool all = true;
  double grad_worst = 0.0;
  for (const auto& c : checks) {
    os << (json ? verify::json_line(c) : verify::format_check(c)) << '\n';
    all = all && c.pass;
    if (c.name.rfind("gradient ", 0) == 0) grad_worst = std::max(grad_worst, c.measured);
  }
  if (!json) {
    os << "max gradient rel-err over all loss terms: " << grad_worst << '\n';
    os << (all ? "all checks passed" : "VERIFICATION FAILED") << '\n';
  }
  return all ? ok : check_failed;
}

struct GridFlags {
  TrainFlags train;
  std::string seeds = "1,2,3";
  std::string depths = "0,3,7,11";
  std::string variants = "varda";
};

int cmd_grid(GridFlags g, std::ostream& os) {
  const LoadedData d = load_data(g.train.data);
  const fs::path out(g.train.out);
  fs::create_directories(out);
  const int threads = env_threads();
  std::ostringstream csv;
  csv << "variant,decoder_depth,seed,mean_dice";
  for (int k = 1; k < 4; ++k) csv << ",dice_class" << k;
  csv << ",discrepancy_iter10,discrepancy_final,seconds\n";

  RunManifest m;
  m.command = "grid";
  m.dataset_hash = d.hash;
  m.paths = {{"config", g.train.config}, {"data", g.train.data}, {"out", g.train.out}};
  m.started_at = utc_timestamp();
  {
    const Resolved base = resolve(g.train, d.bench.source);
    m.config = manifest_config(base);
    m.config.push_back({"grid.seeds", g.seeds, 0});
    m.config.push_back({"grid.depths", g.depths, 0});
    m.config.push_back({"grid.variants", g.variants, 0});
    m.config.push_back({"precision", g.train.precision, 0});
    m.seed = base.train.seed;
  }
  m.write_atomic(out / "run.manifest");

  for (const auto& variant : split_list(g.variants)) {
    if (variant != "varda" && variant != "noadapt" && variant != "weak")
      throw UsageError("unknown grid variant '" + variant + "' (varda, noadapt, weak)");
    for (const auto& depth : split_list(g.depths))
      for (const auto& seed : split_list(g.seeds)) {
        TrainFlags f = g.train;
        f.seed = std::stoull(seed);
        f.decoder_depth = std::stoi(depth);
        if (variant == "noadapt") f.alpha2 = f.alpha3 = 0.0;
        if (variant == "weak") f.weak = true;
        const Resolved r = resolve(f, d.bench.source);
        const RunOutcome res = f.precision == "float"
                                   ? train_and_score<float>(r.net, r.train, d.bench, threads)
                                   : train_and_score<double>(r.net, r.train, d.bench, threads);
        const auto& h = res.result.history;
        const double d10 = h.size() > 10 ? h[10].discrepancy : 0.0;
        const double dfin = h.empty() ? 0.0 : h.back().discrepancy;
        csv << variant << ',' << depth << ',' << seed << ',' << format_double(res.target_test.mean_dice);
        for (const auto& c : res.target_test.classes) csv << ',' << format_double(c.dice_mean);
        csv << ',' << format_double(d10) << ',' << format_double(dfin) << ',' << format_double(res.seconds) << '\n';
        os << variant << " N=" << depth << " seed " << seed << ": target Dice " << 100.0 * res.target_test.mean_dice
           << " (" << res.seconds << " s)\n";
      }
  }
  write_file_atomic(out / "grid.csv", with_manifest(m.id(), csv.str()));
  os << "manifest " << m.id() << '\n';
  return ok;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Variational domain adaptation for segmentation on synthetic benchmarks", "varda"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  auto* gen = app.add_subcommand("gen", "generate a synthetic two-domain dataset");
  std::string spec_file, gen_out;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--spec", spec_file, "key = value spec file (defaults when omitted)");
  gen->add_option("--out", gen_out, "dataset directory (created if missing)")->required();
  gen->add_option("--seed", gen_seed, "overrides the spec seed");

  auto* train = app.add_subcommand("train", "train a model and write checkpoint, loss CSV and manifest");
  TrainFlags tf;
  tf.add_to(train);

  auto* eval = app.add_subcommand("eval", "score a checkpoint on a labelled split");
  EvalFlags ef;
  eval->add_option("--checkpoint", ef.checkpoint, "checkpoint written by train");
  eval->add_option("--data", ef.data, "dataset directory")->required();
  eval->add_option("--out", ef.out, "directory for eval_metrics.csv and the manifest");
  eval->add_option("--config", ef.config, "expected configuration, compared against the checkpoint");
  eval->add_option("--split", ef.split, "target_test or source")->check(CLI::IsMember({"target_test", "source"}));
  eval->add_option("--domain", ef.domain, "encoder to use: source or target")->check(CLI::IsMember({"source", "target"}));
  eval->add_flag("--oracle", ef.oracle, "score the ground-truth injector instead of a checkpoint");

  auto* ver = app.add_subcommand("verify", "run the oracle suites");
  bool json = false, skip_mutation = false;
  long det_iters = 20;
  ver->add_flag("--json", json, "one JSON object per check");
  ver->add_flag("--skip-mutation", skip_mutation, "skip the kernel mutation test");
  ver->add_option("--determinism-iters", det_iters, "iterations of each determinism run");

  auto* grid = app.add_subcommand("grid", "train and score a grid of variants, decoder depths and seeds");
  GridFlags gf;
  gf.train.add_to(grid, false);
  grid->add_option("--seeds", gf.seeds, "comma-separated seeds");
  grid->add_option("--depths", gf.depths, "comma-separated decoder depths");
  grid->add_option("--variants", gf.variants, "comma-separated subset of varda,noadapt,weak");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? ok : usage;
  }

  try {
    if (*gen) return cmd_gen(spec_file, gen_out, gen_seed, out);
    if (*train) return cmd_train(tf, out);
    if (*eval) return cmd_eval(ef, out, err);
    if (*ver) return cmd_verify(json, skip_mutation, det_iters, out);
    if (*grid) return cmd_grid(gf, out);
  } catch (const NumericalAbort& e) {
    err << "numerical abort: " << e.what() << '\n';
    return numerical;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return usage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return usage;
  } catch (const ContractViolation& e) {
    err << "error: " << e.what() << '\n';
    return usage;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return usage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return check_failed;
  }
  return usage;
}

}  // namespace varda::cli
