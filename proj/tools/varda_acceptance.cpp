// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
// Indented lines carry the measurements behind a verdict.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <string>

#include "CLI11.hpp"
#include "varda/experiment.hpp"
#include "varda/verify/suite.hpp"

using namespace varda;
using verify::Check;

namespace {

struct Line {
  std::string name;
  bool pass;
  std::string detail;
};

bool report(const Line& l) {
  std::printf("%s  %-28s %s\n", l.pass ? "PASS" : "FAIL", l.name.c_str(), l.detail.c_str());
  std::fflush(stdout);
  return l.pass;
}

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string measured(const Check& c) {
  return "measured " + fmt("%.3g", c.measured) + " (tol " + fmt("%.3g", c.tolerance) + "), " + c.detail + ", " +
         fmt("%.1f s", c.seconds);
}

// Mean of the discrepancy column over iterations [first, last).
double mean_discrepancy(const std::vector<LossBreakdown>& h, std::size_t first, std::size_t last) {
  double s = 0.0;
  for (std::size_t i = first; i < last; ++i) s += h[i].discrepancy;
  return s / double(last - first);
}

struct Variant {
  std::string name;
  int depth;
  bool noadapt;
};

Line training_experiment(const std::string& csv_path) {
  const auto start = std::chrono::steady_clock::now();
  const Splits splits = generate(SynthSpec{});
  const Benchmark bench = make_benchmark(splits);
  const std::vector<Variant> variants{{"VarDA N=3", 3, false}, {"NoAdapt", 3, true}, {"VarDA N=0", 0, false},
                                      {"VarDA N=7", 7, false}};
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  std::map<std::string, std::vector<double>> dice;
  std::vector<double> ratios;
  std::ofstream csv(csv_path);
  csv << "variant,seed,mean_dice,discrepancy_iter10,discrepancy_final,seconds\n";
  for (const auto& v : variants)
    for (std::uint64_t seed : seeds) {
      NetConfig nc;
      nc.decoder_depth = v.depth;
      nc.init_seed = seed;
      TrainConfig tc;  // 5000 iterations, M = 10, lr 1e-4 decayed by 0.9 every 150, alpha = (1, 1, 1e-2)
      tc.seed = seed;
      if (v.noadapt) tc.weights.alpha2 = tc.weights.alpha3 = 0.0;
      const RunOutcome r = train_and_score<float>(nc, tc, bench, 1);
      const auto& h = r.result.history;
      // 11-iteration windows centred on iteration 10 and ending at the last iteration
      const double early = mean_discrepancy(h, 5, 16), late = mean_discrepancy(h, h.size() - 11, h.size());
      dice[v.name].push_back(r.target_test.mean_dice);
      if (v.name == "VarDA N=3") ratios.push_back(late / early);
      csv << v.name << ',' << seed << ',' << format_double(r.target_test.mean_dice) << ',' << format_double(early)
          << ',' << format_double(late) << ',' << format_double(r.seconds) << '\n';
      std::printf("      %-10s seed %llu: target Dice %6.2f, discrepancy %.4g -> %.4g, %.0f s\n", v.name.c_str(),
                  (unsigned long long)seed, 100.0 * r.target_test.mean_dice, early, late, r.seconds);
      std::fflush(stdout);
    }
  auto avg = [&](const std::string& k) {
    const auto& x = dice[k];
    return std::accumulate(x.begin(), x.end(), 0.0) / double(x.size());
  };
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  bool a = true;
  std::string ratio_text;
  for (double q : ratios) {
    a = a && q < 0.2;
    ratio_text += (ratio_text.empty() ? "" : ", ") + fmt("%.3f", q);
  }
  const double gap = 100.0 * (avg("VarDA N=3") - avg("NoAdapt"));
  const bool b = gap >= 10.0;
  const double d0 = avg("VarDA N=0"), d3 = avg("VarDA N=3"), d7 = avg("VarDA N=7");
  const bool c = d7 >= d3 && d3 >= d0;
  const bool t = seconds < 1800.0;
  std::printf("      (a) final / iteration-10 discrepancy per seed: %s (need < 0.2 each) %s\n", ratio_text.c_str(),
              a ? "ok" : "not met");
  std::printf("      (b) VarDA %.2f vs NoAdapt %.2f Dice points, gap %.2f (need >= 10) %s\n", 100.0 * d3,
              100.0 * avg("NoAdapt"), gap, b ? "ok" : "not met");
  std::printf("      (c) Dice N=7 %.2f, N=3 %.2f, N=0 %.2f (need N=7 >= N=3 >= N=0) %s\n", 100.0 * d7, 100.0 * d3,
              100.0 * d0, c ? "ok" : "not met");
  std::printf("      runtime %.0f s (need < 1800) %s\n", seconds, t ? "ok" : "not met");
  return {"direction-of-effect training", a && b && c && t,
          std::string("(a) ") + (a ? "ok" : "FAIL") + "  (b) " + (b ? "ok" : "FAIL") + "  (c) " + (c ? "ok" : "FAIL") +
              "  runtime " + (t ? "ok" : "FAIL") + ", 12 runs, float32, per-run CSV " + csv_path};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  bool skip_training = false;
  std::string csv_path = "acceptance_training.csv";
  long determinism_iters = 100;
  app.add_flag("--skip-training", skip_training, "leave out the training experiment");
  app.add_option("--training-csv", csv_path, "per-run results of the training experiment");
  app.add_option("--determinism-iters", determinism_iters, "iterations of each determinism run");
  CLI11_PARSE(app, argc, argv);

  const verify::SuiteOptions o;
  bool all = true;
  const Check kern = verify::kernel_oracle(o);
  all &= report({"kernel oracle", kern.pass, measured(kern)});

  const Check mix = verify::mixture_oracle(o), spot = verify::spot_values(o);
  all &= report({"mixture-distance oracle", mix.pass && spot.pass,
                 measured(mix) + "; spot " + fmt("%.3g", spot.measured) + " (tol 5e-8): " + spot.detail});

  const Check kl = verify::kl_oracle(o);
  all &= report({"KL check", kl.pass, measured(kl)});

  const auto grads = verify::gradient_checks(o);
  bool gpass = true;
  double gsec = 0.0;
  std::string gdetail;
  for (const auto& g : grads) {
    gpass = gpass && g.pass;
    gsec += g.seconds;
    gdetail += g.name.substr(9) + " " + fmt("%.2g", g.measured) + ", ";
  }
  all &= report({"gradient suite", gpass && gsec < 120.0,
                 "max rel-err per term: " + gdetail + "tol 1e-4, " + fmt("%.1f s", gsec) + " (budget 120 s)"});

  const Check z = verify::zero_iff(o);
  all &= report({"zero-iff", z.pass, measured(z)});
  const Check st = verify::stability(o);
  all &= report({"stability", st.pass, measured(st)});
  const Check mo = verify::metric_oracles(o);
  all &= report({"metric oracles", mo.pass, measured(mo)});

  if (skip_training) {
    std::printf("SKIP  direction-of-effect training\n");
  } else {
    all &= report(training_experiment(csv_path));
  }

  const Check det = verify::training_determinism(determinism_iters, 1);
  all &= report({"determinism", det.pass, det.detail + ", " + fmt("%.1f s", det.seconds)});
  return all ? 0 : 1;
}
