#include <filesystem>
#include <set>

#include "doctest.h"
#include "test_util.hpp"
#include "varda/trainer.hpp"

using namespace varda;
using namespace varda::testing;
using T = Tensor<double>;
using Net = VardaNet<double>;

namespace {

DomainData random_domain(std::mt19937_64& rng, Index n, bool labels) {
  DomainData d;
  d.images = random_tensor(rng, {n, 1, 8, 8}, 0, 1);
  if (labels) d.labels = random_one_hot(rng, n, 4, 8, 8);
  return d;
}

TrainConfig small_config(long iterations) {
  TrainConfig c;
  c.batch = 3;
  c.iterations = iterations;
  c.lr = 1e-3;
  c.seed = 5;
  return c;
}

struct Fixture {
  std::mt19937_64 rng{42};
  DomainData source = random_domain(rng, 7, true);
  DomainData target = random_domain(rng, 5, false);
};

bool same_params(const Net& a, const Net& b) {
  for (std::size_t i = 0; i < a.params().size(); ++i)
    if (!(a.params().entries()[i].value.data() == b.params().entries()[i].value.data()).all()) return false;
  return true;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("varda_trainer_" + name);
}

}  // namespace

TEST_CASE("step schedule") {
  const TrainConfig c;
  CHECK(lr_at(0, c) == 1e-4);
  CHECK(lr_at(149, c) == 1e-4);
  CHECK(lr_at(150, c) == doctest::Approx(9e-5).epsilon(1e-12));
  CHECK(lr_at(300, c) == doctest::Approx(8.1e-5).epsilon(1e-12));
}

TEST_CASE("adam first steps") {
  ParameterSet<double> p;
  p.add("w", Role::encoder_S, T::from({2}, {1.0, 2.0}, true));
  AdamState<double> st;
  auto& w = p.get("w");
  w.node()->grad = ArrayX<double>::Constant(2, 0.5);
  adam_step(p, st, 1e-4);
  CHECK(w.data()[0] - 1.0 == doctest::Approx(-1e-4).epsilon(1e-6));
  CHECK(w.data()[1] - 2.0 == doctest::Approx(-1e-4).epsilon(1e-6));
  CHECK_FALSE(w.has_grad());

  ParameterSet<double> q;
  q.add("w", Role::encoder_S, T::from({2}, {1.0, 2.0}, true));
  AdamState<double> s0;
  q.get("w").node()->grad = ArrayX<double>::Zero(2);
  adam_step(q, s0, 1e-4);
  CHECK(q.get("w").data()[0] == 1.0);
  CHECK(q.get("w").data()[1] == 2.0);
  CHECK_THROWS_AS(adam_step(q, s0, 1e-4), ContractViolation);
}

TEST_CASE("gradient clipping bounds the global norm") {
  ParameterSet<double> p;
  p.add("a", Role::encoder_S, T::from({2}, {0, 0}, true));
  p.add("b", Role::decoder_S, T::from({1}, {0}, true));
  p.get("a").node()->grad = ArrayX<double>::Constant(2, 6.0);
  p.get("b").node()->grad = ArrayX<double>::Constant(1, 7.0);
  CHECK(clip_gradients(p, 10.0, {true, true}) == doctest::Approx(11.0).epsilon(1e-14));
  const double after = std::sqrt(p.get("a").grad().square().sum() + p.get("b").grad().square().sum());
  CHECK(after == doctest::Approx(10.0).epsilon(1e-14));
  CHECK(clip_gradients(p, 0.0, {true, true}) == doctest::Approx(10.0).epsilon(1e-14));
  CHECK(p.get("b").grad()[0] == doctest::Approx(70.0 / 11.0).epsilon(1e-14));
}

TEST_CASE("sampler visits every item before repeating") {
  EpochSampler s(7, 3);
  for (int epoch = 0; epoch < 4; ++epoch) {
    std::set<Index> seen;
    for (int k = 0; k < 7; ++k) seen.insert(s.next(1)[0]);
    CHECK(seen.size() == 7);
  }
  EpochSampler a(7, 9), b(7, 9), c(7, 10);
  CHECK(a.next(20) == b.next(20));
  std::vector<Index> first = a.next(14);
  CHECK(first != c.next(14));
  const std::string st = a.state();
  const auto cont = a.next(9);
  EpochSampler r(7, 0);
  r.restore(st);
  CHECK(r.next(9) == cont);
  EpochSampler wrong(6, 0);
  CHECK_THROWS_AS(wrong.restore(st), ContractViolation);
}

TEST_CASE("identical seeds give bit-identical trajectories") {
  Fixture f;
  const NetConfig nc = toy_config();
  Net a(nc), b(nc);
  Trainer<double> ta(small_config(100), a, f.source, f.target), tb(small_config(100), b, f.source, f.target);
  const auto ra = ta.run(), rb = tb.run();
  REQUIRE(ra.history.size() == 100);
  for (std::size_t i = 0; i < 100; ++i) CHECK(loss_csv_line(long(i), ra.history[i]) == loss_csv_line(long(i), rb.history[i]));
  CHECK(same_params(a, b));

  TrainConfig other = small_config(100);
  other.seed = 6;
  Net c(nc);
  Trainer<double> tc(other, c, f.source, f.target);
  CHECK(tc.run().history.back().total != ra.history.back().total);
}

TEST_CASE("checkpoint, reload and continue reproduces the uninterrupted run") {
  Fixture f;
  const NetConfig nc = toy_config();
  Net full(nc);
  Trainer<double> tf(small_config(40), full, f.source, f.target);
  const auto whole = tf.run();

  const auto path = temp_file("resume.vckp");
  TrainConfig first = small_config(40);
  first.checkpoint_every = 17;
  first.checkpoint_path = path.string();
  Net part(nc);
  Trainer<double> tp(first, part, f.source, f.target);
  for (int i = 0; i < 17; ++i) tp.step();
  tp.save(path.string());

  NetConfig fresh = nc;
  fresh.init_seed = 999;  // weights come from the checkpoint
  Net resumed(fresh);
  Trainer<double> tr(small_config(40), resumed, f.source, f.target);
  CHECK_THROWS_AS(tr.load(path.string()), ContractViolation);
  Net resumed2(nc);
  Trainer<double> tr2(small_config(40), resumed2, f.source, f.target);
  tr2.load(path.string());
  CHECK(tr2.iteration() == 17);
  const auto rest = tr2.run();
  REQUIRE(rest.history.size() == 23);
  for (std::size_t i = 0; i < 23; ++i) CHECK(rest.history[i].total == whole.history[17 + i].total);
  CHECK(same_params(resumed2, full));
  std::filesystem::remove(path);
}

TEST_CASE("periodic checkpoints are written atomically") {
  Fixture f;
  const auto path = temp_file("periodic.vckp");
  std::filesystem::remove(path);
  TrainConfig c = small_config(6);
  c.checkpoint_every = 3;
  c.checkpoint_path = path.string();
  Net net(toy_config());
  Trainer<double> t(c, net, f.source, f.target);
  t.run();
  CHECK(std::filesystem::exists(path));
  CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));
  std::ifstream in(path, std::ios::binary);
  const auto ck = read_checkpoint<double>(in);
  CHECK(ck.state.find("iteration=6") != std::string::npos);
  std::filesystem::remove(path);
}

TEST_CASE("non-finite loss aborts with diagnostics") {
  Fixture f;
  Net net(toy_config());
  net.params().get("enc_S.mean.b").mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  Trainer<double> t(small_config(5), net, f.source, f.target);
  try {
    t.step();
    FAIL("no abort");
  } catch (const NumericalAbort& e) {
    const std::string msg = e.what();
    CHECK(msg.find("iteration 0") != std::string::npos);
    CHECK(msg.find("source batch:") != std::string::npos);
    CHECK(msg.find("target batch:") != std::string::npos);
    CHECK(msg.find("enc_S.mean.b nan") != std::string::npos);
  }
}

TEST_CASE("one CSV row per iteration whose total is the weighted sum") {
  Fixture f;
  const auto path = temp_file("loss.csv");
  Net net(toy_config());
  TrainConfig c = small_config(25);
  c.weights = {0.7, 1.3, 0.05};
  Trainer<double> t(c, net, f.source, f.target);
  {
    LossCsv csv(path.string(), "id");
    t.run([&](long it, const LossBreakdown& b) { csv.write(it, b); });
  }
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  long rows = 0;
  while (std::getline(in, line)) {
    std::vector<double> v;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) v.push_back(std::stod(cell));
    REQUIRE(v.size() == 6);
    CHECK(long(v[0]) == rows);
    const double expect = 0.7 * (v[1] + v[2]) + 1.3 * v[3] + 0.05 * v[4];
    CHECK(std::abs(v[5] - expect) < 1e-9);
    ++rows;
  }
  CHECK(rows == 25);
  std::filesystem::remove(path);
}

TEST_CASE("untrained branches stay frozen") {
  Fixture f;
  const NetConfig nc = toy_config();
  Net net(nc), init(nc);
  TrainConfig c = small_config(5);
  c.weights = {1.0, 0.0, 0.0};
  Trainer<double> t(c, net, f.source, f.target);
  t.run();
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    const auto& e = net.params().entries()[i];
    const bool moved = !(e.value.data() == init.params().entries()[i].value.data()).all();
    const bool target_side = e.role == Role::encoder_T || e.role == Role::decoder_T;
    CHECK(moved != target_side);
  }
  CHECK(target_route(c.weights) == Domain::source);
  CHECK(target_route(LossWeights{}) == Domain::target);
}

TEST_CASE("early stop on a flat moving average") {
  Fixture f;
  TrainConfig c = small_config(1000);
  c.lr = 1e-12;
  c.early_stop = true;
  c.early_window = 10;
  c.early_tol = 0.5;
  Net net(toy_config());
  Trainer<double> t(c, net, f.source, f.target);
  const auto r = t.run();
  CHECK(r.stopped_early);
  CHECK(r.history.size() == 20);

  c.early_tol = 0.0;
  c.iterations = 30;
  Net again(toy_config());
  Trainer<double> t2(c, again, f.source, f.target);
  const auto r2 = t2.run();
  CHECK_FALSE(r2.stopped_early);
  CHECK(r2.history.size() == 30);
}

TEST_CASE("oracle predictions score perfectly and threads do not change results") {
  std::mt19937_64 rng(3);
  DomainData d = random_domain(rng, 23, true);
  const auto oracle = evaluate_oracle(d);
  REQUIRE(oracle.classes.size() == 3);
  for (const auto& c : oracle.classes) {
    CHECK(c.dice_mean == 1.0);
    CHECK(c.assd_mean == 0.0);
    CHECK(c.n_undefined == 0);
  }
  CHECK(oracle.mean_dice == 1.0);

  Net net(toy_config());
  const auto one = evaluate(net, d, Domain::target, 1), four = evaluate(net, d, Domain::target, 4);
  CHECK(one.csv() == four.csv());
  DomainData unlabeled = random_domain(rng, 3, false);
  CHECK_THROWS_AS(evaluate(net, unlabeled, Domain::target), ContractViolation);
}

TEST_CASE("train config keys") {
  TrainConfig c;
  apply_key_values(parse_key_values("batch=4\nalpha3=0\ndisc_mode=full\nearly_stop=true\n"),
                   [&](const KeyValue& kv) { return c.assign(kv); });
  CHECK(c.batch == 4);
  CHECK(c.weights.alpha3 == 0.0);
  CHECK(c.disc_mode == DiscMode::full);
  CHECK(c.early_stop);
  try {
    apply_key_values(parse_key_values("lr=1e-3\ndisc_mode=wide\n"), [&](const KeyValue& kv) { return c.assign(kv); });
    FAIL("bad mode accepted");
  } catch (const ConfigError& e) {
    CHECK(e.line() == 2);
  }
  TrainConfig back;
  apply_key_values(c.entries(), [&](const KeyValue& kv) { return back.assign(kv); });
  CHECK(back.entries().size() == c.entries().size());
  for (std::size_t i = 0; i < c.entries().size(); ++i) CHECK(back.entries()[i].value == c.entries()[i].value);
  c.batch = 0;
  CHECK_THROWS_AS(c.validate(), ContractViolation);
}
