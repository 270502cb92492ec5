#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "varda/metrics.hpp"
#include "varda/objectives.hpp"
#include "varda/synth.hpp"

namespace varda {

struct TrainConfig {
  int batch = 10;  // M per domain
  long iterations = 5000;
  int samples = 1;  // L noise draws per image
  double lr = 1e-4;
  double decay = 0.9;
  long decay_every = 150;
  LossWeights weights{};
  DiscMode disc_mode = DiscMode::sliced;
  std::uint64_t seed = 1;
  double clip_norm = 10.0;  // global gradient norm bound; 0 disables
  bool early_stop = false;
  long early_window = 200;
  double early_tol = 1e-4;
  long checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::string checkpoint_path;

  void validate() const;
  bool assign(const KeyValue& kv);
  std::vector<KeyValue> entries() const;
};

/// lr0 * decay^floor(iter / decay_every).
double lr_at(long iter, const TrainConfig& cfg);

/// Images (N x C x H x W) and optional one-hot labels (N x K x H x W) of one split.
struct DomainData {
  Tensor<double> images;
  std::optional<Tensor<double>> labels;
  Index size() const { return images.dim(0); }
};

DomainData stack(const std::vector<LabeledImage>& items, bool with_labels);

/// Rows `idx` of a stacked tensor, converted to Scalar.
template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<double>& all, const std::vector<Index>& idx) {
  const Index row = all.numel() / all.dim(0);
  ArrayX<Scalar> out(Index(idx.size()) * row);
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.segment(Index(i) * row, row) = all.data().segment(idx[i] * row, row).template cast<Scalar>();
  Shape s = all.shape();
  s[0] = Index(idx.size());
  return Tensor<Scalar>(s, std::move(out));
}

/// Draws without replacement from a reshuffled permutation; every item is
/// visited once before any repeats.
class EpochSampler {
 public:
  EpochSampler(Index n, std::uint64_t seed);
  std::vector<Index> next(Index m);
  std::string state() const;
  void restore(const std::string& s);

 private:
  void reshuffle();
  std::mt19937_64 rng_;
  std::vector<Index> perm_;
  std::size_t pos_ = 0;
};

template <typename Scalar>
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long t = 0;
  std::vector<ArrayX<Scalar>> m, v;  // one per parameter, in ParameterSet order

  void init(const ParameterSet<Scalar>& p) {
    m.clear();
    v.clear();
    for (const auto& e : p.entries()) {
      m.push_back(ArrayX<Scalar>::Zero(e.value.numel()));
      v.push_back(ArrayX<Scalar>::Zero(e.value.numel()));
    }
    t = 0;
  }
};

/// Bias-corrected Adam update of the parameters flagged in `active` (all
/// when empty), then clears every gradient. An active parameter without a
/// gradient is a contract violation.
template <typename Scalar>
void adam_step(ParameterSet<Scalar>& params, AdamState<Scalar>& st, double lr,
               const std::vector<bool>& active = {}) {
  if (st.m.size() != params.size()) st.init(params);
  ++st.t;
  const double c1 = 1.0 - std::pow(st.beta1, double(st.t));
  const double c2 = 1.0 - std::pow(st.beta2, double(st.t));
  auto& entries = params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!active.empty() && !active[i]) continue;
    auto& e = entries[i];
    VARDA_REQUIRE(e.value.has_grad(), "adam_step: parameter " + e.name + " has no gradient");
    const ArrayX<Scalar>& g = e.value.grad();
    st.m[i] = Scalar(st.beta1) * st.m[i] + Scalar(1 - st.beta1) * g;
    st.v[i] = Scalar(st.beta2) * st.v[i] + Scalar(1 - st.beta2) * g.square();
    const ArrayX<Scalar> mhat = st.m[i] / Scalar(c1);
    const ArrayX<Scalar> vhat = st.v[i] / Scalar(c2);
    e.value.mutable_data() -= Scalar(lr) * mhat / (vhat.sqrt() + Scalar(st.eps));
  }
  params.zero_grad();
}

/// Scales active gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
template <typename Scalar>
double clip_gradients(ParameterSet<Scalar>& params, double max_norm, const std::vector<bool>& active) {
  double sq = 0.0;
  auto& entries = params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (active[i] && entries[i].value.has_grad()) sq += entries[i].value.grad().template cast<double>().square().sum();
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const Scalar f = Scalar(max_norm / norm);
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (active[i] && entries[i].value.has_grad())
        entries[i].value.node()->grad *= f;
  }
  return norm;
}

/// Which parameters receive gradients under the given weights.
template <typename Scalar>
std::vector<bool> active_parameters(const ParameterSet<Scalar>& params, const LossWeights& w) {
  std::vector<bool> out;
  const bool src = w.alpha1 > 0, tgt = w.alpha2 > 0, disc = w.alpha3 > 0;
  for (const auto& e : params.entries()) {
    switch (e.role) {
      case Role::encoder_S: out.push_back(src || disc); break;
      case Role::decoder_S: out.push_back(src); break;
      case Role::segmentor_shared: out.push_back(src || tgt); break;
      case Role::encoder_T: out.push_back(tgt || disc); break;
      case Role::decoder_T: out.push_back(tgt); break;
    }
  }
  return out;
}

struct TrainResult {
  std::vector<LossBreakdown> history;  // one per iteration run
  bool stopped_early = false;
};

/// Algorithm loop: sample M source pairs and M target images, draw noise,
/// evaluate the total loss, backpropagate, clip, and take an Adam step.
///
/// Random streams (all mt19937_64): source sampler seed+1, target sampler
/// seed+2, noise seed+3. Network initialization is the NetConfig's business.
template <typename Scalar>
class Trainer {
 public:
  using IterationHook = std::function<void(long iter, const LossBreakdown&)>;

  Trainer(TrainConfig cfg, VardaNet<Scalar>& net, const DomainData& source, const DomainData& target)
      : cfg_(std::move(cfg)),
        net_(net),
        source_(source),
        target_(target),
        source_sampler_(source.size(), cfg_.seed + 1),
        target_sampler_(target.size(), cfg_.seed + 2),
        noise_rng_(cfg_.seed + 3) {
    cfg_.validate();
    VARDA_REQUIRE(source.size() > 0 && target.size() > 0, "train: both domains need images");
    VARDA_REQUIRE(source.labels.has_value(), "train: source images need labels");
    adam_.init(net_.params());
    active_ = active_parameters(net_.params(), cfg_.weights);
  }

  long iteration() const { return iter_; }
  const AdamState<Scalar>& adam() const { return adam_; }
  const TrainConfig& config() const { return cfg_; }
  /// Recorded in every checkpoint this trainer writes.
  void set_manifest_id(std::string id) { manifest_id_ = std::move(id); }

  /// One update. Throws NumericalAbort on a non-finite loss.
  LossBreakdown step() {
    const std::vector<Index> si = source_sampler_.next(cfg_.batch);
    const std::vector<Index> ti = target_sampler_.next(cfg_.batch);
    const Tensor<Scalar> xs = gather_rows<Scalar>(source_.images, si);
    const Tensor<Scalar> ys = gather_rows<Scalar>(*source_.labels, si);
    const Tensor<Scalar> xt = gather_rows<Scalar>(target_.images, ti);
    const Index n = net_.config().latent_dim();
    const Tensor<Scalar> eps_s = noise({cfg_.batch, cfg_.samples, n});
    const Tensor<Scalar> eps_t = noise({cfg_.batch, cfg_.samples, n});

    auto& tape = Tape<Scalar>::active();
    tape.clear();
    const TotalLoss<Scalar> loss = total_loss(net_, xs, ys, xt, cfg_.weights, eps_s, eps_t, cfg_.disc_mode);
    if (!std::isfinite(double(loss.total.item())) || !std::isfinite(loss.parts.total))
      throw NumericalAbort(diagnose(loss.parts, si, ti));
    backward(loss.total);
    clip_gradients(net_.params(), cfg_.clip_norm, active_);
    adam_step(net_.params(), adam_, lr_at(iter_, cfg_), active_);
    ++iter_;
    return loss.parts;
  }

  /// Runs until the iteration budget (or the early stop) and returns the
  /// breakdowns of the iterations run by this call.
  TrainResult run(const IterationHook& hook = {}) {
    TrainResult r;
    while (iter_ < cfg_.iterations) {
      const long it = iter_;
      r.history.push_back(step());
      totals_.push_back(r.history.back().total);
      if (hook) hook(it, r.history.back());
      if (cfg_.checkpoint_every > 0 && iter_ % cfg_.checkpoint_every == 0 && !cfg_.checkpoint_path.empty())
        save(cfg_.checkpoint_path);
      if (cfg_.early_stop && converged()) {
        r.stopped_early = true;
        break;
      }
    }
    return r;
  }

  /// Parameters, optimizer moments, sampler and noise state.
  void save(const std::string& path) const {
    std::vector<std::pair<std::string, Tensor<Scalar>>> aux;
    const auto& entries = net_.params().entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      aux.emplace_back("adam.m." + entries[i].name, Tensor<Scalar>(entries[i].value.shape(), adam_.m[i]));
      aux.emplace_back("adam.v." + entries[i].name, Tensor<Scalar>(entries[i].value.shape(), adam_.v[i]));
    }
    std::ostringstream state;
    state << "iteration=" << iter_ << '\n'
          << "adam_t=" << adam_.t << '\n'
          << "source_sampler=" << source_sampler_.state() << '\n'
          << "target_sampler=" << target_sampler_.state() << '\n'
          << "noise_rng=" << noise_rng_ << '\n'
          << "noise_dist=" << normal_ << '\n';
    if (!manifest_id_.empty()) state << "manifest=" << manifest_id_ << '\n';
    for (const auto& kv : cfg_.entries()) state << "train." << kv.key << '=' << kv.value << '\n';
    state << "totals=";
    for (double t : totals_) state << format_double(t) << ' ';
    state << '\n';
    const std::string tmp = path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      write_checkpoint(out, net_.config(), net_.params(), state.str(), aux);
      if (!out) throw std::runtime_error("cannot write checkpoint " + tmp);
    }
    std::filesystem::rename(tmp, path);
  }

  /// Restores everything written by save(); the network must have the same
  /// configuration.
  void load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path);
    Checkpoint<Scalar> ck = read_checkpoint<Scalar>(in);
    const auto diff = config_diff(ck.config, net_.config());
    VARDA_REQUIRE(diff.empty(), "checkpoint config differs: " + diff.front());
    auto& entries = net_.params().entries();
    for (auto& e : entries) e.value.mutable_data() = ck.params.get(e.name).data();
    std::map<std::string, const Tensor<Scalar>*> aux;
    for (const auto& [name, t] : ck.aux) aux[name] = &t;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto m = aux.find("adam.m." + entries[i].name), v = aux.find("adam.v." + entries[i].name);
      VARDA_REQUIRE(m != aux.end() && v != aux.end(), "checkpoint lacks optimizer state for " + entries[i].name);
      adam_.m[i] = m->second->data();
      adam_.v[i] = v->second->data();
    }
    apply_key_values(parse_key_values(ck.state), [&](const KeyValue& kv) {
      std::istringstream is(kv.value);
      if (kv.key == "iteration") iter_ = long(parse_int(kv));
      else if (kv.key == "adam_t") adam_.t = long(parse_int(kv));
      else if (kv.key == "source_sampler") source_sampler_.restore(kv.value);
      else if (kv.key == "target_sampler") target_sampler_.restore(kv.value);
      else if (kv.key == "noise_rng") is >> noise_rng_;
      else if (kv.key == "noise_dist") is >> normal_;
      else if (kv.key == "totals") {
        totals_.clear();
        for (double t; is >> t;) totals_.push_back(t);
      } else if (kv.key != "manifest" && kv.key.rfind("train.", 0) != 0) {
        return false;
      }
      return true;
    });
  }

 private:
  Tensor<Scalar> noise(const Shape& shape) {
    ArrayX<Scalar> d(shape_numel(shape));
    for (Index i = 0; i < d.size(); ++i) d[i] = Scalar(normal_(noise_rng_));
    return Tensor<Scalar>(shape, std::move(d));
  }

  bool converged() const {
    const std::size_t w = std::size_t(cfg_.early_window);
    if (totals_.size() < 2 * w) return false;
    const auto end = totals_.end();
    const double recent = std::accumulate(end - long(w), end, 0.0) / double(w);
    const double before = std::accumulate(end - 2 * long(w), end - long(w), 0.0) / double(w);
    return std::abs(recent - before) < cfg_.early_tol * std::abs(before);
  }

  std::string diagnose(const LossBreakdown& b, const std::vector<Index>& si, const std::vector<Index>& ti) const {
    std::ostringstream os;
    os << "non-finite loss at iteration " << iter_ << " (seg " << b.seg_loss << ", recon_S " << b.recon_loss_S
       << ", kl_S " << b.kl_S << ", recon_T " << b.recon_loss_T << ", entropy_T " << b.cond_entropy_T << ", kl_T "
       << b.kl_T << ", discrepancy " << b.discrepancy << ")\n  source batch:";
    for (Index i : si) os << ' ' << i;
    os << "\n  target batch:";
    for (Index i : ti) os << ' ' << i;
    os << "\n  parameter norms:";
    for (const auto& e : net_.params().entries())
      os << "\n    " << e.name << ' ' << std::sqrt(e.value.data().template cast<double>().square().sum());
    return os.str();
  }

  TrainConfig cfg_;
  VardaNet<Scalar>& net_;
  const DomainData& source_;
  const DomainData& target_;
  EpochSampler source_sampler_, target_sampler_;
  std::mt19937_64 noise_rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  AdamState<Scalar> adam_;
  std::vector<bool> active_;
  std::vector<double> totals_;
  long iter_ = 0;
  std::string manifest_id_;
};

/// Training settings recorded in a checkpoint written by Trainer::save.
inline TrainConfig checkpoint_train_config(const std::string& state) {
  TrainConfig c;
  for (const auto& kv : parse_key_values(state))
    if (kv.key.rfind("train.", 0) == 0) c.assign(KeyValue{kv.key.substr(6), kv.value, kv.line});
  return c;
}

/// Where target images go at test time. A run that never trains the target
/// encoder (alpha2 = alpha3 = 0) is evaluated through the source encoder.
inline Domain target_route(const LossWeights& w) {
  return (w.alpha2 > 0 || w.alpha3 > 0) ? Domain::target : Domain::source;
}

/// Hard ground-truth maps of a labelled split.
inline std::vector<LabelMap> truth_maps(const DomainData& data) {
  VARDA_REQUIRE(data.labels.has_value(), "evaluate: dataset carries no labels");
  const Tensor<double>& y = *data.labels;
  const Index k = y.dim(1), h = y.dim(2), w = y.dim(3);
  std::vector<LabelMap> out;
  for (Index i = 0; i < data.size(); ++i)
    out.push_back(hard_labels(Tensor<double>(Shape{k, h, w}, y.data().segment(i * k * h * w, k * h * w))));
  return out;
}

/// Per-image predictions through the chosen encoder, fanned out over up to
/// `threads` workers with read-only parameters.
template <typename Scalar>
std::vector<LabelMap> predict_all(const VardaNet<Scalar>& net, const DomainData& data, Domain route,
                                  int threads = 1) {
  const Index n = data.size();
  std::vector<LabelMap> preds(static_cast<std::size_t>(n));
  const Index chunk = 10;
  const Index chunks = (n + chunk - 1) / chunk;
  auto work = [&](Index first_chunk, Index stride) {
    for (Index c = first_chunk; c < chunks; c += stride) {
      std::vector<Index> idx;
      for (Index i = c * chunk; i < std::min(n, (c + 1) * chunk); ++i) idx.push_back(i);
      const auto p = net.predict(route, gather_rows<Scalar>(data.images, idx));
      for (std::size_t k = 0; k < idx.size(); ++k) preds[std::size_t(idx[k])] = p.labels[k];
    }
  };
  const int workers = int(std::max<Index>(1, std::min<Index>(threads, chunks)));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, Index(w), Index(workers));
    for (auto& t : pool) t.join();
  }
  return preds;
}

template <typename Scalar>
MetricsReport evaluate(const VardaNet<Scalar>& net, const DomainData& data, Domain route, int threads = 1) {
  const auto truths = truth_maps(data);
  return score_segmentations(predict_all(net, data, route, threads), truths, int(data.labels->dim(1)));
}

/// Scores a predictor that copies the ground truth. Checks the scoring path
/// end to end: every present class must come out with Dice 1 and ASSD 0.
inline MetricsReport evaluate_oracle(const DomainData& data) {
  const auto truths = truth_maps(data);
  return score_segmentations(truths, truths, int(data.labels->dim(1)));
}

}  // namespace varda
