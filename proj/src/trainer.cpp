#include "varda/trainer.hpp"

namespace varda {

void TrainConfig::validate() const {
  VARDA_REQUIRE(batch >= 1, "batch must be >= 1");
  VARDA_REQUIRE(iterations >= 0, "iterations must be >= 0");
  VARDA_REQUIRE(samples >= 1, "samples must be >= 1");
  VARDA_REQUIRE(lr > 0 && decay > 0 && decay <= 1 && decay_every >= 1, "bad learning-rate schedule");
  VARDA_REQUIRE(weights.alpha1 >= 0 && weights.alpha2 >= 0 && weights.alpha3 >= 0,
                "loss weights must be nonnegative");
  VARDA_REQUIRE(clip_norm >= 0, "clip_norm must be >= 0");
  VARDA_REQUIRE(early_window >= 1 && early_tol >= 0, "bad early-stop settings");
  VARDA_REQUIRE(checkpoint_every >= 0, "checkpoint_every must be >= 0");
}

bool TrainConfig::assign(const KeyValue& kv) {
  const std::string& k = kv.key;
  if (k == "batch") batch = int(parse_int(kv));
  else if (k == "iterations") iterations = long(parse_int(kv));
  else if (k == "samples") samples = int(parse_int(kv));
  else if (k == "lr") lr = parse_double(kv);
  else if (k == "decay") decay = parse_double(kv);
  else if (k == "decay_every") decay_every = long(parse_int(kv));
  else if (k == "alpha1") weights.alpha1 = parse_double(kv);
  else if (k == "alpha2") weights.alpha2 = parse_double(kv);
  else if (k == "alpha3") weights.alpha3 = parse_double(kv);
  else if (k == "seed") seed = parse_uint(kv);
  else if (k == "clip_norm") clip_norm = parse_double(kv);
  else if (k == "early_stop") early_stop = parse_bool(kv);
  else if (k == "early_window") early_window = long(parse_int(kv));
  else if (k == "early_tol") early_tol = parse_double(kv);
  else if (k == "checkpoint_every") checkpoint_every = long(parse_int(kv));
  else if (k == "checkpoint_path") checkpoint_path = kv.value;
  else if (k == "disc_mode") {
    try {
      disc_mode = parse_disc_mode(kv.value);
    } catch (const ConfigError& e) {
      throw ConfigError(e.what(), kv.line);
    }
  } else {
    return false;
  }
  return true;
}

std::vector<KeyValue> TrainConfig::entries() const {
  auto kv = [](const char* k, const std::string& v) { return KeyValue{k, v, 0}; };
  auto i = [](auto v) { return std::to_string(v); };
  return {kv("batch", i(batch)),
          kv("iterations", i(iterations)),
          kv("samples", i(samples)),
          kv("lr", format_double(lr)),
          kv("decay", format_double(decay)),
          kv("decay_every", i(decay_every)),
          kv("alpha1", format_double(weights.alpha1)),
          kv("alpha2", format_double(weights.alpha2)),
          kv("alpha3", format_double(weights.alpha3)),
          kv("disc_mode", disc_mode_name(disc_mode)),
          kv("seed", i(seed)),
          kv("clip_norm", format_double(clip_norm)),
          kv("early_stop", early_stop ? "true" : "false"),
          kv("early_window", i(early_window)),
          kv("early_tol", format_double(early_tol)),
          kv("checkpoint_every", i(checkpoint_every)),
          kv("checkpoint_path", checkpoint_path)};
}

double lr_at(long iter, const TrainConfig& cfg) {
  return cfg.lr * std::pow(cfg.decay, double(iter / cfg.decay_every));
}

DomainData stack(const std::vector<LabeledImage>& items, bool with_labels) {
  VARDA_REQUIRE(!items.empty(), "stack: no images");
  const Shape is = items.front().image.shape();
  const Index isz = shape_numel(is);
  DomainData d;
  ArrayX<double> img(Index(items.size()) * isz);
  for (std::size_t i = 0; i < items.size(); ++i) {
    VARDA_REQUIRE(items[i].image.shape() == is, "stack: image " + items[i].id + " has a different shape");
    img.segment(Index(i) * isz, isz) = items[i].image.data();
  }
  d.images = Tensor<double>(Shape{Index(items.size()), is[0], is[1], is[2]}, std::move(img));
  if (with_labels) {
    VARDA_REQUIRE(items.front().label.has_value(), "stack: image " + items.front().id + " has no label");
    const Shape ls = items.front().label->shape();
    const Index lsz = shape_numel(ls);
    ArrayX<double> lab(Index(items.size()) * lsz);
    for (std::size_t i = 0; i < items.size(); ++i) {
      VARDA_REQUIRE(items[i].label && items[i].label->shape() == ls, "stack: bad label on " + items[i].id);
      lab.segment(Index(i) * lsz, lsz) = items[i].label->data();
    }
    d.labels = Tensor<double>(Shape{Index(items.size()), ls[0], ls[1], ls[2]}, std::move(lab));
  }
  return d;
}

EpochSampler::EpochSampler(Index n, std::uint64_t seed) : rng_(seed), perm_(std::size_t(n)) {
  std::iota(perm_.begin(), perm_.end(), Index(0));
  reshuffle();
}

void EpochSampler::reshuffle() {
  std::shuffle(perm_.begin(), perm_.end(), rng_);
  pos_ = 0;
}

std::vector<Index> EpochSampler::next(Index m) {
  std::vector<Index> out;
  out.reserve(std::size_t(m));
  while (Index(out.size()) < m) {
    if (pos_ == perm_.size()) reshuffle();
    out.push_back(perm_[pos_++]);
  }
  return out;
}

std::string EpochSampler::state() const {
  std::ostringstream os;
  os << pos_ << ' ' << perm_.size();
  for (Index i : perm_) os << ' ' << i;
  os << ' ' << rng_;
  return os.str();
}

void EpochSampler::restore(const std::string& s) {
  std::istringstream is(s);
  std::size_t n = 0;
  is >> pos_ >> n;
  VARDA_REQUIRE(n == perm_.size(), "sampler state has a different population size");
  for (auto& i : perm_) is >> i;
  is >> rng_;
  VARDA_REQUIRE(!is.fail() && pos_ <= n, "corrupt sampler state");
}

}  // namespace varda
