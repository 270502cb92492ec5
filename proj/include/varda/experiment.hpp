#pragma once

#include <chrono>
#include <string>

#include "varda/trainer.hpp"

namespace varda {

/// The three splits of a synthetic benchmark, stacked for training.
struct Benchmark {
  DomainData source, target_train, target_test;
};

inline Benchmark make_benchmark(const Splits& s) {
  Benchmark b;
  b.source = stack(s.source, true);
  b.target_train = stack(s.target_train, false);
  if (!s.target_test.empty()) b.target_test = stack(s.target_test, true);
  return b;
}

struct RunOutcome {
  TrainResult result;
  MetricsReport target_test;
  double seconds = 0.0;
};

/// Trains a fresh network and scores it on the target test split, routing
/// target images as target_route() says.
template <typename Scalar>
RunOutcome train_and_score(const NetConfig& net_cfg, const TrainConfig& train_cfg, const Benchmark& data,
                           int threads, const typename Trainer<Scalar>::IterationHook& hook = {}) {
  const auto start = std::chrono::steady_clock::now();
  VardaNet<Scalar> net(net_cfg);
  Trainer<Scalar> trainer(train_cfg, net, data.source, data.target_train);
  RunOutcome out;
  out.result = trainer.run(hook);
  out.target_test = evaluate(net, data.target_test, target_route(train_cfg.weights), threads);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace varda
