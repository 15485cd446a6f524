#pragma once

#include <cstdint>
#include <utility>

#include "gradhub/tensor.hpp"

namespace gradhub {

// Velocity state plus hyperparameters for the master-side update rule.
struct OptimState {
  std::vector<Tensor> velocity;
  double learning_rate = 0.01;  // > 0
  double momentum = 0.0;        // in [0, 1)

  static OptimState for_weights(const WeightSet& w, double learning_rate,
                                double momentum);
  void validate() const;
};

// Elastic coupling constants: pull strength alpha in (0,1), exchange period
// tau >= 1 batches.
struct ElasticConfig {
  double alpha = 0.5;
  std::uint64_t tau = 1;

  void validate() const;
};

// Momentum SGD at the master: v' = mu*v - eta*g, w' = w + v', version += 1.
// Rejects non-finite gradients (NonFiniteGradientError) so the caller keeps
// the old weights; shape mismatch throws ShapeError.
std::pair<WeightSet, OptimState> sgd_step(const WeightSet& w, const Gradient& g,
                                          const OptimState& s);

// Worker-local elastic pull: w - alpha*(w - center). Version unchanged.
WeightSet elastic_pull(const WeightSet& w, const WeightSet& center, double alpha);

// One elastic worker batch: w' = w - eta*g, then the elastic pull against
// `center` when batch_index % tau == 0. The worker's version field tracks
// the last adopted center version and is left untouched here.
WeightSet easgd_worker_step(const WeightSet& w, const WeightSet& center,
                            const Gradient& g, const OptimState& s,
                            const ElasticConfig& e, std::uint64_t batch_index);

// Center side of the exchange: c' = c + alpha*(worker - c), version += 1.
WeightSet easgd_center_step(const WeightSet& center, const WeightSet& worker,
                            const ElasticConfig& e);

}  // namespace gradhub
