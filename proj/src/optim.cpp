#include "gradhub/optim.hpp"

#include <string>

#include "gradhub/errors.hpp"

namespace gradhub {

OptimState OptimState::for_weights(const WeightSet& w, double learning_rate,
                                   double momentum) {
  OptimState s;
  s.learning_rate = learning_rate;
  s.momentum = momentum;
  s.velocity.reserve(w.tensors.size());
  for (const Tensor& t : w.tensors) s.velocity.push_back(Tensor::zeros(t.dims));
  s.validate();
  return s;
}

void OptimState::validate() const {
  if (!(learning_rate > 0.0)) {
    throw ConfigError("learning_rate must be > 0, got " +
                      std::to_string(learning_rate));
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("momentum must be in [0,1), got " +
                      std::to_string(momentum));
  }
}

void ElasticConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError("elastic_alpha must be in (0,1), got " +
                      std::to_string(alpha));
  }
  if (tau < 1) throw ConfigError("elastic_tau must be >= 1");
}

std::pair<WeightSet, OptimState> sgd_step(const WeightSet& w, const Gradient& g,
                                          const OptimState& s) {
  s.validate();
  if (!shape_congruent(w.tensors, g.tensors)) {
    throw ShapeError("sgd_step: gradient shape " + shape_string(g.tensors) +
                     " does not match weights " + shape_string(w.tensors));
  }
  if (!shape_congruent(w.tensors, s.velocity)) {
    throw ShapeError("sgd_step: velocity shape does not match weights");
  }
  if (!all_finite(g.tensors)) {
    throw NonFiniteGradientError("sgd_step: gradient has NaN/Inf entries; update rejected");
  }
  WeightSet out = w;
  OptimState ns = s;
  for (std::size_t ti = 0; ti < out.tensors.size(); ++ti) {
    auto& wv = out.tensors[ti].values;
    auto& vv = ns.velocity[ti].values;
    const auto& gv = g.tensors[ti].values;
    for (std::size_t j = 0; j < wv.size(); ++j) {
      vv[j] = s.momentum * vv[j] - s.learning_rate * gv[j];
      wv[j] += vv[j];
    }
  }
  out.version = w.version + 1;
  return {std::move(out), std::move(ns)};
}

WeightSet elastic_pull(const WeightSet& w, const WeightSet& center, double alpha) {
  if (!shape_congruent(w.tensors, center.tensors)) {
    throw ShapeError("elastic_pull: worker/center shapes differ");
  }
  WeightSet out = w;
  for (std::size_t ti = 0; ti < out.tensors.size(); ++ti) {
    auto& wv = out.tensors[ti].values;
    const auto& cv = center.tensors[ti].values;
    for (std::size_t j = 0; j < wv.size(); ++j) {
      wv[j] -= alpha * (wv[j] - cv[j]);
    }
  }
  return out;
}

WeightSet easgd_worker_step(const WeightSet& w, const WeightSet& center,
                            const Gradient& g, const OptimState& s,
                            const ElasticConfig& e, std::uint64_t batch_index) {
  s.validate();
  e.validate();
  if (!shape_congruent(w.tensors, g.tensors)) {
    throw ShapeError("easgd_worker_step: gradient shape does not match weights");
  }
  if (!all_finite(g.tensors)) {
    throw NonFiniteGradientError("easgd_worker_step: gradient has NaN/Inf entries");
  }
  WeightSet out = w;
  for (std::size_t ti = 0; ti < out.tensors.size(); ++ti) {
    auto& wv = out.tensors[ti].values;
    const auto& gv = g.tensors[ti].values;
    for (std::size_t j = 0; j < wv.size(); ++j) {
      wv[j] -= s.learning_rate * gv[j];
    }
  }
  if (batch_index % e.tau == 0) {
    out = elastic_pull(out, center, e.alpha);
  }
  return out;
}

WeightSet easgd_center_step(const WeightSet& center, const WeightSet& worker,
                            const ElasticConfig& e) {
  e.validate();
  if (!shape_congruent(center.tensors, worker.tensors)) {
    throw ShapeError("easgd_center_step: worker/center shapes differ");
  }
  WeightSet out = center;
  for (std::size_t ti = 0; ti < out.tensors.size(); ++ti) {
    auto& cv = out.tensors[ti].values;
    const auto& wv = worker.tensors[ti].values;
    for (std::size_t j = 0; j < cv.size(); ++j) {
      cv[j] += e.alpha * (wv[j] - cv[j]);
    }
  }
  out.version = center.version + 1;
  return out;
}

}  // namespace gradhub
