#pragma once

#include <cstdint>
#include <vector>

#include "gradhub/arch.hpp"
#include "gradhub/tensor.hpp"

namespace gradhub {

// One batch of training data. `inputs` is n_samples x input_width row-major
// (for a leading LSTM layer a sample row is seq_len x input_dim, time-major).
struct Batch {
  std::size_t n_samples = 0;
  std::vector<double> inputs;
  std::vector<int> labels;  // in [0, n_classes)
};

// Per-layer activations kept from forward for the matching backward call.
struct LayerCache {
  std::vector<double> x;       // layer input, n x in (dense/softmax) or n x T x D (lstm)
  std::vector<double> z;       // dense preactivation, n x out
  std::vector<double> gates;   // lstm, n x T x 4H (i,f,g,o after nonlinearity)
  std::vector<double> cell;    // lstm c_t, n x T x H
  std::vector<double> tanh_c;  // lstm tanh(c_t), n x T x H
  std::vector<double> hidden;  // lstm h_t, n x T x H
  std::vector<double> probs;   // softmax output rows, n x K
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  std::size_t n_samples = 0;
  std::uint64_t weights_version = 0;
  std::uint64_t weights_checksum = 0;  // guards against stale/mismatched caches
  std::string arch_signature;
};

// Row-stochastic class probabilities, n_samples x n_classes.
struct ProbMatrix {
  std::vector<double> p;
  std::size_t rows = 0;
  std::size_t cols = 0;
  double at(std::size_t r, std::size_t c) const { return p[r * cols + c]; }
};

struct ForwardResult {
  ProbMatrix probs;
  ForwardCache cache;
};

// Deterministic for fixed (arch, seed); every tensor drawn uniformly in
// +/- sqrt(6 / (fan_in + fan_out)); version = 0.
WeightSet init_weights(const Architecture& arch, std::uint64_t seed);

ForwardResult forward(const WeightSet& w, const Architecture& arch,
                      const Batch& batch);

// Mean negative log-probability of the true class.
double loss(const ProbMatrix& probs, const std::vector<int>& labels);

// Gradient of loss(forward(w)) with respect to every parameter, averaged
// over the batch. Requires the cache produced by forward on the same
// (w, arch, batch).
Gradient backward(const WeightSet& w, const Architecture& arch,
                  const ForwardCache& cache, const std::vector<int>& labels);

// forward + loss in one call.
double batch_loss(const WeightSet& w, const Architecture& arch,
                  const Batch& batch);

// Central-difference approximation of the same gradient, parameter by
// parameter. Testing oracle: uses only forward/loss, never backward.
Gradient finite_diff_gradient(const WeightSet& w, const Architecture& arch,
                              const Batch& batch, double eps);

std::uint64_t weights_checksum(const WeightSet& w);

}  // namespace gradhub
