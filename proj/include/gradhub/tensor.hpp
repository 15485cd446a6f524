#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace gradhub {

// Dense row-major tensor. Training math runs in double precision; the wire
// narrows to f32 unless the session runs in the f64 test mode.
struct Tensor {
  std::vector<std::size_t> dims;
  std::vector<double> values;

  Tensor() = default;
  Tensor(std::vector<std::size_t> d, std::vector<double> v)
      : dims(std::move(d)), values(std::move(v)) {}

  static Tensor zeros(std::vector<std::size_t> dims);

  std::size_t size() const { return values.size(); }
  bool same_shape(const Tensor& other) const { return dims == other.dims; }
};

// Flat, ordered collection of parameter tensors; the unit exchanged between
// master and workers. `version` counts accepted updates at the issuing
// master and never decreases.
struct WeightSet {
  std::vector<Tensor> tensors;
  std::uint64_t version = 0;
};

// Same shape structure as the WeightSet it was computed against, plus that
// weight set's version for staleness accounting.
struct Gradient {
  std::vector<Tensor> tensors;
  std::uint64_t basis_version = 0;
};

bool shape_congruent(const std::vector<Tensor>& a, const std::vector<Tensor>& b);
bool all_finite(const std::vector<Tensor>& ts);
std::string shape_string(const std::vector<Tensor>& ts);

// Exact round-trip: unflatten(shapes_of(x), flatten(x)) == x.
std::vector<double> flatten(const std::vector<Tensor>& ts);
std::vector<Tensor> unflatten(const std::vector<Tensor>& shape_like,
                              const std::vector<double>& flat);

}  // namespace gradhub
