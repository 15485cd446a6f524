#include "gradhub/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace gradhub {

Tensor Tensor::zeros(std::vector<std::size_t> dims) {
  std::size_t n = 1;
  for (std::size_t d : dims) {
    if (d == 0) throw std::invalid_argument("tensor dim must be >= 1");
    n *= d;
  }
  Tensor t;
  t.dims = std::move(dims);
  t.values.assign(n, 0.0);
  return t;
}

bool shape_congruent(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].same_shape(b[i])) return false;
  }
  return true;
}

bool all_finite(const std::vector<Tensor>& ts) {
  for (const Tensor& t : ts) {
    for (double v : t.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

std::string shape_string(const std::vector<Tensor>& ts) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (i) os << ", ";
    os << "(";
    for (std::size_t j = 0; j < ts[i].dims.size(); ++j) {
      if (j) os << "x";
      os << ts[i].dims[j];
    }
    os << ")";
  }
  os << "]";
  return os.str();
}

std::vector<double> flatten(const std::vector<Tensor>& ts) {
  std::vector<double> out;
  std::size_t total = 0;
  for (const Tensor& t : ts) total += t.size();
  out.reserve(total);
  for (const Tensor& t : ts) {
    out.insert(out.end(), t.values.begin(), t.values.end());
  }
  return out;
}

std::vector<Tensor> unflatten(const std::vector<Tensor>& shape_like,
                              const std::vector<double>& flat) {
  std::vector<Tensor> out;
  out.reserve(shape_like.size());
  std::size_t pos = 0;
  for (const Tensor& s : shape_like) {
    Tensor t;
    t.dims = s.dims;
    if (pos + s.size() > flat.size()) {
      throw std::invalid_argument("unflatten: flat vector too short");
    }
    t.values.assign(flat.begin() + static_cast<std::ptrdiff_t>(pos),
                    flat.begin() + static_cast<std::ptrdiff_t>(pos + s.size()));
    pos += s.size();
    out.push_back(std::move(t));
  }
  if (pos != flat.size()) {
    throw std::invalid_argument("unflatten: flat vector too long");
  }
  return out;
}

}  // namespace gradhub
