#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "gradhub/tensor.hpp"

namespace gradhub {

enum class Activation { tanh, relu, identity };

struct DenseSpec {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Activation act = Activation::tanh;
};

// Single recurrent cell consuming the whole input sequence; only the final
// hidden state feeds the next layer. Parameters: Wx[4H x D], Wh[4H x H],
// b[4H], gate order i,f,g,o.
struct LstmSpec {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t seq_len = 0;
};

struct SoftmaxSpec {
  std::size_t in_dim = 0;
  std::size_t n_classes = 0;
};

using LayerSpec = std::variant<DenseSpec, LstmSpec, SoftmaxSpec>;

// Ordered layer stack. Valid stacks: optional leading LstmSpec (it is the
// only layer that consumes a sequence), any number of DenseSpec, and exactly
// one SoftmaxSpec at the end. Adjacent dimensions must chain.
struct Architecture {
  std::vector<LayerSpec> layers;

  void validate() const;  // throws ConfigError with the offending layer index

  std::size_t input_width() const;   // flattened width of one sample
  std::size_t n_classes() const;
  std::size_t layer_out_dim(std::size_t i) const;
  std::size_t layer_in_dim(std::size_t i) const;

  // Shapes of the parameter tensors, in weight-set order.
  std::vector<Tensor> zero_weights() const;
  std::size_t n_params() const;
};

// Config grammar: comma-separated "dense(in,out,act)" | "lstm(in,hidden,seq)"
// | "softmax(in,classes)" with act one of tanh|relu|identity.
Architecture parse_architecture(const std::string& text);
std::string format_architecture(const Architecture& arch);

const char* to_string(Activation a);

}  // namespace gradhub
