#include "gradhub/arch.hpp"

#include <cctype>
#include <sstream>

#include "gradhub/errors.hpp"

namespace gradhub {

namespace {

std::size_t out_dim_of(const LayerSpec& l) {
  if (const auto* d = std::get_if<DenseSpec>(&l)) return d->out_dim;
  if (const auto* r = std::get_if<LstmSpec>(&l)) return r->hidden_dim;
  return std::get<SoftmaxSpec>(l).n_classes;
}

std::size_t in_dim_of(const LayerSpec& l) {
  if (const auto* d = std::get_if<DenseSpec>(&l)) return d->in_dim;
  if (const auto* r = std::get_if<LstmSpec>(&l)) return r->input_dim;
  return std::get<SoftmaxSpec>(l).in_dim;
}

}  // namespace

void Architecture::validate() const {
  if (layers.empty()) throw ConfigError("architecture: no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const bool is_last = (i + 1 == layers.size());
    if (std::holds_alternative<SoftmaxSpec>(l)) {
      const auto& s = std::get<SoftmaxSpec>(l);
      if (s.in_dim < 1 || s.n_classes < 1) {
        throw ConfigError("architecture: layer " + std::to_string(i) +
                          ": softmax dims must be >= 1");
      }
      if (!is_last) {
        throw ConfigError("architecture: layer " + std::to_string(i) +
                          ": softmax output must be the last layer");
      }
    } else if (std::holds_alternative<LstmSpec>(l)) {
      const auto& r = std::get<LstmSpec>(l);
      if (r.input_dim < 1 || r.hidden_dim < 1 || r.seq_len < 1) {
        throw ConfigError("architecture: layer " + std::to_string(i) +
                          ": lstm dims and seq_len must be >= 1");
      }
      if (i != 0) {
        throw ConfigError("architecture: layer " + std::to_string(i) +
                          ": lstm must be the first layer (it consumes the "
                          "input sequence)");
      }
    } else {
      const auto& d = std::get<DenseSpec>(l);
      if (d.in_dim < 1 || d.out_dim < 1) {
        throw ConfigError("architecture: layer " + std::to_string(i) +
                          ": dense dims must be >= 1");
      }
      if (is_last) {
        throw ConfigError(
            "architecture: last layer must be a softmax output");
      }
    }
    if (i > 0 && in_dim_of(l) != out_dim_of(layers[i - 1])) {
      throw ConfigError("architecture: layer " + std::to_string(i) +
                        ": in dim " + std::to_string(in_dim_of(l)) +
                        " does not chain with previous out dim " +
                        std::to_string(out_dim_of(layers[i - 1])));
    }
  }
  if (!std::holds_alternative<SoftmaxSpec>(layers.back())) {
    throw ConfigError("architecture: last layer must be a softmax output");
  }
}

std::size_t Architecture::input_width() const {
  const LayerSpec& first = layers.front();
  if (const auto* r = std::get_if<LstmSpec>(&first)) {
    return r->input_dim * r->seq_len;
  }
  return in_dim_of(first);
}

std::size_t Architecture::n_classes() const {
  return std::get<SoftmaxSpec>(layers.back()).n_classes;
}

std::size_t Architecture::layer_out_dim(std::size_t i) const {
  return out_dim_of(layers[i]);
}

std::size_t Architecture::layer_in_dim(std::size_t i) const {
  return in_dim_of(layers[i]);
}

std::vector<Tensor> Architecture::zero_weights() const {
  std::vector<Tensor> out;
  for (const LayerSpec& l : layers) {
    if (const auto* d = std::get_if<DenseSpec>(&l)) {
      out.push_back(Tensor::zeros({d->out_dim, d->in_dim}));
      out.push_back(Tensor::zeros({d->out_dim}));
    } else if (const auto* r = std::get_if<LstmSpec>(&l)) {
      out.push_back(Tensor::zeros({4 * r->hidden_dim, r->input_dim}));
      out.push_back(Tensor::zeros({4 * r->hidden_dim, r->hidden_dim}));
      out.push_back(Tensor::zeros({4 * r->hidden_dim}));
    } else {
      const auto& s = std::get<SoftmaxSpec>(l);
      out.push_back(Tensor::zeros({s.n_classes, s.in_dim}));
      out.push_back(Tensor::zeros({s.n_classes}));
    }
  }
  return out;
}

std::size_t Architecture::n_params() const {
  std::size_t n = 0;
  for (const Tensor& t : zero_weights()) n += t.size();
  return n;
}

const char* to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
  }
  return "?";
}

namespace {

struct Parser {
  const std::string& s;
  std::size_t pos = 0;

  void skip_ws() {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  }
  bool eat(char c) {
    skip_ws();
    if (pos < s.size() && s[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }
  std::string ident() {
    skip_ws();
    std::size_t start = pos;
    while (pos < s.size() &&
           (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '_')) {
      ++pos;
    }
    return s.substr(start, pos - start);
  }
  std::size_t number() {
    skip_ws();
    std::size_t start = pos;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos == start) throw ConfigError("architecture: expected number at " + std::to_string(start));
    return static_cast<std::size_t>(std::stoull(s.substr(start, pos - start)));
  }
};

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw ConfigError("architecture: unknown activation '" + name + "'");
}

}  // namespace

Architecture parse_architecture(const std::string& text) {
  Architecture arch;
  Parser p{text};
  while (true) {
    std::string kind = p.ident();
    if (kind.empty()) throw ConfigError("architecture: expected layer in '" + text + "'");
    if (!p.eat('(')) throw ConfigError("architecture: expected '(' after " + kind);
    if (kind == "dense") {
      DenseSpec d;
      d.in_dim = p.number();
      if (!p.eat(',')) throw ConfigError("architecture: dense needs 3 args");
      d.out_dim = p.number();
      if (!p.eat(',')) throw ConfigError("architecture: dense needs 3 args");
      d.act = parse_activation(p.ident());
      arch.layers.emplace_back(d);
    } else if (kind == "lstm") {
      LstmSpec r;
      r.input_dim = p.number();
      if (!p.eat(',')) throw ConfigError("architecture: lstm needs 3 args");
      r.hidden_dim = p.number();
      if (!p.eat(',')) throw ConfigError("architecture: lstm needs 3 args");
      r.seq_len = p.number();
      arch.layers.emplace_back(r);
    } else if (kind == "softmax") {
      SoftmaxSpec sm;
      sm.in_dim = p.number();
      if (!p.eat(',')) throw ConfigError("architecture: softmax needs 2 args");
      sm.n_classes = p.number();
      arch.layers.emplace_back(sm);
    } else {
      throw ConfigError("architecture: unknown layer kind '" + kind + "'");
    }
    if (!p.eat(')')) throw ConfigError("architecture: expected ')'");
    if (!p.eat(',')) break;
  }
  p.skip_ws();
  if (p.pos != text.size()) {
    throw ConfigError("architecture: trailing input at " + std::to_string(p.pos));
  }
  arch.validate();
  return arch;
}

std::string format_architecture(const Architecture& arch) {
  std::ostringstream os;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    if (i) os << ",";
    const LayerSpec& l = arch.layers[i];
    if (const auto* d = std::get_if<DenseSpec>(&l)) {
      os << "dense(" << d->in_dim << "," << d->out_dim << "," << to_string(d->act) << ")";
    } else if (const auto* r = std::get_if<LstmSpec>(&l)) {
      os << "lstm(" << r->input_dim << "," << r->hidden_dim << "," << r->seq_len << ")";
    } else {
      const auto& s = std::get<SoftmaxSpec>(l);
      os << "softmax(" << s.in_dim << "," << s.n_classes << ")";
    }
  }
  return os.str();
}

}  // namespace gradhub
