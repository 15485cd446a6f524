#include "gradhub/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "gradhub/errors.hpp"
#include "gradhub/rng.hpp"

namespace gradhub {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double activate(double z, Activation a) {
  switch (a) {
    case Activation::tanh: return std::tanh(z);
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::identity: return z;
  }
  return z;
}

double activate_grad(double z, Activation a) {
  switch (a) {
    case Activation::tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

void check_weight_shapes(const WeightSet& w, const Architecture& arch) {
  const std::vector<Tensor> expect = arch.zero_weights();
  if (w.tensors.size() != expect.size()) {
    throw ShapeError("weight set has " + std::to_string(w.tensors.size()) +
                     " tensors, architecture needs " +
                     std::to_string(expect.size()));
  }
  std::size_t ti = 0;
  for (std::size_t li = 0; li < arch.layers.size(); ++li) {
    const std::size_t per_layer =
        std::holds_alternative<LstmSpec>(arch.layers[li]) ? 3u : 2u;
    for (std::size_t k = 0; k < per_layer; ++k, ++ti) {
      if (!w.tensors[ti].same_shape(expect[ti])) {
        throw ShapeError("layer " + std::to_string(li) + ": tensor " +
                         std::to_string(k) + " has shape " +
                         shape_string({w.tensors[ti]}) + ", expected " +
                         shape_string({expect[ti]}));
      }
    }
  }
}

std::string arch_signature(const Architecture& arch) {
  return format_architecture(arch);
}

}  // namespace

std::uint64_t weights_checksum(const WeightSet& w) {
  // FNV-1a over dims and raw value bits.
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ULL;
    }
  };
  for (const Tensor& t : w.tensors) {
    mix(t.dims.size());
    for (std::size_t d : t.dims) mix(d);
    for (double v : t.values) mix(std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

WeightSet init_weights(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  WeightSet w;
  w.tensors = arch.zero_weights();
  w.version = 0;
  for (std::size_t ti = 0; ti < w.tensors.size(); ++ti) {
    Tensor& t = w.tensors[ti];
    const double fan_out = static_cast<double>(t.dims[0]);
    const double fan_in =
        t.dims.size() >= 2 ? static_cast<double>(t.dims[1]) : fan_out;
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    Rng rng(mix_seed(seed, ti));
    for (double& v : t.values) v = rng.uniform(-bound, bound);
  }
  return w;
}

ForwardResult forward(const WeightSet& w, const Architecture& arch,
                      const Batch& batch) {
  arch.validate();
  check_weight_shapes(w, arch);
  if (batch.n_samples < 1) throw ShapeError("batch: n_samples must be >= 1");
  const std::size_t width = arch.input_width();
  if (batch.inputs.size() != batch.n_samples * width) {
    throw ShapeError("batch: inputs size " + std::to_string(batch.inputs.size()) +
                     " != n_samples*" + std::to_string(width));
  }
  if (batch.labels.size() != batch.n_samples) {
    throw ShapeError("batch: labels size != n_samples");
  }

  const std::size_t n = batch.n_samples;
  ForwardResult out;
  out.cache.n_samples = n;
  out.cache.weights_version = w.version;
  out.cache.weights_checksum = weights_checksum(w);
  out.cache.arch_signature = arch_signature(arch);
  out.cache.layers.resize(arch.layers.size());

  std::vector<double> cur = batch.inputs;
  std::size_t ti = 0;  // weight tensor cursor
  for (std::size_t li = 0; li < arch.layers.size(); ++li) {
    LayerCache& lc = out.cache.layers[li];
    lc.x = cur;
    const LayerSpec& layer = arch.layers[li];

    if (const auto* d = std::get_if<DenseSpec>(&layer)) {
      const Tensor& W = w.tensors[ti];
      const Tensor& b = w.tensors[ti + 1];
      ti += 2;
      lc.z.assign(n * d->out_dim, 0.0);
      std::vector<double> y(n * d->out_dim);
      for (std::size_t s = 0; s < n; ++s) {
        const double* xs = &cur[s * d->in_dim];
        for (std::size_t o = 0; o < d->out_dim; ++o) {
          double acc = b.values[o];
          const double* Wrow = &W.values[o * d->in_dim];
          for (std::size_t i = 0; i < d->in_dim; ++i) acc += Wrow[i] * xs[i];
          lc.z[s * d->out_dim + o] = acc;
          y[s * d->out_dim + o] = activate(acc, d->act);
        }
      }
      cur = std::move(y);
    } else if (const auto* r = std::get_if<LstmSpec>(&layer)) {
      const Tensor& Wx = w.tensors[ti];
      const Tensor& Wh = w.tensors[ti + 1];
      const Tensor& b = w.tensors[ti + 2];
      ti += 3;
      const std::size_t H = r->hidden_dim;
      const std::size_t D = r->input_dim;
      const std::size_t T = r->seq_len;
      lc.gates.assign(n * T * 4 * H, 0.0);
      lc.cell.assign(n * T * H, 0.0);
      lc.tanh_c.assign(n * T * H, 0.0);
      lc.hidden.assign(n * T * H, 0.0);
      std::vector<double> y(n * H);
      std::vector<double> pre(4 * H);
      for (std::size_t s = 0; s < n; ++s) {
        const double* xseq = &cur[s * T * D];
        const double* h_prev = nullptr;  // null means zeros
        const double* c_prev = nullptr;
        for (std::size_t t = 0; t < T; ++t) {
          const double* xt = &xseq[t * D];
          for (std::size_t rrow = 0; rrow < 4 * H; ++rrow) {
            double acc = b.values[rrow];
            const double* Wxr = &Wx.values[rrow * D];
            for (std::size_t dd = 0; dd < D; ++dd) acc += Wxr[dd] * xt[dd];
            if (h_prev) {
              const double* Whr = &Wh.values[rrow * H];
              for (std::size_t hh = 0; hh < H; ++hh) acc += Whr[hh] * h_prev[hh];
            }
            pre[rrow] = acc;
          }
          double* gate = &lc.gates[(s * T + t) * 4 * H];
          double* ct = &lc.cell[(s * T + t) * H];
          double* tct = &lc.tanh_c[(s * T + t) * H];
          double* ht = &lc.hidden[(s * T + t) * H];
          for (std::size_t hh = 0; hh < H; ++hh) {
            const double ig = sigmoid(pre[hh]);
            const double fg = sigmoid(pre[H + hh]);
            const double gg = std::tanh(pre[2 * H + hh]);
            const double og = sigmoid(pre[3 * H + hh]);
            gate[hh] = ig;
            gate[H + hh] = fg;
            gate[2 * H + hh] = gg;
            gate[3 * H + hh] = og;
            const double cprev = c_prev ? c_prev[hh] : 0.0;
            ct[hh] = fg * cprev + ig * gg;
            tct[hh] = std::tanh(ct[hh]);
            ht[hh] = og * tct[hh];
          }
          h_prev = ht;
          c_prev = ct;
        }
        for (std::size_t hh = 0; hh < H; ++hh) {
          y[s * H + hh] = lc.hidden[(s * T + (T - 1)) * H + hh];
        }
      }
      cur = std::move(y);
    } else {
      const auto& sm = std::get<SoftmaxSpec>(layer);
      const Tensor& W = w.tensors[ti];
      const Tensor& b = w.tensors[ti + 1];
      ti += 2;
      const std::size_t K = sm.n_classes;
      lc.probs.assign(n * K, 0.0);
      std::vector<double> z(K);
      for (std::size_t s = 0; s < n; ++s) {
        const double* xs = &cur[s * sm.in_dim];
        double zmax = -1e300;
        for (std::size_t k = 0; k < K; ++k) {
          double acc = b.values[k];
          const double* Wrow = &W.values[k * sm.in_dim];
          for (std::size_t i = 0; i < sm.in_dim; ++i) acc += Wrow[i] * xs[i];
          z[k] = acc;
          zmax = std::max(zmax, acc);
        }
        double denom = 0.0;
        for (std::size_t k = 0; k < K; ++k) denom += std::exp(z[k] - zmax);
        for (std::size_t k = 0; k < K; ++k) {
          lc.probs[s * K + k] = std::exp(z[k] - zmax) / denom;
        }
      }
      out.probs.p = lc.probs;
      out.probs.rows = n;
      out.probs.cols = K;
    }
  }
  return out;
}

double loss(const ProbMatrix& probs, const std::vector<int>& labels) {
  if (labels.size() != probs.rows) {
    throw ShapeError("loss: labels size != probability rows");
  }
  double total = 0.0;
  for (std::size_t s = 0; s < probs.rows; ++s) {
    const int y = labels[s];
    if (y < 0 || static_cast<std::size_t>(y) >= probs.cols) {
      throw ShapeError("loss: label " + std::to_string(y) +
                       " out of range [0," + std::to_string(probs.cols) + ")");
    }
    total += -std::log(probs.at(s, static_cast<std::size_t>(y)));
  }
  return total / static_cast<double>(probs.rows);
}

Gradient backward(const WeightSet& w, const Architecture& arch,
                  const ForwardCache& cache, const std::vector<int>& labels) {
  check_weight_shapes(w, arch);
  if (cache.arch_signature != arch_signature(arch) ||
      cache.layers.size() != arch.layers.size()) {
    throw CacheMismatchError("backward: cache built for a different architecture");
  }
  if (cache.weights_checksum != weights_checksum(w) ||
      cache.weights_version != w.version) {
    throw CacheMismatchError("backward: cache is stale (weights changed since forward)");
  }
  const std::size_t n = cache.n_samples;
  if (labels.size() != n) throw ShapeError("backward: labels size != cached batch");

  Gradient grad;
  grad.tensors = arch.zero_weights();
  grad.basis_version = w.version;

  // Upstream gradient w.r.t. the current layer's output, n x out.
  std::vector<double> dy;

  std::size_t ti = w.tensors.size();
  for (std::size_t li = arch.layers.size(); li-- > 0;) {
    const LayerSpec& layer = arch.layers[li];
    const LayerCache& lc = cache.layers[li];

    if (const auto* sm = std::get_if<SoftmaxSpec>(&layer)) {
      ti -= 2;
      const Tensor& W = w.tensors[ti];
      Tensor& dW = grad.tensors[ti];
      Tensor& db = grad.tensors[ti + 1];
      const std::size_t K = sm->n_classes;
      const std::size_t in = sm->in_dim;
      // d(mean loss)/dz = (p - onehot)/n, folded here so every parameter
      // gradient below is already the batch mean.
      std::vector<double> dz(n * K);
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t s = 0; s < n; ++s) {
        const int y = labels[s];
        if (y < 0 || static_cast<std::size_t>(y) >= K) {
          throw ShapeError("backward: label out of range");
        }
        for (std::size_t k = 0; k < K; ++k) {
          double v = lc.probs[s * K + k];
          if (k == static_cast<std::size_t>(y)) v -= 1.0;
          dz[s * K + k] = v * inv_n;
        }
      }
      dy.assign(n * in, 0.0);
      for (std::size_t s = 0; s < n; ++s) {
        const double* xs = &lc.x[s * in];
        for (std::size_t k = 0; k < K; ++k) {
          const double d = dz[s * K + k];
          db.values[k] += d;
          double* dWrow = &dW.values[k * in];
          const double* Wrow = &W.values[k * in];
          for (std::size_t i = 0; i < in; ++i) {
            dWrow[i] += d * xs[i];
            dy[s * in + i] += Wrow[i] * d;
          }
        }
      }
    } else if (const auto* dn = std::get_if<DenseSpec>(&layer)) {
      ti -= 2;
      const Tensor& W = w.tensors[ti];
      Tensor& dW = grad.tensors[ti];
      Tensor& db = grad.tensors[ti + 1];
      const std::size_t out = dn->out_dim;
      const std::size_t in = dn->in_dim;
      std::vector<double> dx(n * in, 0.0);
      for (std::size_t s = 0; s < n; ++s) {
        const double* xs = &lc.x[s * in];
        for (std::size_t o = 0; o < out; ++o) {
          const double d =
              dy[s * out + o] * activate_grad(lc.z[s * out + o], dn->act);
          db.values[o] += d;
          double* dWrow = &dW.values[o * in];
          const double* Wrow = &W.values[o * in];
          for (std::size_t i = 0; i < in; ++i) {
            dWrow[i] += d * xs[i];
            dx[s * in + i] += Wrow[i] * d;
          }
        }
      }
      dy = std::move(dx);
    } else {
      const auto& r = std::get<LstmSpec>(layer);
      ti -= 3;
      const Tensor& Wh = w.tensors[ti + 1];
      Tensor& dWx = grad.tensors[ti];
      Tensor& dWh = grad.tensors[ti + 1];
      Tensor& db = grad.tensors[ti + 2];
      const std::size_t H = r.hidden_dim;
      const std::size_t D = r.input_dim;
      const std::size_t T = r.seq_len;
      std::vector<double> dh(H), dc(H), dz(4 * H), dh_prev(H);
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t hh = 0; hh < H; ++hh) {
          dh[hh] = dy[s * H + hh];  // only the final hidden state leaves the cell
          dc[hh] = 0.0;
        }
        for (std::size_t t = T; t-- > 0;) {
          const double* gate = &lc.gates[(s * T + t) * 4 * H];
          const double* tct = &lc.tanh_c[(s * T + t) * H];
          const double* c_prev = t > 0 ? &lc.cell[(s * T + t - 1) * H] : nullptr;
          const double* h_prev = t > 0 ? &lc.hidden[(s * T + t - 1) * H] : nullptr;
          const double* xt = &lc.x[(s * T + t) * D];
          for (std::size_t hh = 0; hh < H; ++hh) {
            const double ig = gate[hh];
            const double fg = gate[H + hh];
            const double gg = gate[2 * H + hh];
            const double og = gate[3 * H + hh];
            const double dout = dh[hh] * tct[hh];
            dc[hh] += dh[hh] * og * (1.0 - tct[hh] * tct[hh]);
            const double di = dc[hh] * gg;
            const double dg = dc[hh] * ig;
            const double df = dc[hh] * (c_prev ? c_prev[hh] : 0.0);
            dz[hh] = di * ig * (1.0 - ig);
            dz[H + hh] = df * fg * (1.0 - fg);
            dz[2 * H + hh] = dg * (1.0 - gg * gg);
            dz[3 * H + hh] = dout * og * (1.0 - og);
          }
          for (std::size_t rrow = 0; rrow < 4 * H; ++rrow) {
            const double d = dz[rrow];
            db.values[rrow] += d;
            double* dWxr = &dWx.values[rrow * D];
            for (std::size_t dd = 0; dd < D; ++dd) dWxr[dd] += d * xt[dd];
            if (h_prev) {
              double* dWhr = &dWh.values[rrow * H];
              for (std::size_t hh = 0; hh < H; ++hh) dWhr[hh] += d * h_prev[hh];
            }
          }
          std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
          for (std::size_t rrow = 0; rrow < 4 * H; ++rrow) {
            const double d = dz[rrow];
            const double* Whr = &Wh.values[rrow * H];
            for (std::size_t hh = 0; hh < H; ++hh) dh_prev[hh] += Whr[hh] * d;
          }
          for (std::size_t hh = 0; hh < H; ++hh) {
            dh[hh] = dh_prev[hh];
            dc[hh] *= gate[H + hh];  // carry through the forget gate
          }
        }
      }
      // dy for a layer below an LSTM is not needed: the LSTM is always first.
      dy.clear();
    }
  }
  return grad;
}

double batch_loss(const WeightSet& w, const Architecture& arch,
                  const Batch& batch) {
  const ForwardResult r = forward(w, arch, batch);
  return loss(r.probs, batch.labels);
}

Gradient finite_diff_gradient(const WeightSet& w, const Architecture& arch,
                              const Batch& batch, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_gradient: eps must be > 0");
  WeightSet probe = w;
  Gradient grad;
  grad.tensors = arch.zero_weights();
  grad.basis_version = w.version;
  for (std::size_t ti = 0; ti < probe.tensors.size(); ++ti) {
    for (std::size_t j = 0; j < probe.tensors[ti].values.size(); ++j) {
      const double saved = probe.tensors[ti].values[j];
      probe.tensors[ti].values[j] = saved + eps;
      const double lp = batch_loss(probe, arch, batch);
      probe.tensors[ti].values[j] = saved - eps;
      const double lm = batch_loss(probe, arch, batch);
      probe.tensors[ti].values[j] = saved;
      grad.tensors[ti].values[j] = (lp - lm) / (2.0 * eps);
    }
  }
  return grad;
}

}  // namespace gradhub
