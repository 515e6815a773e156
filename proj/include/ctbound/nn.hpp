#pragma once

// Layer set on top of the tensor engine: convolution / pooling / linear
// stacks, transformer encoder blocks, 2D sinusoidal positional encoding,
// and Adam.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ctbound/tensor.hpp"

namespace ctbound {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> tensor;
};

// Named parameter registry; owns nothing beyond the tensor handles.
template <typename T>
class ParamStore {
 public:
  Tensor<T> add(const std::string& name, const Shape& shape, T init_scale,
                std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(dist(rng)) * init_scale;
    Tensor<T> t(shape, std::move(data));
    t.set_requires_grad();
    params_.push_back({name, t});
    return t;
  }

  Tensor<T> add_zeros(const std::string& name, const Shape& shape) {
    Tensor<T> t(shape, T(0));
    t.set_requires_grad();
    params_.push_back({name, t});
    return t;
  }

  Tensor<T> add_const(const std::string& name, const Shape& shape, T fill) {
    Tensor<T> t(shape, fill);
    t.set_requires_grad();
    params_.push_back({name, t});
    return t;
  }

  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Param<T>>& params() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  size_t total_size() const {
    size_t n = 0;
    for (auto& p : params_) n += p.tensor.numel();
    return n;
  }

 private:
  std::vector<Param<T>> params_;
};

template <typename T>
struct LinearLayer {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  static LinearLayer create(ParamStore<T>& store, const std::string& name, int in, int out,
                            std::mt19937_64& rng) {
    const T scale = static_cast<T>(std::sqrt(2.0 / in));
    return {store.add(name + ".weight", {in, out}, scale, rng),
            store.add_zeros(name + ".bias", {out})};
  }

  Tensor<T> forward(const Tensor<T>& x) const { return matmul(x, weight) + bias; }
};

template <typename T>
struct Conv2dLayer {
  Tensor<T> weight;  // [F, C, kh, kw]
  Tensor<T> bias;    // [F]
  int stride = 1;
  int pad = 0;

  static Conv2dLayer create(ParamStore<T>& store, const std::string& name, int in_ch,
                            int out_ch, int kernel, int stride, int pad,
                            std::mt19937_64& rng) {
    const T scale = static_cast<T>(std::sqrt(2.0 / (in_ch * kernel * kernel)));
    return {store.add(name + ".weight", {out_ch, in_ch, kernel, kernel}, scale, rng),
            store.add_zeros(name + ".bias", {out_ch}), stride, pad};
  }

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }
};

// Scaled dot-product self-attention with packed per-head projections.
// x is [n, d]; d must divide evenly into heads.
template <typename T>
struct MultiHeadAttention {
  LinearLayer<T> q, k, v, out;
  int heads = 1;
  int dim = 0;

  static MultiHeadAttention create(ParamStore<T>& store, const std::string& name, int d,
                                   int heads, std::mt19937_64& rng) {
    if (heads < 1 || d % heads != 0)
      throw ConfigError("multi_head_attention: model dim " + std::to_string(d) +
                        " not divisible by " + std::to_string(heads) + " heads");
    return {LinearLayer<T>::create(store, name + ".q", d, d, rng),
            LinearLayer<T>::create(store, name + ".k", d, d, rng),
            LinearLayer<T>::create(store, name + ".v", d, d, rng),
            LinearLayer<T>::create(store, name + ".out", d, d, rng), heads, d};
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    const int dk = dim / heads;
    Tensor<T> Q = q.forward(x), K = k.forward(x), V = v.forward(x);
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
    std::vector<Tensor<T>> head_outputs;
    for (int h = 0; h < heads; ++h) {
      Tensor<T> qh = slice_cols(Q, h * dk, dk);
      Tensor<T> kh = slice_cols(K, h * dk, dk);
      Tensor<T> vh = slice_cols(V, h * dk, dk);
      Tensor<T> att = softmax(matmul(qh, transpose2d(kh)) * scale);
      head_outputs.push_back(matmul(att, vh));
    }
    return out.forward(concat_cols(head_outputs));
  }
};

// Pre-LN encoder block: x + MHA(LN(x)), then x + FF(LN(x)).
template <typename T>
struct EncoderBlock {
  Tensor<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  MultiHeadAttention<T> attention;
  LinearLayer<T> ff1, ff2;

  static EncoderBlock create(ParamStore<T>& store, const std::string& name, int d, int heads,
                             int ff_dim, std::mt19937_64& rng) {
    return {store.add_const(name + ".ln1.gain", {d}, T(1)),
            store.add_zeros(name + ".ln1.bias", {d}),
            store.add_const(name + ".ln2.gain", {d}, T(1)),
            store.add_zeros(name + ".ln2.bias", {d}),
            MultiHeadAttention<T>::create(store, name + ".attn", d, heads, rng),
            LinearLayer<T>::create(store, name + ".ff1", d, ff_dim, rng),
            LinearLayer<T>::create(store, name + ".ff2", ff_dim, d, rng)};
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> y = x + attention.forward(layer_norm(x, ln1_gain, ln1_bias));
    return y + ff2.forward(relu(ff1.forward(layer_norm(y, ln2_gain, ln2_bias))));
  }
};

// Description of a CNN: conv / pool layers followed by fully connected
// layers, ReLU after every conv and FC except the final output.
struct ConvStackSpec {
  struct Layer {
    enum Kind { kConv, kPool, kFc } kind;
    int out = 0;     // channels (conv) or units (fc)
    int kernel = 0;
    int stride = 1;
    int pad = 0;
  };
  int input_size = 81;
  int input_channels = 1;
  std::vector<Layer> layers;

  // The published stack: 81x81xk in, 5 outputs.
  static ConvStackSpec table1(int channels) {
    using L = Layer;
    ConvStackSpec s;
    s.input_size = 81;
    s.input_channels = channels;
    s.layers = {
        {L::kConv, 96, 5, 4, 2},  {L::kPool, 0, 3, 2, 0},  {L::kConv, 256, 5, 1, 2},
        {L::kPool, 0, 2, 2, 0},   {L::kConv, 384, 3, 1, 1}, {L::kConv, 384, 3, 1, 1},
        {L::kConv, 256, 3, 1, 1}, {L::kPool, 0, 3, 2, 0},  {L::kFc, 4096},
        {L::kFc, 1024},           {L::kFc, 5}};
    return s;
  }

  // Small stack for CPU-scale experiments: 21x21xk in, 5 outputs.
  static ConvStackSpec desk(int channels) {
    using L = Layer;
    ConvStackSpec s;
    s.input_size = 21;
    s.input_channels = channels;
    s.layers = {{L::kConv, 8, 5, 2, 2},
                {L::kConv, 16, 3, 2, 1},
                {L::kFc, 64},
                {L::kFc, 5}};
    return s;
  }
};

template <typename T>
struct ConvStack {
  ConvStackSpec spec;
  std::vector<Conv2dLayer<T>> convs;
  std::vector<LinearLayer<T>> fcs;

  static ConvStack create(ParamStore<T>& store, const std::string& name,
                          const ConvStackSpec& spec, std::mt19937_64& rng) {
    ConvStack net;
    net.spec = spec;
    int ch = spec.input_channels, size = spec.input_size;
    int ci = 0, fi = 0;
    int flat = 0;
    for (const auto& L : spec.layers) {
      switch (L.kind) {
        case ConvStackSpec::Layer::kConv:
          net.convs.push_back(Conv2dLayer<T>::create(store, name + ".conv" + std::to_string(ci++),
                                                     ch, L.out, L.kernel, L.stride, L.pad, rng));
          ch = L.out;
          size = (size + 2 * L.pad - L.kernel) / L.stride + 1;
          break;
        case ConvStackSpec::Layer::kPool:
          size = (size - L.kernel) / L.stride + 1;
          break;
        case ConvStackSpec::Layer::kFc: {
          const int in = flat == 0 ? ch * size * size : flat;
          net.fcs.push_back(
              LinearLayer<T>::create(store, name + ".fc" + std::to_string(fi++), in, L.out, rng));
          flat = L.out;
          break;
        }
      }
    }
    return net;
  }

  // x is [C, input_size, input_size]; returns [1, out].
  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> h = x;
    size_t ci = 0, fi = 0;
    for (const auto& L : spec.layers) {
      switch (L.kind) {
        case ConvStackSpec::Layer::kConv:
          h = relu(convs[ci++].forward(h));
          break;
        case ConvStackSpec::Layer::kPool:
          h = maxpool2d(h, L.kernel, L.stride);
          break;
        case ConvStackSpec::Layer::kFc:
          if (h.shape().size() != 2) h = reshape(h, {1, static_cast<int>(h.numel())});
          h = fcs[fi].forward(h);
          if (fi + 1 < fcs.size()) h = relu(h);
          ++fi;
          break;
      }
    }
    return h;
  }

  // Shapes after each layer, (H, W, C) order, for conformance checks.
  std::vector<Shape> layer_output_shapes() const {
    std::vector<Shape> out;
    int ch = spec.input_channels, size = spec.input_size;
    int flat = 0;
    for (const auto& L : spec.layers) {
      switch (L.kind) {
        case ConvStackSpec::Layer::kConv:
          ch = L.out;
          size = (size + 2 * L.pad - L.kernel) / L.stride + 1;
          out.push_back({size, size, ch});
          break;
        case ConvStackSpec::Layer::kPool:
          size = (size - L.kernel) / L.stride + 1;
          out.push_back({size, size, ch});
          break;
        case ConvStackSpec::Layer::kFc:
          flat = L.out;
          out.push_back({flat});
          break;
      }
    }
    return out;
  }
};

// 2D sinusoidal positional encoding: the first half of the vector encodes the
// patch row index m, the second half the column index n, each with
// interleaved sin/cos at frequency 1/10000^(4i/d) for slot i within the half.
inline std::vector<double> positional_encoding_2d(int m, int n, int d) {
  if (d % 2 != 0) throw ConfigError("positional_encoding_2d: dimension must be even");
  std::vector<double> p(d);
  const int half = d / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, 4.0 * i / d);
    p[i] = (i % 2 == 0) ? std::sin(m / freq) : std::cos(m / freq);
    p[half + i] = (i % 2 == 0) ? std::sin(n / freq) : std::cos(n / freq);
  }
  return p;
}

// Adam with bias correction.
template <typename T>
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<std::vector<double>> m, v;  // one slot per parameter

  void attach(const ParamStore<T>& store) {
    m.clear();
    v.clear();
    for (auto& p : store.params()) {
      m.emplace_back(p.tensor.numel(), 0.0);
      v.emplace_back(p.tensor.numel(), 0.0);
    }
    step = 0;
  }
};

template <typename T>
void adam_step(ParamStore<T>& store, AdamState<T>& state) {
  if (state.m.size() != store.params().size()) state.attach(store);
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, state.step);
  const double bc2 = 1.0 - std::pow(state.beta2, state.step);
  for (size_t pi = 0; pi < store.params().size(); ++pi) {
    auto& p = store.params()[pi];
    p.tensor.node()->ensure_grad();
    auto& g = p.tensor.grad();
    auto& val = p.tensor.data();
    for (size_t i = 0; i < val.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      if (!std::isfinite(gi))
        throw NumericError("adam_step: non-finite gradient in parameter " + p.name);
      state.m[pi][i] = state.beta1 * state.m[pi][i] + (1.0 - state.beta1) * gi;
      state.v[pi][i] = state.beta2 * state.v[pi][i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = state.m[pi][i] / bc1;
      const double vhat = state.v[pi][i] / bc2;
      val[i] -= static_cast<T>(state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

}  // namespace ctbound
