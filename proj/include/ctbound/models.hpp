#pragma once

// The two learned stages. The initialization stage runs a CNN per patch to
// predict the five geometric junction parameters; wedge colors are always
// computed from the observed patch, never predicted. The refinement stage
// embeds every patch's (geometry, colors) vector, adds a 2D positional
// encoding, runs a transformer encoder over the whole grid jointly, and emits
// corrected geometry; colors are then re-estimated from the image with the
// refined geometry.

#include <cmath>
#include <vector>

#include "ctbound/checkpoint.hpp"
#include "ctbound/field.hpp"
#include "ctbound/image_io.hpp"
#include "ctbound/junction.hpp"
#include "ctbound/nn.hpp"

namespace ctbound {

// ---- patch extraction -------------------------------------------------------

struct PatchRef {
  int m = 0;  // grid row
  int n = 0;  // grid column
  ColorField pixels;
};

template <typename FieldT>
inline std::vector<PatchRef> extract_patches(const FieldT& image, const PatchGridSpec& grid) {
  grid.validate();
  if (image.height != grid.image_height || image.width != grid.image_width)
    throw InputError("extract_patches: image size does not match grid");
  const int R = grid.patch_size, k = grid.channels;
  std::vector<PatchRef> out;
  out.reserve(grid.patch_count());
  for (int m = 0; m < grid.rows(); ++m)
    for (int n = 0; n < grid.cols(); ++n) {
      PatchRef p;
      p.m = m;
      p.n = n;
      p.pixels = ColorField(R, R, k);
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < R; ++c)
          for (int ch = 0; ch < k; ++ch)
            p.pixels.at(r, c, ch) =
                static_cast<double>(image.at(m * grid.stride + r, n * grid.stride + c, ch));
      out.push_back(std::move(p));
    }
  return out;
}

// ---- photon-count normalization ---------------------------------------------

inline double percentile99(const PhotonImage& img) {
  std::vector<std::uint32_t> v = img.counts;
  if (v.empty()) throw InputError("percentile99: empty image");
  const size_t idx = (v.size() - 1) * 99 / 100;
  std::nth_element(v.begin(), v.begin() + idx, v.end());
  return std::max<double>(1.0, v[idx]);
}

// Counts scaled to O(1): by the photon level when known, else by the 99th
// percentile count.
inline ColorField normalize_counts(const PhotonImage& img, double alpha = 0.0) {
  const double scale = alpha > 0.0 ? alpha : percentile99(img);
  ColorField out(img.height, img.width, img.channels);
  for (size_t i = 0; i < img.counts.size(); ++i) out.values[i] = img.counts[i] / scale;
  return out;
}

// Separable bilinear resample of a square patch (used to feed a small
// receptive field into a larger-input CNN). in_size == out_size is identity.
inline ColorField upsample_bilinear(const ColorField& in, int out_size) {
  if (out_size < 1) throw ConfigError("upsample_bilinear: bad output size");
  if (in.height != in.width) throw ConfigError("upsample_bilinear: patch must be square");
  if (in.height == out_size) return in;
  ColorField out(out_size, out_size, in.channels);
  const double scale = out_size > 1 ? double(in.height - 1) / (out_size - 1) : 0.0;
  for (int r = 0; r < out_size; ++r)
    for (int c = 0; c < out_size; ++c) {
      const double fy = r * scale, fx = c * scale;
      const int y0 = std::min(int(fy), in.height - 1), x0 = std::min(int(fx), in.width - 1);
      const int y1 = std::min(y0 + 1, in.height - 1), x1 = std::min(x0 + 1, in.width - 1);
      const double wy = fy - y0, wx = fx - x0;
      for (int ch = 0; ch < in.channels; ++ch)
        out.at(r, c, ch) = (1 - wy) * ((1 - wx) * in.at(y0, x0, ch) + wx * in.at(y0, x1, ch)) +
                           wy * ((1 - wx) * in.at(y1, x0, ch) + wx * in.at(y1, x1, ch));
    }
  return out;
}

// ---- initialization stage ---------------------------------------------------

struct InitModelConfig {
  ConvStackSpec conv;
  int patch_size = 21;
  // published stack wants an 81x81 input; patches are bilinearly upsampled to
  // conv.input_size before the forward pass
  static InitModelConfig full(int channels) {
    InitModelConfig c;
    c.conv = ConvStackSpec::table1(channels);
    return c;
  }
  static InitModelConfig desk(int channels) {
    InitModelConfig c;
    c.conv = ConvStackSpec::desk(channels);
    return c;
  }
};

template <typename T>
struct InitStageModel {
  InitModelConfig config;
  ParamStore<T> store;
  ConvStack<T> cnn;

  static InitStageModel create(const InitModelConfig& cfg, std::uint64_t seed) {
    if (cfg.patch_size < 5) throw ConfigError("init stage: patch size too small");
    InitStageModel m;
    m.config = cfg;
    std::mt19937_64 rng(seed);
    m.cnn = ConvStack<T>::create(m.store, "init", cfg.conv, rng);
    return m;
  }

  // Differentiable geometry head: normalized patch -> [5] tensor
  // (x0, y0, and three raw angles).
  Tensor<T> forward_geometry(const ColorField& normalized_patch) const {
    const int R = config.patch_size, k = config.conv.input_channels;
    if (normalized_patch.height != R || normalized_patch.width != R ||
        normalized_patch.channels != k)
      throw InputError("init stage: patch shape mismatch");
    ColorField up = upsample_bilinear(normalized_patch, config.conv.input_size);
    const int S = config.conv.input_size;
    std::vector<T> chw(static_cast<size_t>(k) * S * S);
    for (int ch = 0; ch < k; ++ch)
      for (int r = 0; r < S; ++r)
        for (int c = 0; c < S; ++c)
          chw[(static_cast<size_t>(ch) * S + r) * S + c] = static_cast<T>(up.at(r, c, ch));
    Tensor<T> x(Shape{k, S, S}, std::move(chw));
    return reshape(cnn.forward(x), Shape{5});
  }

  // Full per-patch prediction: canonical geometry plus colors estimated from
  // the patch itself.
  JunctionParams predict(const ColorField& normalized_patch) const {
    NoGradGuard ng;
    Tensor<T> out = forward_geometry(normalized_patch);
    JunctionParams p;
    p.x0 = static_cast<double>(out.data()[0]);
    p.y0 = static_cast<double>(out.data()[1]);
    for (int j = 0; j < 3; ++j) p.angles[j] = static_cast<double>(out.data()[2 + j]);
    for (double v : {p.x0, p.y0, p.angles[0], p.angles[1], p.angles[2]})
      if (!std::isfinite(v)) throw NumericError("init stage: non-finite network output");
    p.canonicalize();
    auto colors = estimate_wedge_colors(normalized_patch, p.x0, p.y0, p.angles);
    for (int j = 0; j < 3; ++j) p.colors[j] = colors[j];
    return p;
  }
};

// ---- refinement stage -------------------------------------------------------

struct RefineModelConfig {
  int dim = 128;
  int layers = 8;
  int heads = 8;
  int ff_dim = 256;
  int channels = 1;
  static RefineModelConfig full(int channels) { return {128, 8, 8, 256, channels}; }
  static RefineModelConfig desk(int channels) { return {32, 2, 4, 64, channels}; }
};

template <typename T>
struct RefineStageModel {
  RefineModelConfig config;
  ParamStore<T> store;
  LinearLayer<T> embed;  // 5 + 3k -> dim
  std::vector<EncoderBlock<T>> blocks;
  LinearLayer<T> head;  // dim -> 5

  static RefineStageModel create(const RefineModelConfig& cfg, std::uint64_t seed) {
    if (cfg.dim < 2 || cfg.dim % 2 != 0)
      throw ConfigError("refine stage: model dim must be even and >= 2");
    if (cfg.layers < 1 || cfg.channels < 1)
      throw ConfigError("refine stage: bad layer or channel count");
    RefineStageModel m;
    m.config = cfg;
    std::mt19937_64 rng(seed);
    m.embed = LinearLayer<T>::create(m.store, "refine.embed", 5 + 3 * cfg.channels, cfg.dim, rng);
    for (int i = 0; i < cfg.layers; ++i)
      m.blocks.push_back(
          EncoderBlock<T>::create(m.store, "refine.block" + std::to_string(i), cfg.dim,
                                  cfg.heads, cfg.ff_dim, rng));
    m.head = LinearLayer<T>::create(m.store, "refine.head", cfg.dim, 5, rng);
    return m;
  }

  // Feature vector per patch: (x0, y0, phi1..phi3, wedge colors). [P, 5+3k]
  Tensor<T> pack_features(const std::vector<JunctionParams>& params) const {
    const int k = config.channels, w = 5 + 3 * k;
    const int P = static_cast<int>(params.size());
    if (P == 0) throw InputError("refine stage: empty parameter grid");
    std::vector<T> f(static_cast<size_t>(P) * w);
    for (int p = 0; p < P; ++p) {
      T* row = f.data() + static_cast<size_t>(p) * w;
      row[0] = static_cast<T>(params[p].x0);
      row[1] = static_cast<T>(params[p].y0);
      for (int j = 0; j < 3; ++j) {
        row[2 + j] = static_cast<T>(params[p].angles[j]);
        if (static_cast<int>(params[p].colors[j].size()) != k)
          throw InputError("refine stage: color channel mismatch");
        for (int c = 0; c < k; ++c)
          row[5 + j * k + c] = static_cast<T>(params[p].colors[j][c]);
      }
    }
    return Tensor<T>(Shape{P, w}, std::move(f));
  }

  Tensor<T> positional_table(const std::vector<std::pair<int, int>>& cells) const {
    const int P = static_cast<int>(cells.size()), d = config.dim;
    std::vector<T> pe(static_cast<size_t>(P) * d);
    for (int p = 0; p < P; ++p) {
      auto v = positional_encoding_2d(cells[p].first, cells[p].second, d);
      for (int i = 0; i < d; ++i) pe[static_cast<size_t>(p) * d + i] = static_cast<T>(v[i]);
    }
    return Tensor<T>(Shape{P, d}, std::move(pe));
  }

  // Differentiable geometry pass over the whole grid: [P, 5+3k] -> [P, 5].
  // The encoder sees only embedded parameters plus positions, never pixels.
  Tensor<T> forward_geometry(const Tensor<T>& features,
                             const std::vector<std::pair<int, int>>& cells) const {
    if (features.shape().size() != 2 ||
        features.shape()[1] != 5 + 3 * config.channels ||
        features.shape()[0] != static_cast<int>(cells.size()))
      throw InputError("refine stage: feature grid shape mismatch");
    Tensor<T> x = embed.forward(features) + positional_table(cells);
    for (auto& b : blocks) x = b.forward(x);
    return head.forward(x);
  }

  // Full refinement: canonical geometry from the encoder, colors re-estimated
  // from the (normalized) image under the refined geometry.
  std::vector<JunctionParams> refine(const std::vector<JunctionParams>& init_params,
                                     const ColorField& normalized_image,
                                     const PatchGridSpec& grid) const {
    grid.validate();
    if (static_cast<int>(init_params.size()) != grid.patch_count())
      throw InputError("refine stage: params grid does not match patch grid");
    if (grid.channels != config.channels)
      throw InputError("refine stage: channel count mismatch");
    NoGradGuard ng;
    std::vector<std::pair<int, int>> cells;
    for (int m = 0; m < grid.rows(); ++m)
      for (int n = 0; n < grid.cols(); ++n) cells.emplace_back(m, n);
    Tensor<T> out = forward_geometry(pack_features(init_params), cells);

    auto patches = extract_patches(normalized_image, grid);
    std::vector<JunctionParams> refined(init_params.size());
    for (size_t p = 0; p < refined.size(); ++p) {
      const T* row = out.data().data() + p * 5;
      JunctionParams& rp = refined[p];
      rp.x0 = static_cast<double>(row[0]);
      rp.y0 = static_cast<double>(row[1]);
      for (int j = 0; j < 3; ++j) rp.angles[j] = static_cast<double>(row[2 + j]);
      for (double v : {rp.x0, rp.y0, rp.angles[0], rp.angles[1], rp.angles[2]})
        if (!std::isfinite(v)) throw NumericError("refine stage: non-finite network output");
      rp.canonicalize();
      auto colors = estimate_wedge_colors(patches[p].pixels, rp.x0, rp.y0, rp.angles);
      for (int j = 0; j < 3; ++j) rp.colors[j] = colors[j];
    }
    return refined;
  }
};

}  // namespace ctbound
