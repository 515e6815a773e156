#pragma once

// Photon-limited noise simulation and synthetic dataset generation.

#include <array>
#include <random>
#include <vector>

#include "ctbound/common.hpp"
#include "ctbound/image_io.hpp"
#include "ctbound/junction.hpp"

namespace ctbound {

// Poisson(alpha * clean) per pixel; clean must be normalized to [0, 1].
inline PhotonImage poisson_noise(const ColorField& clean, double alpha, std::uint64_t seed) {
  if (alpha <= 0.0) throw InputError("poisson_noise: alpha must be > 0");
  for (double v : clean.values)
    if (!(v >= 0.0 && v <= 1.0))
      throw InputError("poisson_noise: clean values must lie in [0,1]");
  PhotonImage out;
  out.height = clean.height;
  out.width = clean.width;
  out.channels = clean.channels;
  out.alpha = alpha;
  out.counts.resize(clean.values.size());
  std::mt19937_64 rng(seed);
  for (size_t i = 0; i < clean.values.size(); ++i) {
    const double mean = alpha * clean.values[i];
    if (mean <= 0.0) {
      out.counts[i] = 0;
      continue;
    }
    std::poisson_distribution<std::uint32_t> dist(mean);
    out.counts[i] = dist(rng);
  }
  return out;
}

struct PatchSample {
  ColorField clean;  // [0,1]
  PhotonImage noisy;
  JunctionParams truth;
};

struct PatchDatasetOptions {
  int count = 2000;
  int patch_size = 21;
  int channels = 1;
  double alpha_min = 2.0;
  double alpha_max = 10.0;
  double vertex_span = 5.0;      // vertex uniform in [-span, span]^2
  double min_angle_gap_deg = 10; // 0 enables the degenerate "hard" preset
  std::uint64_t seed = 0;
};

inline JunctionParams sample_junction(std::mt19937_64& rng, const PatchDatasetOptions& opt) {
  std::uniform_real_distribution<double> upos(-opt.vertex_span, opt.vertex_span);
  std::uniform_real_distribution<double> uang(0.0, kTwoPi);
  std::uniform_real_distribution<double> ucol(0.0, 1.0);
  JunctionParams p;
  p.x0 = upos(rng);
  p.y0 = upos(rng);
  const double min_gap = opt.min_angle_gap_deg * kPi / 180.0;
  for (int tries = 0;; ++tries) {
    for (auto& a : p.angles) a = uang(rng);
    std::sort(p.angles.begin(), p.angles.end());
    const double g0 = p.angles[1] - p.angles[0];
    const double g1 = p.angles[2] - p.angles[1];
    const double g2 = kTwoPi - (p.angles[2] - p.angles[0]);
    if (min_gap <= 0.0 || (g0 >= min_gap && g1 >= min_gap && g2 >= min_gap) || tries > 200)
      break;
  }
  for (auto& c : p.colors) {
    c.resize(opt.channels);
    for (auto& v : c) v = ucol(rng);
  }
  p.canonicalize();
  return p;
}

inline std::vector<PatchSample> gen_patch_dataset(const PatchDatasetOptions& opt) {
  if (opt.count < 1) throw ConfigError("gen_patch_dataset: count must be >= 1");
  if (!(opt.alpha_min > 0.0) || opt.alpha_max < opt.alpha_min)
    throw ConfigError("gen_patch_dataset: invalid alpha range");
  std::vector<PatchSample> out;
  out.reserve(opt.count);
  for (int i = 0; i < opt.count; ++i) {
    std::mt19937_64 rng(mix_seed(opt.seed, i));
    PatchSample s;
    s.truth = sample_junction(rng, opt);
    s.clean = render_patch_color(s.truth, opt.patch_size);
    std::uniform_real_distribution<double> ualpha(opt.alpha_min, opt.alpha_max);
    const double alpha = ualpha(rng);
    s.noisy = poisson_noise(s.clean, alpha, mix_seed(opt.seed, 0x10000000ULL + i));
    out.push_back(std::move(s));
  }
  return out;
}

struct CompositeSample {
  ColorField clean;          // [0,1], k=1
  PhotonImage noisy;
  ScalarField boundary_mask; // 1-pixel-wide truth boundary
};

struct CompositeOptions {
  int count = 20;
  int height = 147;
  int width = 147;
  int min_shapes = 2;
  int max_shapes = 4;
  double alpha_min = 2.0;
  double alpha_max = 10.0;
  std::uint64_t seed = 0;
};

// Piecewise-constant scenes of overlaid rectangles and ellipses with known
// rasterized boundary masks. The mask marks foreground pixels adjacent
// (4-neighborhood) to a different region, so every mask pixel sits on a
// color discontinuity of the clean image.
inline CompositeSample gen_composite_image(int H, int W, int min_shapes, int max_shapes,
                                           double alpha_min, double alpha_max,
                                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> nshapes(min_shapes, max_shapes);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const int n = nshapes(rng);

  // spaced gray palette so adjacent regions always differ
  std::vector<double> palette(n + 1);
  for (int i = 0; i <= n; ++i) palette[i] = (i + 0.5) / (n + 1);
  std::shuffle(palette.begin(), palette.end(), rng);

  std::vector<int> region(static_cast<size_t>(H) * W, 0);
  for (int s = 1; s <= n; ++s) {
    const bool ellipse = u01(rng) < 0.5;
    const double cx = u01(rng) * W, cy = u01(rng) * H;
    const double rx = (0.08 + 0.25 * u01(rng)) * W;
    const double ry = (0.08 + 0.25 * u01(rng)) * H;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        bool inside;
        if (ellipse) {
          const double dx = (x - cx) / rx, dy = (y - cy) / ry;
          inside = dx * dx + dy * dy <= 1.0;
        } else {
          inside = std::abs(x - cx) <= rx && std::abs(y - cy) <= ry;
        }
        if (inside) region[static_cast<size_t>(y) * W + x] = s;
      }
  }

  CompositeSample out;
  out.clean = ColorField(H, W, 1);
  out.boundary_mask = ScalarField(H, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      out.clean.at(y, x, 0) = palette[region[static_cast<size_t>(y) * W + x]];
  const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int rid = region[static_cast<size_t>(y) * W + x];
      for (int d = 0; d < 4; ++d) {
        const int ny = y + dy[d], nx = x + dx[d];
        if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
        const int nid = region[static_cast<size_t>(ny) * W + nx];
        if (nid != rid && rid > nid) {
          out.boundary_mask.at(y, x) = 1.0;
          break;
        }
      }
    }
  std::uniform_real_distribution<double> ualpha(alpha_min, alpha_max);
  out.noisy = poisson_noise(out.clean, ualpha(rng), mix_seed(seed, 0x5151ULL));
  return out;
}

inline std::vector<CompositeSample> gen_composite_images(const CompositeOptions& opt) {
  if (opt.count < 1) throw ConfigError("gen_composite_images: count must be >= 1");
  if (opt.height < 1 || opt.width < 1)
    throw ConfigError("gen_composite_images: bad image size");
  std::vector<CompositeSample> out;
  out.reserve(opt.count);
  for (int i = 0; i < opt.count; ++i)
    out.push_back(gen_composite_image(opt.height, opt.width, opt.min_shapes, opt.max_shapes,
                                      opt.alpha_min, opt.alpha_max, mix_seed(opt.seed, i)));
  return out;
}

}  // namespace ctbound
