#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "ctbound/common.hpp"
#include "ctbound/field.hpp"

namespace ctbound {

inline constexpr int kNumEdges = 3;  // junction order l
inline constexpr double kDefaultEps = 0.01;
inline constexpr double kDefaultEpsDelta = 0.05;

// One patch's junction parameters: vertex, 3 edge rays, 3 wedge colors.
// Coordinates are patch-local pixels, origin at the patch center,
// x rightward, y downward. Wedge j spans from edge j to edge j+1 (mod 3).
struct JunctionParams {
  double x0 = 0.0;
  double y0 = 0.0;
  std::array<double, kNumEdges> angles{};            // sorted ascending in [0, 2pi)
  std::array<std::vector<double>, kNumEdges> colors;  // k-vectors, photon units

  // Wraps angles into [0, 2pi) and sorts ascending; colors follow their wedge.
  void canonicalize() {
    std::array<int, kNumEdges> order{0, 1, 2};
    std::array<double, kNumEdges> wrapped;
    for (int j = 0; j < kNumEdges; ++j) wrapped[j] = wrap_angle(angles[j]);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return wrapped[a] < wrapped[b]; });
    std::array<double, kNumEdges> na;
    std::array<std::vector<double>, kNumEdges> nc;
    for (int j = 0; j < kNumEdges; ++j) {
      na[j] = wrapped[order[j]];
      nc[j] = std::move(colors[order[j]]);
    }
    angles = na;
    colors = std::move(nc);
  }
};

// Patch-local x coordinate of pixel column c (origin at patch center).
inline double patch_coord(int index, int patch_size) {
  return index - 0.5 * (patch_size - 1);
}

// Distance from a point to the ray {vertex + t*(cos a, sin a), t >= 0}.
inline double ray_distance(double px, double py, double vx, double vy, double angle) {
  const double ax = px - vx, ay = py - vy;
  const double ux = std::cos(angle), uy = std::sin(angle);
  const double t = ax * ux + ay * uy;
  if (t <= 0.0) return std::hypot(ax, ay);
  return std::hypot(ax - t * ux, ay - t * uy);
}

inline double smooth_heaviside(double d, double eps) {
  if (eps <= 0.0) throw ConfigError("smooth_heaviside: eps must be > 0");
  return 0.5 * (1.0 + (2.0 / kPi) * std::atan(d / eps));
}

// pi*eps*H'(d) = eps^2 / (eps^2 + d^2).
inline double boundary_intensity(double d, double eps) {
  if (eps <= 0.0) throw ConfigError("boundary_intensity: eps must be > 0");
  return eps * eps / (eps * eps + d * d);
}

// Hard wedge classification: the angular sector from edge ray j to edge
// ray j+1, wrap-around through 2pi. Agrees with the half-plane sign tests
// wherever those single out a unique wedge. Boundary ties go to the lower
// wedge index; the vertex itself is wedge 0.
inline int wedge_index(double px, double py, const JunctionParams& p) {
  const double ax = px - p.x0, ay = py - p.y0;
  if (ax == 0.0 && ay == 0.0) return 0;
  const double theta = std::atan2(ay, ax);
  const double t = wrap_angle(theta - p.angles[0]);
  const double g1 = wrap_angle(p.angles[1] - p.angles[0]);
  const double g2 = wrap_angle(p.angles[2] - p.angles[0]);
  if (t <= g1) return 0;
  if (t <= g2) return 1;
  return 2;
}

// Signed distance of a point to the boundary of wedge j's sector:
// positive inside, negative outside, zero on the bounding rays.
inline double wedge_signed_distance(double px, double py, const JunctionParams& p, int j) {
  const double d = std::min(
      ray_distance(px, py, p.x0, p.y0, p.angles[j]),
      ray_distance(px, py, p.x0, p.y0, p.angles[(j + 1) % kNumEdges]));
  return wedge_index(px, py, p) == j ? d : -d;
}

// Soft wedge membership; normalized, converges to the hard indicator as
// eps_delta -> 0.
inline std::array<double, kNumEdges> smooth_wedge_weights(
    double px, double py, const JunctionParams& p, double eps_delta) {
  if (eps_delta <= 0.0) throw ConfigError("smooth_wedge_weights: eps_delta must be > 0");
  std::array<double, kNumEdges> w;
  double sum = 0.0;
  for (int j = 0; j < kNumEdges; ++j) {
    w[j] = smooth_heaviside(wedge_signed_distance(px, py, p, j), eps_delta);
    sum += w[j];
  }
  for (int j = 0; j < kNumEdges; ++j) w[j] /= sum;
  return w;
}

inline double min_ray_distance(double px, double py, const JunctionParams& p) {
  double d = ray_distance(px, py, p.x0, p.y0, p.angles[0]);
  for (int j = 1; j < kNumEdges; ++j)
    d = std::min(d, ray_distance(px, py, p.x0, p.y0, p.angles[j]));
  return d;
}

inline ScalarField render_patch_boundary(const JunctionParams& p, int patch_size,
                                         double eps = kDefaultEps) {
  if (eps <= 0.0) throw ConfigError("render_patch_boundary: eps must be > 0");
  ScalarField out(patch_size, patch_size);
  for (int r = 0; r < patch_size; ++r)
    for (int c = 0; c < patch_size; ++c)
      out.at(r, c) = boundary_intensity(
          min_ray_distance(patch_coord(c, patch_size), patch_coord(r, patch_size), p), eps);
  return out;
}

// Boundary render restricted to a subset of edges; with no edge enabled the
// map is identically zero. Used by boundary selection.
inline ScalarField render_patch_boundary_masked(const JunctionParams& p, int patch_size,
                                                const std::array<bool, kNumEdges>& enabled,
                                                double eps = kDefaultEps) {
  ScalarField out(patch_size, patch_size);
  for (int r = 0; r < patch_size; ++r)
    for (int c = 0; c < patch_size; ++c) {
      const double px = patch_coord(c, patch_size), py = patch_coord(r, patch_size);
      double d = -1.0;
      for (int j = 0; j < kNumEdges; ++j) {
        if (!enabled[j]) continue;
        const double dj = ray_distance(px, py, p.x0, p.y0, p.angles[j]);
        if (d < 0.0 || dj < d) d = dj;
      }
      out.at(r, c) = d < 0.0 ? 0.0 : boundary_intensity(d, eps);
    }
  return out;
}

inline ColorField render_patch_color(const JunctionParams& p, int patch_size) {
  const int k = static_cast<int>(p.colors[0].size());
  ColorField out(patch_size, patch_size, k);
  for (int r = 0; r < patch_size; ++r)
    for (int c = 0; c < patch_size; ++c) {
      const int j = wedge_index(patch_coord(c, patch_size), patch_coord(r, patch_size), p);
      for (int ch = 0; ch < k; ++ch) out.at(r, c, ch) = p.colors[j][ch];
    }
  return out;
}

// Per-wedge mean of the patch values; an empty wedge gets the patch mean.
inline std::array<std::vector<double>, kNumEdges> estimate_wedge_colors(
    const ColorField& patch, double vx, double vy,
    const std::array<double, kNumEdges>& angles) {
  const int k = patch.channels, R = patch.height;
  JunctionParams geom;
  geom.x0 = vx;
  geom.y0 = vy;
  geom.angles = angles;
  std::array<std::vector<double>, kNumEdges> sums;
  std::array<int, kNumEdges> counts{};
  for (auto& s : sums) s.assign(k, 0.0);
  std::vector<double> total(k, 0.0);
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < patch.width; ++c) {
      const int j = wedge_index(patch_coord(c, R), patch_coord(r, R), geom);
      ++counts[j];
      for (int ch = 0; ch < k; ++ch) {
        sums[j][ch] += patch.at(r, c, ch);
        total[ch] += patch.at(r, c, ch);
      }
    }
  const double npix = static_cast<double>(R) * patch.width;
  std::array<std::vector<double>, kNumEdges> colors;
  for (int j = 0; j < kNumEdges; ++j) {
    colors[j].assign(k, 0.0);
    for (int ch = 0; ch < k; ++ch)
      colors[j][ch] = counts[j] > 0 ? sums[j][ch] / counts[j] : total[ch] / npix;
  }
  return colors;
}

// Global field plus per-pixel patch cover counts (0 where no patch reaches).
struct AggregatedBoundary {
  ScalarField field;
  std::vector<int> coverage;  // row-major H x W
};
struct AggregatedColor {
  ColorField field;
  std::vector<int> coverage;
};

// Mean of the per-patch boundary maps over every covering patch.
// per_patch is row-major over the (rows x cols) patch grid.
inline AggregatedBoundary aggregate_boundary(const std::vector<ScalarField>& per_patch,
                                             const PatchGridSpec& grid) {
  grid.validate();
  if (static_cast<int>(per_patch.size()) != grid.patch_count())
    throw InputError("aggregate_boundary: patch count mismatch");
  const int H = grid.image_height, W = grid.image_width, R = grid.patch_size;
  AggregatedBoundary out{ScalarField(H, W), std::vector<int>(static_cast<size_t>(H) * W, 0)};
  std::vector<double> acc(static_cast<size_t>(H) * W, 0.0);
  for (int m = 0; m < grid.rows(); ++m)
    for (int n = 0; n < grid.cols(); ++n) {
      const ScalarField& pb = per_patch[static_cast<size_t>(m) * grid.cols() + n];
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < R; ++c) {
          const size_t idx = static_cast<size_t>(m * grid.stride + r) * W + n * grid.stride + c;
          acc[idx] += pb.at(r, c);
          ++out.coverage[idx];
        }
    }
  for (size_t i = 0; i < acc.size(); ++i)
    out.field.values[i] = out.coverage[i] > 0 ? acc[i] / out.coverage[i] : 0.0;
  return out;
}

// Mean over covering patches of the wedge color each patch assigns the pixel.
inline AggregatedColor aggregate_color(const std::vector<JunctionParams>& params_grid,
                                       const PatchGridSpec& grid) {
  grid.validate();
  if (static_cast<int>(params_grid.size()) != grid.patch_count())
    throw InputError("aggregate_color: patch count mismatch");
  const int H = grid.image_height, W = grid.image_width, R = grid.patch_size, k = grid.channels;
  AggregatedColor out{ColorField(H, W, k), std::vector<int>(static_cast<size_t>(H) * W, 0)};
  std::vector<double> acc(static_cast<size_t>(H) * W * k, 0.0);
  for (int m = 0; m < grid.rows(); ++m)
    for (int n = 0; n < grid.cols(); ++n) {
      const JunctionParams& p = params_grid[static_cast<size_t>(m) * grid.cols() + n];
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < R; ++c) {
          const int j = wedge_index(patch_coord(c, R), patch_coord(r, R), p);
          const size_t pix = static_cast<size_t>(m * grid.stride + r) * W + n * grid.stride + c;
          ++out.coverage[pix];
          for (int ch = 0; ch < k; ++ch) acc[pix * k + ch] += p.colors[j][ch];
        }
    }
  for (size_t pix = 0; pix < out.coverage.size(); ++pix)
    for (int ch = 0; ch < k; ++ch)
      out.field.values[pix * k + ch] =
          out.coverage[pix] > 0 ? acc[pix * k + ch] / out.coverage[pix] : 0.0;
  return out;
}

}  // namespace ctbound
