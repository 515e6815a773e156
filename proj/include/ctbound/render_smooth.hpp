#pragma once

// Differentiable junction-patch rendering. The geometry in junction.hpp is
// plain double code; here the same maps are rebuilt from tensor ops so losses
// and the direct fitter can take gradients with respect to the five geometric
// parameters (vertex + three edge angles). Wedge membership signs are frozen
// from the current parameter values each time a graph is built, so gradients
// are exact away from the (measure-zero) sector boundaries.

#include <array>
#include <numeric>

#include "ctbound/field.hpp"
#include "ctbound/junction.hpp"
#include "ctbound/tensor.hpp"

namespace ctbound {

template <typename T>
struct SmoothPatch {
  int size = 0;
  int pixels = 0;
  Tensor<T> sorted_angles;              // [3], ascending in [0,2pi)
  std::array<Tensor<T>, 3> ray_dist;    // [N] distance to each edge half-line
  Tensor<T> boundary;                   // [N] enabled-edge boundary map
  Tensor<T> weights;                    // [3,N] smooth wedge membership, rows sum to 1
  JunctionParams hard;                  // numeric snapshot used for membership signs
};

// params5 = (x0, y0, phi_a, phi_b, phi_c); angles may be unsorted/unwrapped.
template <typename T>
SmoothPatch<T> build_smooth_patch(const Tensor<T>& params5, int size, double eps_b,
                                  double eps_delta,
                                  const std::array<bool, 3>& edges = {true, true, true}) {
  if (params5.shape() != Shape{5})
    throw ConfigError("build_smooth_patch: params must have shape [5]");
  if (size < 1) throw ConfigError("build_smooth_patch: bad patch size");
  if (eps_b <= 0 || eps_delta <= 0)
    throw ConfigError("build_smooth_patch: smoothing widths must be positive");

  SmoothPatch<T> g;
  g.size = size;
  const int N = g.pixels = size * size;

  Tensor<T> vx = gather1d(params5, {0});
  Tensor<T> vy = gather1d(params5, {1});
  Tensor<T> wrapped = wrap_2pi(slice0(params5, 2, 3));
  std::vector<int> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return wrapped.data()[a] < wrapped.data()[b];
  });
  g.sorted_angles = gather1d(wrapped, order);

  g.hard.x0 = static_cast<double>(vx.item());
  g.hard.y0 = static_cast<double>(vy.item());
  for (int j = 0; j < 3; ++j) {
    g.hard.angles[j] = static_cast<double>(g.sorted_angles.data()[j]);
    g.hard.colors[j] = {0.0};
  }

  std::vector<T> pxv(N), pyv(N);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      pxv[r * size + c] = static_cast<T>(patch_coord(c, size));
      pyv[r * size + c] = static_cast<T>(patch_coord(r, size));
    }
  Tensor<T> px(Shape{N}, std::move(pxv));
  Tensor<T> py(Shape{N}, std::move(pyv));

  Tensor<T> ax = px - vx;
  Tensor<T> ay = py - vy;
  Tensor<T> a2 = square(ax) + square(ay);
  const T guard = static_cast<T>(1e-12);
  for (int j = 0; j < 3; ++j) {
    Tensor<T> phi = gather1d(g.sorted_angles, {j});
    Tensor<T> t = ax * cos(phi) + ay * sin(phi);
    Tensor<T> tc = relu(t);
    // |a|^2 - 2 max(t,0) t + max(t,0)^2: squared distance to the half-line;
    // cancellation can take it a hair negative in 32-bit, hence the clamp
    Tensor<T> d2 = a2 - tc * t * T(2) + square(tc);
    g.ray_dist[j] = sqrt(relu(d2) + guard);
  }

  Tensor<T> dmin;
  for (int j = 0; j < 3; ++j) {
    if (!edges[j]) continue;
    dmin = dmin.defined() ? minimum(dmin, g.ray_dist[j]) : g.ray_dist[j];
  }
  if (dmin.defined()) {
    Tensor<T> s = square(dmin) * static_cast<T>(1.0 / (eps_b * eps_b));
    Tensor<T> ones(Shape{N}, T(1));
    g.boundary = ones / (s + T(1));
  } else {
    g.boundary = Tensor<T>(Shape{N}, T(0));
  }

  std::array<Tensor<T>, 3> h;
  for (int j = 0; j < 3; ++j) {
    Tensor<T> m = minimum(g.ray_dist[j], g.ray_dist[(j + 1) % 3]);
    std::vector<T> sgn(N);
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c) {
        const double axd = patch_coord(c, size), ayd = patch_coord(r, size);
        sgn[r * size + c] = wedge_index(axd, ayd, g.hard) == j ? T(1) : T(-1);
      }
    Tensor<T> signed_d = m * Tensor<T>(Shape{N}, std::move(sgn));
    h[j] = atan(signed_d * static_cast<T>(1.0 / eps_delta)) *
               static_cast<T>(1.0 / kPi) +
           static_cast<T>(0.5);
  }
  Tensor<T> hsum = h[0] + h[1] + h[2];
  std::vector<Tensor<T>> rows;
  for (int j = 0; j < 3; ++j) rows.push_back(reshape(h[j] / hsum, Shape{1, N}));
  g.weights = concat0(rows);
  return g;
}

// Wedge colors as membership-weighted means of the observed patch. [3,k]
template <typename T>
Tensor<T> smooth_wedge_colors(const SmoothPatch<T>& g, const ColorField& patch) {
  if (patch.height != g.size || patch.width != g.size)
    throw ConfigError("smooth_wedge_colors: patch size mismatch");
  const int N = g.pixels, k = patch.channels;
  std::vector<T> img(static_cast<size_t>(N) * k);
  for (size_t i = 0; i < img.size(); ++i) img[i] = static_cast<T>(patch.values[i]);
  Tensor<T> I(Shape{N, k}, std::move(img));
  Tensor<T> sums = matmul(g.weights, I);                       // [3,k]
  Tensor<T> ws = matmul(g.weights, Tensor<T>(Shape{N, 1}, T(1)));  // [3,1]
  return sums / (ws + static_cast<T>(1e-12));
}

// Smooth piecewise-constant reconstruction of the patch from wedge colors. [N,k]
template <typename T>
Tensor<T> smooth_color_render(const SmoothPatch<T>& g, const Tensor<T>& colors) {
  if (colors.shape().size() != 2 || colors.shape()[0] != 3)
    throw ConfigError("smooth_color_render: colors must be [3,k]");
  return matmul(transpose2d(g.weights), colors);
}

// Mean squared reconstruction error of the patch under its own smooth colors.
template <typename T>
Tensor<T> patch_reconstruction_loss(const SmoothPatch<T>& g, const ColorField& patch) {
  Tensor<T> colors = smooth_wedge_colors(g, patch);
  Tensor<T> render = smooth_color_render(g, colors);
  const int N = g.pixels, k = patch.channels;
  std::vector<T> img(static_cast<size_t>(N) * k);
  for (size_t i = 0; i < img.size(); ++i) img[i] = static_cast<T>(patch.values[i]);
  return mean(square(render - Tensor<T>(Shape{N, k}, std::move(img))));
}

template <typename T>
Tensor<T> params_tensor(const JunctionParams& p) {
  return Tensor<T>(Shape{5},
                   std::vector<T>{static_cast<T>(p.x0), static_cast<T>(p.y0),
                                  static_cast<T>(p.angles[0]), static_cast<T>(p.angles[1]),
                                  static_cast<T>(p.angles[2])});
}

}  // namespace ctbound
