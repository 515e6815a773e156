#pragma once

// Per-patch direct fit of junction parameters: multi-restart gradient descent
// with backtracking line search on the smooth reconstruction objective, with
// the membership smoothing width annealed from coarse to sharp in stages.
// Serves as the reference fitter the learned stages are measured against.

#include <random>

#include "ctbound/pipeline.hpp"
#include "ctbound/render_smooth.hpp"

namespace ctbound {

struct SolverConfig {
  int restarts = 6;
  int iterations = 48;
  int anneal_stages = 4;  // eps_delta steps geometrically start -> end
  double step = 0.5;
  double eps_delta_start = 0.5;
  double eps_delta_end = 0.05;
  double eps_b = kDefaultEps;
  double vertex_jitter = 3.0;  // px, restarts after the first two
  std::uint64_t seed = 0;

  void validate() const {
    if (restarts < 1 || iterations < 1)
      throw ConfigError("SolverConfig: restarts and iterations must be >= 1");
    if (anneal_stages < 1 || anneal_stages > iterations)
      throw ConfigError("SolverConfig: anneal stages must be in [1, iterations]");
    if (step <= 0 || eps_delta_start <= 0 || eps_delta_end <= 0 || eps_b <= 0)
      throw ConfigError("SolverConfig: step and smoothing widths must be > 0");
  }

  double eps_delta_at(int iter) const {
    const int stage = std::min(anneal_stages - 1, iter * anneal_stages / iterations);
    if (anneal_stages == 1) return eps_delta_end;
    const double t = static_cast<double>(stage) / (anneal_stages - 1);
    return eps_delta_start * std::pow(eps_delta_end / eps_delta_start, t);
  }
};

struct FitResult {
  JunctionParams params;
  double objective = 0.0;                // final sharp-stage reconstruction MSE
  std::vector<double> trace;             // objective after every iteration
  std::vector<int> trace_stage;          // anneal stage each entry belongs to
};

namespace detail {

// Dominant local edge orientation from the structure tensor of the
// channel-mean image; returned as the tangent angle of the edge.
inline double structure_tensor_orientation(const ColorField& patch) {
  const int H = patch.height, W = patch.width, k = patch.channels;
  auto lum = [&](int y, int x) {
    double s = 0;
    for (int c = 0; c < k; ++c) s += patch.at(y, x, c);
    return s / k;
  };
  double jxx = 0, jxy = 0, jyy = 0;
  for (int y = 1; y + 1 < H; ++y)
    for (int x = 1; x + 1 < W; ++x) {
      const double gx = 0.5 * (lum(y, x + 1) - lum(y, x - 1));
      const double gy = 0.5 * (lum(y + 1, x) - lum(y - 1, x));
      jxx += gx * gx;
      jxy += gx * gy;
      jyy += gy * gy;
    }
  const double grad_dir = 0.5 * std::atan2(2.0 * jxy, jxx - jyy);
  return grad_dir + kPi / 2.0;  // edge runs perpendicular to the gradient
}

// Centroid of squared gradient magnitude in centered patch coordinates; for a
// single straight edge this point lies on the edge, which makes it a far
// better vertex seed than the patch center.
inline std::array<double, 2> gradient_centroid(const ColorField& patch) {
  const int H = patch.height, W = patch.width, k = patch.channels;
  auto lum = [&](int y, int x) {
    double s = 0;
    for (int c = 0; c < k; ++c) s += patch.at(y, x, c);
    return s / k;
  };
  double wsum = 0, cx = 0, cy = 0;
  for (int y = 1; y + 1 < H; ++y)
    for (int x = 1; x + 1 < W; ++x) {
      const double gx = 0.5 * (lum(y, x + 1) - lum(y, x - 1));
      const double gy = 0.5 * (lum(y + 1, x) - lum(y - 1, x));
      const double w = gx * gx + gy * gy;
      wsum += w;
      cx += w * patch_coord(x, W);
      cy += w * patch_coord(y, H);
    }
  if (wsum <= 1e-12) return {0.0, 0.0};
  return {cx / wsum, cy / wsum};
}

inline double solver_objective(const std::vector<double>& theta, const ColorField& patch,
                               double eps_b, double eps_delta) {
  NoGradGuard ng;
  Tensor<double> t(Shape{5}, theta);
  auto g = build_smooth_patch(t, patch.height, eps_b, eps_delta);
  return patch_reconstruction_loss(g, patch).item();
}

}  // namespace detail

inline FitResult fit_patch(const ColorField& patch, const SolverConfig& cfg) {
  cfg.validate();
  if (patch.height != patch.width || patch.height < 5)
    throw InputError("fit_patch: patch must be square with size >= 5");
  const int R = patch.height;

  FitResult best;
  best.objective = std::numeric_limits<double>::infinity();
  for (int restart = 0; restart < cfg.restarts; ++restart) {
    std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(restart)));
    std::uniform_real_distribution<double> uang(0.0, kTwoPi);
    std::normal_distribution<double> jitter(0.0, cfg.vertex_jitter);
    std::vector<double> theta(5);
    const double tangent = detail::structure_tensor_orientation(patch);
    const auto centroid = detail::gradient_centroid(patch);
    if (restart <= 1) {
      // oriented seeds: vertex on the strongest edge, then the patch center
      theta = {restart == 0 ? centroid[0] : 0.0, restart == 0 ? centroid[1] : 0.0,
               wrap_angle(tangent), wrap_angle(tangent + kPi),
               wrap_angle(tangent + kPi / 2)};
    } else {
      theta[0] = restart == 2 ? 0.0 : centroid[0] + jitter(rng);
      theta[1] = restart == 2 ? 0.0 : centroid[1] + jitter(rng);
      for (int j = 0; j < 3; ++j) theta[2 + j] = uang(rng);
    }

    std::vector<double> trace, grad(5);
    std::vector<int> trace_stage;
    double step = cfg.step;
    double loss = detail::solver_objective(theta, patch, cfg.eps_b, cfg.eps_delta_at(0));
    int last_stage = 0;
    for (int it = 0; it < cfg.iterations; ++it) {
      const double eps_d = cfg.eps_delta_at(it);
      const int stage = std::min(cfg.anneal_stages - 1, it * cfg.anneal_stages / cfg.iterations);
      if (stage != last_stage) {  // objective changed shape; re-anchor
        loss = detail::solver_objective(theta, patch, cfg.eps_b, eps_d);
        last_stage = stage;
      }
      Tensor<double> t(Shape{5}, theta);
      t.set_requires_grad();
      auto g = build_smooth_patch(t, R, cfg.eps_b, eps_d);
      Tensor<double> l = patch_reconstruction_loss(g, patch);
      t.zero_grad();
      l.backward();
      grad = t.grad();
      double gnorm = 0;
      for (double v : grad) gnorm += v * v;
      if (!std::isfinite(gnorm) || gnorm == 0.0) {
        trace.push_back(loss);
        trace_stage.push_back(stage);
        continue;
      }
      // backtracking: shrink until the objective does not increase
      bool accepted = false;
      for (int bt = 0; bt < 24; ++bt) {
        std::vector<double> trial(5);
        for (int i = 0; i < 5; ++i) trial[i] = theta[i] - step * grad[i];
        const double tl = detail::solver_objective(trial, patch, cfg.eps_b, eps_d);
        if (std::isfinite(tl) && tl <= loss) {
          theta = trial;
          loss = tl;
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (accepted) step = std::min(step * 1.5, cfg.step);
      trace.push_back(loss);
      trace_stage.push_back(stage);
    }
    const double final_obj =
        detail::solver_objective(theta, patch, cfg.eps_b, cfg.eps_delta_end);
    if (final_obj < best.objective) {
      best.objective = final_obj;
      best.trace = std::move(trace);
      best.trace_stage = std::move(trace_stage);
      JunctionParams p;
      p.x0 = theta[0];
      p.y0 = theta[1];
      for (int j = 0; j < 3; ++j) p.angles[j] = theta[2 + j];
      p.canonicalize();
      auto colors = estimate_wedge_colors(patch, p.x0, p.y0, p.angles);
      for (int j = 0; j < 3; ++j) p.colors[j] = colors[j];
      best.params = p;
    }
  }
  return best;
}

// Boundary-free junction: vertex far outside the patch with all rays pointing
// away, so the rendered boundary map is negligible and every wedge carries the
// patch mean. The canonical representation of a structureless patch.
inline JunctionParams blank_junction(const ColorField& patch) {
  JunctionParams p;
  p.x0 = p.y0 = 16.0;
  p.angles = {0.0, kPi / 4.0, kPi / 2.0};
  double m = 0.0;
  for (double v : patch.values) m += v;
  m /= patch.values.empty() ? 1.0 : patch.values.size();
  for (int j = 0; j < 3; ++j) p.colors[j].assign(patch.channels, m);
  return p;
}

// Per-cell supervision targets for refinement training: direct fits on the
// clean image's patches. A fit whose strongest edge contrast falls below
// flat_threshold describes a structureless patch — its angles are arbitrary —
// so it is replaced by the boundary-free junction.
inline std::vector<JunctionParams> fit_supervision_grid(const ColorField& clean,
                                                        const PatchGridSpec& grid,
                                                        const SolverConfig& cfg,
                                                        double flat_threshold = 0.1) {
  std::vector<JunctionParams> out;
  auto patches = extract_patches(clean, grid);
  for (size_t p = 0; p < patches.size(); ++p) {
    SolverConfig per = cfg;
    per.seed = mix_seed(cfg.seed, 0x5113 + p);
    JunctionParams fit = fit_patch(patches[p].pixels, per).params;
    double contrast = 0.0;
    for (int j = 0; j < 3; ++j) {
      double n2 = 0.0;
      for (size_t c = 0; c < fit.colors[j].size(); ++c) {
        const double d = fit.colors[j][c] - fit.colors[(j + 1) % 3][c];
        n2 += d * d;
      }
      contrast = std::max(contrast, std::sqrt(n2));
    }
    if (contrast < flat_threshold) fit = blank_junction(patches[p].pixels);
    out.push_back(std::move(fit));
  }
  return out;
}

// Whole-image fit: per-patch optimization followed by the same aggregation
// the learned pipeline uses, so outputs are directly comparable.
inline InferResult fit_image(const PhotonImage& image, const PatchGridSpec& grid,
                             const SolverConfig& cfg) {
  grid.validate();
  if (image.height != grid.image_height || image.width != grid.image_width ||
      image.channels != grid.channels)
    throw InputError("fit_image: image does not match grid");
  InferResult res;
  const double t0 = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now().time_since_epoch())
                        .count();
  ColorField normalized = normalize_counts(image, image.alpha);
  auto patches = extract_patches(normalized, grid);
  for (size_t i = 0; i < patches.size(); ++i) {
    SolverConfig per = cfg;
    per.seed = mix_seed(cfg.seed, 0xf17eULL + i);
    res.refined_params.push_back(fit_patch(patches[i].pixels, per).params);
  }
  res.init_params = res.refined_params;
  std::vector<ScalarField> bmaps;
  for (auto& p : res.refined_params)
    bmaps.push_back(render_patch_boundary(p, grid.patch_size, cfg.eps_b));
  res.boundary = aggregate_boundary(bmaps, grid).field;
  res.color = aggregate_color(res.refined_params, grid).field;
  res.refine_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now().time_since_epoch())
                      .count() -
                  t0;
  return res;
}

}  // namespace ctbound
