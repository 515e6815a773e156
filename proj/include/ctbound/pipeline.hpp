#pragma once

// Training objectives, learning-rate schedules, the two training loops, and
// single-pass inference over a patch grid.

#include <chrono>
#include <ostream>
#include <string>
#include <vector>

#include "ctbound/models.hpp"
#include "ctbound/noise.hpp"
#include "ctbound/render_smooth.hpp"

namespace ctbound {

// ---- losses -----------------------------------------------------------------

// Mean squared error between the color maps rendered from two parameter sets.
inline double loss_init(const JunctionParams& pred, const JunctionParams& truth, int R) {
  ColorField a = render_patch_color(pred, R);
  ColorField b = render_patch_color(truth, R);
  double s = 0.0;
  for (size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    s += d * d;
  }
  return s / a.values.size();
}

// Differentiable form used in training: smooth reconstruction of the clean
// patch from the predicted geometry, with colors estimated from the target.
template <typename T>
Tensor<T> loss_init_graph(const Tensor<T>& pred5, const ColorField& clean,
                          double eps_b, double eps_delta) {
  auto g = build_smooth_patch(pred5, clean.height, eps_b, eps_delta);
  return patch_reconstruction_loss(g, clean);
}

// Direct parameter supervision: squared vertex error plus squared wrapped
// angle error, averaged over patches. Both sides are canonicalized.
inline double loss_ref1(const std::vector<JunctionParams>& pred,
                        const std::vector<JunctionParams>& truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw InputError("loss_ref1: grids must match and be non-empty");
  double s = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    JunctionParams a = pred[i], b = truth[i];
    a.canonicalize();
    b.canonicalize();
    const double dx = a.x0 - b.x0, dy = a.y0 - b.y0;
    s += dx * dx + dy * dy;
    // canonical sorting fixes the circular order but not which angle comes
    // first, so score the best of the three cyclic pairings
    double best = std::numeric_limits<double>::infinity();
    for (int shift = 0; shift < 3; ++shift) {
      double c = 0.0;
      for (int j = 0; j < 3; ++j) {
        const double da = wrap_angle_diff(a.angles[j] - b.angles[(j + shift) % 3]);
        c += da * da;
      }
      best = std::min(best, c);
    }
    s += best;
  }
  return s / pred.size();
}

// Graph version over a predicted [P,5] grid; truth is already canonical.
template <typename T>
Tensor<T> loss_ref1_graph(const Tensor<T>& pred, const std::vector<JunctionParams>& truth) {
  const int P = static_cast<int>(truth.size());
  if (pred.shape() != Shape{P, 5} || P == 0)
    throw InputError("loss_ref1_graph: prediction grid shape mismatch");
  Tensor<T> total;
  const T pi = static_cast<T>(kPi);
  for (int p = 0; p < P; ++p) {
    Tensor<T> row = reshape(slice0(pred, p, 1), Shape{5});
    Tensor<T> xy = slice0(row, 0, 2);
    Tensor<T> ang = wrap_2pi(slice0(row, 2, 3));
    std::vector<int> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return ang.data()[a] < ang.data()[b];
    });
    Tensor<T> sorted = gather1d(ang, order);
    JunctionParams t = truth[p];
    t.canonicalize();
    Tensor<T> txy(Shape{2}, {static_cast<T>(t.x0), static_cast<T>(t.y0)});
    // pick the cyclic pairing with the smallest current angle cost, then
    // build the graph for that pairing only
    int best_shift = 0;
    double best_cost = std::numeric_limits<double>::infinity();
    for (int shift = 0; shift < 3; ++shift) {
      double c = 0.0;
      for (int j = 0; j < 3; ++j) {
        const double da = wrap_angle_diff(static_cast<double>(sorted.data()[j]) -
                                          t.angles[(j + shift) % 3]);
        c += da * da;
      }
      if (c < best_cost) {
        best_cost = c;
        best_shift = shift;
      }
    }
    Tensor<T> tang(Shape{3}, {static_cast<T>(t.angles[best_shift % 3]),
                              static_cast<T>(t.angles[(1 + best_shift) % 3]),
                              static_cast<T>(t.angles[(2 + best_shift) % 3])});
    Tensor<T> adiff = wrap_2pi(sorted - tang + pi) + (-pi);
    Tensor<T> term = sum(square(xy - txy)) + sum(square(adiff));
    total = total.defined() ? total + term : term;
  }
  return total * static_cast<T>(1.0 / P);
}

// Reconstruction loss over a whole grid: per-wedge color fit (l_p) plus
// deviation of per-patch boundary and color maps from their global averages
// (l_b, l_c), evaluated in one pass via running canvases.
template <typename T>
Tensor<T> loss_ref2_graph(const Tensor<T>& pred, const ColorField& image,
                          const PatchGridSpec& grid, double lambda_b, double lambda_c,
                          double eps_b, double eps_delta) {
  grid.validate();
  if (lambda_b < 0 || lambda_c < 0)
    throw ConfigError("loss_ref2: lambda weights must be >= 0");
  const int P = grid.patch_count(), R = grid.patch_size, k = grid.channels;
  if (pred.shape() != Shape{P, 5})
    throw InputError("loss_ref2_graph: prediction grid shape mismatch");
  if (image.height != grid.image_height || image.width != grid.image_width ||
      image.channels != k)
    throw InputError("loss_ref2_graph: image does not match grid");
  const int N = R * R, H = grid.image_height, W = grid.image_width;
  auto patches = extract_patches(image, grid);

  Tensor<T> lp, sum_b_sq, sum_c_sq;
  Tensor<T> canvas_b;                  // summed boundary maps on the image canvas
  std::vector<Tensor<T>> canvas_c(k);  // summed color renders per channel
  for (int p = 0; p < P; ++p) {
    Tensor<T> row = reshape(slice0(pred, p, 1), Shape{5});
    auto g = build_smooth_patch(row, R, eps_b, eps_delta);
    std::vector<T> img(static_cast<size_t>(N) * k);
    for (size_t i = 0; i < img.size(); ++i)
      img[i] = static_cast<T>(patches[p].pixels.values[i]);
    Tensor<T> I(Shape{N, k}, std::move(img));
    Tensor<T> colors = smooth_wedge_colors(g, patches[p].pixels);  // [3,k]
    for (int j = 0; j < 3; ++j) {
      Tensor<T> wj = reshape(slice0(g.weights, j, 1), Shape{N, 1});
      Tensor<T> term = sum(square(I - slice0(colors, j, 1)) * wj);
      lp = lp.defined() ? lp + term : term;
    }
    const int r0 = patches[p].m * grid.stride, c0 = patches[p].n * grid.stride;
    Tensor<T> bmap = reshape(g.boundary, Shape{R, R});
    Tensor<T> bsq = sum(square(g.boundary));
    sum_b_sq = sum_b_sq.defined() ? sum_b_sq + bsq : bsq;
    Tensor<T> emb = embed_patch(bmap, H, W, r0, c0);
    canvas_b = canvas_b.defined() ? canvas_b + emb : emb;
    Tensor<T> render = smooth_color_render(g, colors);  // [N,k]
    Tensor<T> csq = sum(square(render));
    sum_c_sq = sum_c_sq.defined() ? sum_c_sq + csq : csq;
    for (int ch = 0; ch < k; ++ch) {
      Tensor<T> cmap = reshape(slice_cols(render, ch, 1), Shape{R, R});
      Tensor<T> cemb = embed_patch(cmap, H, W, r0, c0);
      canvas_c[ch] = canvas_c[ch].defined() ? canvas_c[ch] + cemb : cemb;
    }
  }

  // Sum over pixels of n * avg^2 == sum of S^2 / n, with S the summed canvas
  // and n the cover count; together with the per-patch square sums this gives
  // sum_p sum_pix (map_p - avg)^2 without a second pass.
  std::vector<int> cover(static_cast<size_t>(H) * W, 0);
  for (int m = 0; m < grid.rows(); ++m)
    for (int n = 0; n < grid.cols(); ++n)
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < R; ++c)
          ++cover[static_cast<size_t>(m * grid.stride + r) * W + n * grid.stride + c];
  std::vector<T> invn(cover.size());
  for (size_t i = 0; i < cover.size(); ++i)
    invn[i] = cover[i] > 0 ? static_cast<T>(1.0 / cover[i]) : T(0);
  Tensor<T> inv(Shape{H, W}, std::move(invn));

  const T norm = static_cast<T>(1.0 / (static_cast<double>(P) * N));
  Tensor<T> lb = (sum_b_sq - sum(square(canvas_b) * inv)) * norm;
  Tensor<T> lc_sum;
  for (int ch = 0; ch < k; ++ch) {
    Tensor<T> s = sum(square(canvas_c[ch]) * inv);
    lc_sum = lc_sum.defined() ? lc_sum + s : s;
  }
  Tensor<T> lc = (sum_c_sq - lc_sum) * norm;
  return lp * norm + lb * static_cast<T>(lambda_b) + lc * static_cast<T>(lambda_c);
}

// ---- schedules and configuration --------------------------------------------

struct LrSchedule {
  enum Kind { kConstant, kStepDecay, kTriangular } kind = kConstant;
  double base = 1e-3;  // constant value / step-decay start
  double decay_factor = 0.5;
  int decay_every = 80;
  double lr_min = 1.75e-4;  // triangular bounds
  double lr_max = 3.5e-4;
  int cycle = 100;

  static LrSchedule constant(double lr) { return {kConstant, lr}; }
  static LrSchedule step_decay(double base, double factor, int every) {
    LrSchedule s;
    s.kind = kStepDecay;
    s.base = base;
    s.decay_factor = factor;
    s.decay_every = every;
    return s;
  }
  static LrSchedule triangular(double lo, double hi, int cycle) {
    LrSchedule s;
    s.kind = kTriangular;
    s.lr_min = lo;
    s.lr_max = hi;
    s.cycle = cycle;
    return s;
  }

  double lr_at(int epoch) const {
    switch (kind) {
      case kConstant:
        return base;
      case kStepDecay:
        return base * std::pow(decay_factor, epoch / decay_every);
      case kTriangular: {
        if (cycle < 2) throw ConfigError("LrSchedule: triangular cycle must be >= 2");
        const double t = static_cast<double>(epoch % cycle) / cycle;
        return lr_min + (lr_max - lr_min) * (1.0 - std::abs(2.0 * t - 1.0));
      }
    }
    throw ConfigError("LrSchedule: bad kind");
  }
};

struct TrainConfig {
  int epochs = 50;
  int batch_size = 32;
  LrSchedule schedule;
  double lambda_b = 0.5;
  double lambda_c = 0.1;
  double eps_b = kDefaultEps;
  double eps_delta = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1 || batch_size < 1)
      throw ConfigError("TrainConfig: epochs and batch size must be >= 1");
    if (lambda_b < 0 || lambda_c < 0) throw ConfigError("TrainConfig: lambda must be >= 0");
    if (eps_b <= 0 || eps_delta <= 0)
      throw ConfigError("TrainConfig: smoothing widths must be > 0");
  }

  // published schedules
  static TrainConfig full_init() {
    TrainConfig c;
    c.epochs = 900;
    c.batch_size = 32;
    c.schedule = LrSchedule::step_decay(2e-4, 0.5, 80);
    return c;
  }
  static TrainConfig full_refine_phase1() {
    TrainConfig c;
    c.epochs = 100;
    c.batch_size = 16;
    c.schedule = LrSchedule::constant(5e-5);
    return c;
  }
  static TrainConfig full_refine_phase2() {
    TrainConfig c;
    c.epochs = 1600;
    c.batch_size = 16;
    c.schedule = LrSchedule::triangular(1.75e-4, 3.5e-4, 100);
    return c;
  }
};

struct EpochLog {
  int epoch = 0;
  std::string phase;
  double lr = 0.0;
  double loss = 0.0;
  double wall_ms = 0.0;
};

inline void write_metrics_csv(std::ostream& os, const std::vector<EpochLog>& log) {
  os << "epoch,phase,lr,loss,wall_ms\n";
  for (auto& e : log)
    os << e.epoch << "," << e.phase << "," << e.lr << "," << e.loss << "," << e.wall_ms
       << "\n";
}

struct TrainResult {
  std::vector<EpochLog> log;
  bool diverged = false;
};

namespace detail {

inline double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

template <typename T>
std::vector<std::vector<T>> snapshot_params(const ParamStore<T>& store) {
  std::vector<std::vector<T>> s;
  for (auto& p : store.params()) s.push_back(p.tensor.data());
  return s;
}

template <typename T>
void restore_params(ParamStore<T>& store, const std::vector<std::vector<T>>& snap) {
  for (size_t i = 0; i < snap.size(); ++i) store.params()[i].tensor.data() = snap[i];
}

}  // namespace detail

// ---- training ---------------------------------------------------------------

// Adam on the smooth reconstruction loss over noisy patches with clean
// targets. On a non-finite epoch loss the previous epoch's weights are
// restored and training stops. Checkpoints (if a directory is given) are
// written at every learning-rate decay boundary and at the end.
template <typename T>
TrainResult train_init(const std::vector<PatchSample>& data, InitStageModel<T>& model,
                       const TrainConfig& cfg, const std::string& checkpoint_dir = "") {
  cfg.validate();
  if (data.empty()) throw InputError("train_init: empty dataset");
  AdamState<T> opt;
  opt.attach(model.store);
  TrainResult res;
  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto good = detail::snapshot_params(model.store);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double t0 = detail::now_ms();
    const double lr = cfg.schedule.lr_at(epoch);
    opt.lr = lr;
    std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t stop = std::min(order.size(), start + cfg.batch_size);
      model.store.zero_grad();
      Tensor<T> batch_loss;
      for (size_t i = start; i < stop; ++i) {
        const PatchSample& s = data[order[i]];
        ColorField normalized = normalize_counts(s.noisy, s.noisy.alpha);
        Tensor<T> pred5 = model.forward_geometry(normalized);
        Tensor<T> l = loss_init_graph(pred5, s.clean, cfg.eps_b, cfg.eps_delta);
        batch_loss = batch_loss.defined() ? batch_loss + l : l;
      }
      batch_loss = batch_loss * static_cast<T>(1.0 / (stop - start));
      bool bad = !std::isfinite(static_cast<double>(batch_loss.item()));
      if (!bad) {
        batch_loss.backward();
        try {
          adam_step(model.store, opt);
        } catch (const NumericError&) {
          bad = true;
        }
      }
      if (bad) {
        detail::restore_params(model.store, good);
        res.diverged = true;
        res.log.push_back({epoch, "init", lr, static_cast<double>(batch_loss.item()),
                           detail::now_ms() - t0});
        return res;
      }
      epoch_loss += static_cast<double>(batch_loss.item());
      ++batches;
    }
    epoch_loss /= batches;
    res.log.push_back({epoch, "init", lr, epoch_loss, detail::now_ms() - t0});
    good = detail::snapshot_params(model.store);
    const bool boundary = cfg.schedule.kind == LrSchedule::kStepDecay &&
                          (epoch + 1) % cfg.schedule.decay_every == 0;
    if (!checkpoint_dir.empty() && boundary)
      save_checkpoint(checkpoint_dir + "/init_epoch" + std::to_string(epoch + 1) + ".ckpt",
                      model.store, {{"stage", "init"}, {"epoch", std::to_string(epoch + 1)}});
  }
  if (!checkpoint_dir.empty())
    save_checkpoint(checkpoint_dir + "/init_final.ckpt", model.store,
                    {{"stage", "init"}, {"epoch", std::to_string(cfg.epochs)}});
  return res;
}

// One refinement training sample: a noisy image with its patch grid; truth
// parameters per cell are needed for phase 1 (direct supervision) only.
struct RefineSample {
  PhotonImage noisy;
  PatchGridSpec grid;
  std::vector<JunctionParams> truth;
};

template <typename T>
struct GridCells {
  std::vector<std::pair<int, int>> cells;
};

namespace detail {

inline std::vector<std::pair<int, int>> grid_cells(const PatchGridSpec& grid) {
  std::vector<std::pair<int, int>> cells;
  for (int m = 0; m < grid.rows(); ++m)
    for (int n = 0; n < grid.cols(); ++n) cells.emplace_back(m, n);
  return cells;
}

}  // namespace detail

// Two sequential phases against a frozen initialization stage: direct
// parameter supervision first, then the reconstruction objective; the
// optimizer state is reset between phases.
template <typename T>
TrainResult train_refine(const std::vector<RefineSample>& data,
                         const InitStageModel<T>& init_model, RefineStageModel<T>& model,
                         const TrainConfig& phase1, const TrainConfig& phase2,
                         const std::string& checkpoint_dir = "") {
  if (data.empty()) throw InputError("train_refine: empty dataset");
  if (phase1.epochs > 0) phase1.validate();
  if (phase2.epochs > 0) phase2.validate();

  // precompute frozen-init features once per image
  struct Prepared {
    ColorField normalized;
    std::vector<JunctionParams> init_params;
    std::vector<std::pair<int, int>> cells;
  };
  std::vector<Prepared> prep(data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    prep[i].normalized = normalize_counts(data[i].noisy, data[i].noisy.alpha);
    prep[i].cells = detail::grid_cells(data[i].grid);
    auto patches = extract_patches(prep[i].normalized, data[i].grid);
    for (auto& pt : patches) prep[i].init_params.push_back(init_model.predict(pt.pixels));
  }

  TrainResult res;
  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int phase = 1; phase <= 2; ++phase) {
    const TrainConfig& cfg = phase == 1 ? phase1 : phase2;
    if (cfg.epochs == 0) continue;
    if (phase == 1)
      for (auto& s : data)
        if (s.truth.size() != static_cast<size_t>(s.grid.patch_count()))
          throw InputError("train_refine: phase 1 requires truth parameters per patch");
    AdamState<T> opt;
    opt.attach(model.store);
    auto good = detail::snapshot_params(model.store);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      const double t0 = detail::now_ms();
      const double lr = cfg.schedule.lr_at(epoch);
      opt.lr = lr;
      std::mt19937_64 rng(
          mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch) * 2 + phase));
      std::shuffle(order.begin(), order.end(), rng);
      double epoch_loss = 0.0;
      int batches = 0;
      for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const size_t stop = std::min(order.size(), start + cfg.batch_size);
        model.store.zero_grad();
        Tensor<T> batch_loss;
        for (size_t i = start; i < stop; ++i) {
          const Prepared& p = prep[order[i]];
          Tensor<T> pred =
              model.forward_geometry(model.pack_features(p.init_params), p.cells);
          Tensor<T> l =
              phase == 1
                  ? loss_ref1_graph(pred, data[order[i]].truth)
                  : loss_ref2_graph(pred, p.normalized, data[order[i]].grid, cfg.lambda_b,
                                    cfg.lambda_c, cfg.eps_b, cfg.eps_delta);
          batch_loss = batch_loss.defined() ? batch_loss + l : l;
        }
        batch_loss = batch_loss * static_cast<T>(1.0 / (stop - start));
        bool bad = !std::isfinite(static_cast<double>(batch_loss.item()));
        if (!bad) {
          batch_loss.backward();
          try {
            adam_step(model.store, opt);
          } catch (const NumericError&) {
            bad = true;
          }
        }
        if (bad) {
          detail::restore_params(model.store, good);
          res.diverged = true;
          res.log.push_back({epoch, phase == 1 ? "refine1" : "refine2", lr,
                             static_cast<double>(batch_loss.item()), detail::now_ms() - t0});
          return res;
        }
        epoch_loss += static_cast<double>(batch_loss.item());
        ++batches;
      }
      epoch_loss /= batches;
      res.log.push_back(
          {epoch, phase == 1 ? "refine1" : "refine2", lr, epoch_loss, detail::now_ms() - t0});
      good = detail::snapshot_params(model.store);
    }
    if (!checkpoint_dir.empty())
      save_checkpoint(checkpoint_dir + "/refine_phase" + std::to_string(phase) + ".ckpt",
                      model.store, {{"stage", "refine"}, {"phase", std::to_string(phase)}});
  }
  return res;
}

// ---- inference --------------------------------------------------------------

struct InferResult {
  std::vector<JunctionParams> init_params;
  std::vector<JunctionParams> refined_params;  // == init_params when unrefined
  ScalarField boundary;
  ColorField color;
  long cnn_evals = 0;      // exactly one per patch
  long encoder_evals = 0;  // exactly one (zero when refinement is skipped)
  double extract_ms = 0.0, init_ms = 0.0, refine_ms = 0.0, render_ms = 0.0;
};

// One CNN pass per patch, one encoder pass, one render/aggregate pass.
template <typename T>
InferResult infer(const PhotonImage& image, const PatchGridSpec& grid,
                  const InitStageModel<T>& init_model,
                  const RefineStageModel<T>* refine_model, double eps_b = kDefaultEps) {
  grid.validate();
  if (image.height != grid.image_height || image.width != grid.image_width ||
      image.channels != grid.channels)
    throw InputError("infer: image does not match grid");
  InferResult res;
  ColorField normalized = normalize_counts(image, image.alpha);

  double t0 = detail::now_ms();
  auto patches = extract_patches(normalized, grid);
  res.extract_ms = detail::now_ms() - t0;

  t0 = detail::now_ms();
  for (auto& p : patches) {
    res.init_params.push_back(init_model.predict(p.pixels));
    ++res.cnn_evals;
  }
  res.init_ms = detail::now_ms() - t0;

  t0 = detail::now_ms();
  if (refine_model) {
    res.refined_params = refine_model->refine(res.init_params, normalized, grid);
    ++res.encoder_evals;
  } else {
    res.refined_params = res.init_params;
  }
  res.refine_ms = detail::now_ms() - t0;

  t0 = detail::now_ms();
  std::vector<ScalarField> bmaps;
  bmaps.reserve(res.refined_params.size());
  for (auto& p : res.refined_params)
    bmaps.push_back(render_patch_boundary(p, grid.patch_size, eps_b));
  res.boundary = aggregate_boundary(bmaps, grid).field;
  res.color = aggregate_color(res.refined_params, grid).field;
  res.render_ms = detail::now_ms() - t0;
  return res;
}

}  // namespace ctbound
