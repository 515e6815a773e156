// End-to-end acceptance checks. Each criterion prints exactly one PASS/FAIL
// line; the process exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstring>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "ctbound/checkpoint.hpp"
#include "ctbound/metrics.hpp"
#include "ctbound/pipeline.hpp"
#include "ctbound/solver.hpp"
#include "gradcheck.hpp"

using namespace ctbound;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename Fn>
void criterion(int n, const std::string& label, Fn fn) {
  const auto t0 = Clock::now();
  bool ok = false;
  std::string detail;
  try {
    ok = fn(detail);
  } catch (const std::exception& e) {
    ok = false;
    detail = std::string("exception: ") + e.what();
  }
  if (!ok) ++failures;
  std::ostringstream line;
  line << "criterion " << n << " [" << label << "]: " << (ok ? "PASS" : "FAIL");
  if (!detail.empty()) line << " (" << detail << ")";
  line.precision(3);
  line << " " << std::fixed << seconds_since(t0) << "s";
  std::cout << line.str() << std::endl;
}

JunctionParams random_junction(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> upos(-8.0, 8.0), uang(0.0, kTwoPi), ucol(0.0, 1.0);
  JunctionParams p;
  p.x0 = upos(rng);
  p.y0 = upos(rng);
  for (int j = 0; j < 3; ++j) {
    p.angles[j] = uang(rng);
    p.colors[j] = {ucol(rng)};
  }
  return p;
}

// Independent angular-sector classification of a pixel.
int brute_wedge(double px, double py, const JunctionParams& p) {
  const double ax = px - p.x0, ay = py - p.y0;
  if (ax == 0.0 && ay == 0.0) return 0;
  auto norm = [](double a) {
    while (a < 0.0) a += kTwoPi;
    while (a >= kTwoPi) a -= kTwoPi;
    return a;
  };
  const double t = norm(std::atan2(ay, ax) - p.angles[0]);
  if (t <= norm(p.angles[1] - p.angles[0])) return 0;
  if (t <= norm(p.angles[2] - p.angles[0])) return 1;
  return 2;
}

// Independent point-to-ray distance: projection onto the ray direction,
// clamped to the vertex.
double brute_ray_distance(double px, double py, double x0, double y0, double phi) {
  const double vx = px - x0, vy = py - y0;
  const double ux = std::cos(phi), uy = std::sin(phi);
  const double t = vx * ux + vy * uy;
  if (t <= 0.0) return std::hypot(vx, vy);
  return std::hypot(vx - t * ux, vy - t * uy);
}

double mean_recon_loss(const std::vector<PatchSample>& data,
                       const InitStageModel<float>& model) {
  double s = 0.0;
  for (const auto& d : data) {
    const JunctionParams pred = model.predict(normalize_counts(d.noisy, d.noisy.alpha));
    s += loss_init(pred, d.truth, d.clean.height);
  }
  return s / data.size();
}

}  // namespace

int main() {
  std::mt19937_64 rng(2024);

  criterion(1, "rendering oracle equivalence", [&](std::string& detail) {
    for (int i = 0; i < 100; ++i) {
      JunctionParams p = random_junction(rng);
      const ColorField cmap = render_patch_color(p, 21);
      const ScalarField bmap = render_patch_boundary(p, 21);
      for (int r = 0; r < 21; ++r)
        for (int c = 0; c < 21; ++c) {
          const double px = patch_coord(c, 21), py = patch_coord(r, 21);
          const int w = brute_wedge(px, py, p);
          if (cmap.at(r, c, 0) != p.colors[w][0]) {
            detail = "color map mismatch";
            return false;
          }
          double d = brute_ray_distance(px, py, p.x0, p.y0, p.angles[0]);
          for (int j = 1; j < 3; ++j)
            d = std::min(d, brute_ray_distance(px, py, p.x0, p.y0, p.angles[j]));
          const double expect = kDefaultEps * kDefaultEps / (kDefaultEps * kDefaultEps + d * d);
          if (std::abs(bmap.at(r, c) - expect) > 1e-9) {
            detail = "boundary map mismatch";
            return false;
          }
        }
    }
    return true;
  });

  criterion(2, "analytic boundary values", [&](std::string& detail) {
    const double e = 0.01;
    const bool ok = std::abs(boundary_intensity(0.0, e) - 1.0) < 1e-9 &&
                    std::abs(boundary_intensity(e, e) - 0.5) < 1e-9 &&
                    std::abs(boundary_intensity(3 * e, e) - 0.1) < 1e-9 &&
                    std::abs(smooth_heaviside(e, e) - 0.75) < 1e-9;
    if (!ok) detail = "closed-form value drifted";
    return ok;
  });

  criterion(3, "gradcheck suite", [&](std::string& detail) {
    std::mt19937_64 r3(31);
    std::normal_distribution<double> nd;
    auto randt = [&](Shape s) {
      int n = 1;
      for (int d : s) n *= d;
      std::vector<double> v(n);
      for (auto& x : v) x = nd(r3);
      Tensor<double> t(s, v);
      t.set_requires_grad();
      return t;
    };
    bool ok = true;
    std::vector<std::string> failed;
    auto run = [&](const std::string& name, std::vector<Tensor<double>> leaves,
                   const std::function<Tensor<double>()>& loss) {
      auto res = gradcheck::check(leaves, loss);
      if (!res.ok) {
        ok = false;
        failed.push_back(name);
      }
    };
    {
      ParamStore<double> st;
      auto conv = Conv2dLayer<double>::create(st, "c", 2, 3, 3, 2, 1, r3);
      Tensor<double> x = randt({2, 7, 7});
      std::vector<Tensor<double>> leaves{x};
      for (auto& p : st.params()) leaves.push_back(p.tensor);
      run("conv", leaves, [&] { return sum(square(conv.forward(x))); });
    }
    {
      Tensor<double> x = randt({2, 6, 6});
      run("pool", {x}, [&] { return sum(square(maxpool2d(x, 2, 2))); });
    }
    {
      ParamStore<double> st;
      auto lin = LinearLayer<double>::create(st, "l", 4, 3, r3);
      Tensor<double> x = randt({2, 4});
      std::vector<Tensor<double>> leaves{x};
      for (auto& p : st.params()) leaves.push_back(p.tensor);
      run("linear", leaves, [&] { return sum(square(lin.forward(x))); });
    }
    {
      Tensor<double> x = randt({3, 6}), g = randt({6}), b = randt({6});
      run("layer_norm", {x, g, b}, [&] { return sum(square(layer_norm(x, g, b))); });
    }
    {
      ParamStore<double> st;
      auto mha = MultiHeadAttention<double>::create(st, "a", 8, 2, r3);
      Tensor<double> x = randt({3, 8});
      std::vector<Tensor<double>> leaves{x};
      for (auto& p : st.params()) leaves.push_back(p.tensor);
      run("attention", leaves, [&] { return sum(square(mha.forward(x))); });
    }
    {
      Tensor<double> x = randt({3, 5}), w = randt({3, 5});
      w.set_requires_grad(false);
      run("softmax", {x}, [&] { return sum(softmax(x) * w); });
    }
    {
      JunctionParams truth = random_junction(rng);
      const ColorField clean = render_patch_color(truth, 9);
      Tensor<double> pred = params_tensor<double>(truth);
      for (size_t i = 0; i < pred.numel(); ++i) pred.data()[i] += 0.3;
      pred.set_requires_grad();
      run("loss_init", {pred}, [&] { return loss_init_graph(pred, clean, 0.1, 0.1); });
    }
    {
      std::vector<JunctionParams> truth{random_junction(rng), random_junction(rng)};
      std::vector<double> pv;
      for (const auto& t : truth) {
        auto pt = params_tensor<double>(t);
        for (size_t i = 0; i < pt.numel(); ++i) pv.push_back(pt.data()[i] + 0.2);
      }
      Tensor<double> pred({2, 5}, pv);
      pred.set_requires_grad();
      run("loss_ref1", {pred}, [&] { return loss_ref1_graph(pred, truth); });
    }
    {
      PatchGridSpec grid;
      grid.image_height = grid.image_width = 12;
      grid.patch_size = 9;
      grid.stride = 3;
      ColorField img(12, 12, 1);
      for (auto& v : img.values) v = 0.5 + 0.3 * nd(r3);
      std::vector<double> pv;
      for (int i = 0; i < 4; ++i) {
        auto pt = params_tensor<double>(random_junction(rng));
        for (size_t j = 0; j < pt.numel(); ++j) pv.push_back(pt.data()[j] * 0.3);
      }
      Tensor<double> pred({4, 5}, pv);
      pred.set_requires_grad();
      run("loss_ref2", {pred},
          [&] { return loss_ref2_graph(pred, img, grid, 0.5, 0.1, 0.1, 0.1); });
    }
    if (!ok) {
      detail = "failed:";
      for (const auto& f : failed) detail += " " + f;
    }
    return ok;
  });

  criterion(4, "model shape conformance", [&](std::string& detail) {
    ParamStore<float> st;
    std::mt19937_64 r4(41);
    auto net = ConvStack<float>::create(st, "cnn", ConvStackSpec::table1(3), r4);
    const std::vector<Shape> expect = {{21, 21, 96}, {10, 10, 96}, {10, 10, 256},
                                       {5, 5, 256},  {5, 5, 384},  {5, 5, 384},
                                       {5, 5, 256},  {2, 2, 256},  {4096},
                                       {1024},       {5}};
    const auto got = net.layer_output_shapes();
    if (got != expect) {
      detail = "conv stack shapes diverge";
      return false;
    }
    std::vector<float> xv(3 * 81 * 81, 0.25f);
    Tensor<float> out = net.forward(Tensor<float>({3, 81, 81}, xv));
    if (out.shape() != Shape{1, 5}) {
      detail = "forward output is not a 5-vector";
      return false;
    }
    RefineModelConfig rc = RefineModelConfig::full(1);
    auto enc = RefineStageModel<float>::create(rc, 42);
    if (rc.dim != 128 || rc.layers != 8 || rc.heads != 8 || rc.ff_dim != 256 ||
        enc.blocks.size() != 8) {
      detail = "encoder hyperparameters diverge";
      return false;
    }
    return true;
  });

  criterion(5, "photon noise statistics", [&](std::string& detail) {
    const int n = 100000;
    ColorField clean(400, 250, 1);
    for (auto& v : clean.values) v = 1.0;
    PhotonImage img = poisson_noise(clean, 10.0, 99);
    double mean = 0.0;
    for (auto c : img.counts) mean += c;
    mean /= n;
    double var = 0.0;
    for (auto c : img.counts) var += (c - mean) * (c - mean);
    var /= (n - 1);
    // exact sampling-moment standard errors for a Poisson(10) population
    const double se_mean = std::sqrt(10.0 / n);
    const double se_var = std::sqrt((10.0 + 2.0 * 100.0) / n);
    std::ostringstream d;
    d.precision(4);
    d << "mean " << mean << ", var " << var;
    detail = d.str();
    return std::abs(mean - 10.0) <= 4 * se_mean && std::abs(var - 10.0) <= 4 * se_var;
  });

  criterion(6, "direct solver fidelity", [&](std::string& detail) {
    std::mt19937_64 r6(61);
    std::uniform_real_distribution<double> uor(0.0, kPi), uoff(-4.0, 4.0);
    int good = 0;
    const int total = 200;
    for (int i = 0; i < total; ++i) {
      const double theta = uor(r6), off = uoff(r6);
      const double nx = -std::sin(theta), ny = std::cos(theta);
      const double px0 = nx * off, py0 = ny * off;  // point on the line
      ColorField patch(21, 21, 1);
      for (int r = 0; r < 21; ++r)
        for (int c = 0; c < 21; ++c) {
          const double s = nx * (patch_coord(c, 21) - px0) + ny * (patch_coord(r, 21) - py0);
          patch.at(r, c, 0) = s < 0 ? 0.25 : 0.75;
        }
      SolverConfig sc;
      sc.seed = mix_seed(0xacce, i);
      FitResult fit = fit_patch(patch, sc);
      const auto dc = relative_color_difference(fit.params, 1.0);
      int jmax = 0;
      for (int j = 1; j < 3; ++j)
        if (dc[j] > dc[jmax]) jmax = j;
      // the edge ray separating wedges j and j+1 is ray (j+1)%3
      const double ang = fit.params.angles[(jmax + 1) % 3];
      double aerr = std::abs(wrap_angle_diff(ang - theta));
      aerr = std::min(aerr, kPi - aerr);  // line orientation, mod pi
      const double vdist =
          std::abs(nx * (fit.params.x0 - px0) + ny * (fit.params.y0 - py0));
      if (aerr <= 2.0 * kPi / 180.0 && vdist <= 2.0) ++good;
    }
    std::ostringstream d;
    d << good << "/" << total << " within 2 deg / 2 px";
    detail = d.str();
    return good >= 190;
  });

  // Models trained below are shared by criteria 7-9 and 11.
  PatchDatasetOptions dopt;
  dopt.count = 2000;
  dopt.seed = 11;
  std::vector<PatchSample> patches;
  auto init_model = InitStageModel<float>::create(InitModelConfig::desk(1), 7);
  auto refine_model = RefineStageModel<float>::create(RefineModelConfig::desk(1), 5);
  bool refine_trained = false;

  criterion(7, "initialization training", [&](std::string& detail) {
    patches = gen_patch_dataset(dopt);
    const double before = mean_recon_loss(patches, init_model);
    double baseline = 0.0;  // predict-the-patch-mean reconstruction error
    for (const auto& s : patches) {
      double m = 0.0;
      for (double v : s.clean.values) m += v;
      m /= s.clean.values.size();
      double var = 0.0;
      for (double v : s.clean.values) var += (v - m) * (v - m);
      baseline += var / s.clean.values.size();
    }
    baseline /= patches.size();
    TrainConfig tc;
    tc.epochs = 50;
    tc.batch_size = 32;
    tc.schedule = LrSchedule::step_decay(2e-4, 0.5, 20);
    tc.seed = 3;
    TrainResult res = train_init(patches, init_model, tc);
    const double after = mean_recon_loss(patches, init_model);
    std::ostringstream d;
    d.precision(4);
    d << "loss " << before << " -> " << after << ", patch-mean baseline " << baseline;
    detail = d.str();
    return !res.diverged && after <= 0.5 * before && after < baseline;
  });

  criterion(8, "refinement beats initialization", [&](std::string& detail) {
    CompositeOptions tr;
    tr.count = 12;
    tr.seed = 21;
    tr.alpha_max = 4.0;
    auto trainset = gen_composite_images(tr);
    SolverConfig sc;
    sc.restarts = 2;
    sc.iterations = 24;
    std::vector<RefineSample> samples;
    for (size_t i = 0; i < trainset.size(); ++i) {
      RefineSample s;
      s.noisy = trainset[i].noisy;
      s.grid.image_height = s.noisy.height;
      s.grid.image_width = s.noisy.width;
      s.grid.patch_size = 21;
      s.grid.stride = 7;
      SolverConfig per = sc;
      per.seed = mix_seed(0x8e41, i);
      s.truth = fit_supervision_grid(trainset[i].clean, s.grid, per, 0.05);
      samples.push_back(std::move(s));
    }
    TrainConfig p1;
    p1.epochs = 200;
    p1.batch_size = 2;
    p1.schedule = LrSchedule::constant(2e-4);
    p1.seed = 5;
    TrainConfig p2 = p1;
    p2.epochs = 0;  // supervised stage alone learns the junk-suppression gate
    TrainResult res = train_refine(samples, init_model, refine_model, p1, p2);
    if (res.diverged) {
      detail = "refinement training diverged";
      return false;
    }
    refine_trained = true;

    CompositeOptions te;
    te.count = 20;
    te.seed = 77;
    te.alpha_min = te.alpha_max = 2.0;
    auto testset = gen_composite_images(te);
    double d_init = 0.0, d_ref = 0.0;
    int used = 0;
    for (const auto& s : testset) {
      PatchGridSpec grid;
      grid.image_height = s.noisy.height;
      grid.image_width = s.noisy.width;
      grid.patch_size = 21;
      grid.stride = 7;
      InferResult a = infer<float>(s.noisy, grid, init_model, nullptr, kEvalEps);
      InferResult b = infer(s.noisy, grid, init_model, &refine_model, kEvalEps);
      auto la = edge_localization_error(a.boundary, s.boundary_mask);
      auto lb = edge_localization_error(b.boundary, s.boundary_mask);
      if (la.empty_prediction || lb.empty_prediction) continue;
      d_init += la.mean_px;
      d_ref += lb.mean_px;
      ++used;
    }
    if (used == 0) {
      detail = "all predictions binarized to empty";
      return false;
    }
    d_init /= used;
    d_ref /= used;
    std::ostringstream d;
    d.precision(4);
    d << "D(0) init " << d_init << " vs refined " << d_ref << " on " << used
      << " images, ratio " << d_init / d_ref;
    detail = d.str();
    return d_ref < d_init && d_init / d_ref >= 1.5;
  });

  criterion(9, "single-pass inference speed", [&](std::string& detail) {
    auto scene = gen_composite_image(147, 147, 2, 4, 2.0, 2.0, 314);
    PatchGridSpec grid;
    grid.image_height = grid.image_width = 147;
    grid.patch_size = 21;
    grid.stride = 3;
    const auto t0 = Clock::now();
    InferResult r = infer(scene.noisy, grid, init_model, &refine_model);
    const double secs = seconds_since(t0);
    std::ostringstream d;
    d.precision(3);
    d << "cnn passes " << r.cnn_evals << "/" << grid.patch_count() << ", encoder passes "
      << r.encoder_evals << ", " << std::fixed << secs << "s";
    detail = d.str();
    return r.cnn_evals == grid.patch_count() && r.encoder_evals == 1 && secs < 5.0;
  });

  criterion(10, "metric correctness", [&](std::string& detail) {
    std::mt19937_64 r10(101);
    for (int i = 0; i < 50; ++i) {
      ScalarField truth(20, 30), pred(20, 30);
      std::uniform_int_distribution<int> uy(0, 19), ux(0, 29);
      for (int j = 0; j < 10; ++j) truth.at(uy(r10), ux(r10)) = 1.0;
      for (int j = 0; j < 10; ++j) pred.at(uy(r10), ux(r10)) = 1.0;
      auto fast = edge_localization_error(pred, truth);
      // brute-force nearest-pixel scan
      double sum = 0.0;
      int count = 0;
      for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 30; ++x) {
          if (pred.at(y, x) < 0.5) continue;
          double best = 1e30;
          for (int ty = 0; ty < 20; ++ty)
            for (int tx = 0; tx < 30; ++tx)
              if (truth.at(ty, tx) >= 0.5)
                best = std::min(best, std::hypot(double(y - ty), double(x - tx)));
          sum += best;
          ++count;
        }
      if (fast.mean_px != sum / count) {
        detail = "localization differs from brute-force scan";
        return false;
      }
    }
    {
      ScalarField pred(10, 10), truth(10, 10);
      for (int x = 0; x < 10; ++x) {
        pred.at(5, x) = 1.0;
        truth.at(6, x) = 1.0;
      }
      if (edge_localization_error(pred, truth).mean_px != 1.0) {
        detail = "shifted-line distance is not 1";
        return false;
      }
    }
    {
      std::vector<JunctionParams> params;
      std::mt19937_64 rp(103);
      PatchGridSpec grid;
      grid.image_height = grid.image_width = 33;
      grid.patch_size = 21;
      grid.stride = 6;
      for (int i = 0; i < grid.patch_count(); ++i) params.push_back(random_junction(rp));
      ScalarField prev = select_boundaries(params, grid, 0.0);
      for (double thre : {0.1, 0.2}) {
        ScalarField cur = select_boundaries(params, grid, thre);
        for (size_t i = 0; i < cur.values.size(); ++i)
          if (cur.values[i] > prev.values[i] + 1e-12) {
            detail = "selection not pointwise non-increasing";
            return false;
          }
        prev = cur;
      }
    }
    return true;
  });

  criterion(11, "reproducibility", [&](std::string& detail) {
    auto a = gen_patch_dataset(dopt), b = gen_patch_dataset(dopt);
    for (size_t i = 0; i < a.size(); ++i)
      if (a[i].noisy.counts != b[i].noisy.counts || a[i].noisy.alpha != b[i].noisy.alpha ||
          std::memcmp(&a[i].truth.x0, &b[i].truth.x0, sizeof(double)) != 0) {
        detail = "dataset regeneration differs";
        return false;
      }
    std::vector<PatchSample> subset(patches.begin(), patches.begin() + 64);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 16;
    tc.schedule = LrSchedule::constant(1e-4);
    tc.seed = 9;
    auto m1 = InitStageModel<float>::create(InitModelConfig::desk(1), 77);
    auto m2 = InitStageModel<float>::create(InitModelConfig::desk(1), 77);
    train_init(subset, m1, tc);
    train_init(subset, m2, tc);
    for (size_t i = 0; i < m1.store.params().size(); ++i) {
      const auto& t1 = m1.store.params()[i].tensor;
      const auto& t2 = m2.store.params()[i].tensor;
      if (std::memcmp(t1.data().data(), t2.data().data(), t1.numel() * sizeof(float)) != 0) {
        detail = "retrained weights differ";
        return false;
      }
    }
    auto scene = gen_composite_image(63, 63, 2, 3, 4.0, 4.0, 55);
    PatchGridSpec grid;
    grid.image_height = grid.image_width = 63;
    grid.patch_size = 21;
    grid.stride = 3;
    InferResult r1 = infer<float>(scene.noisy, grid, init_model, nullptr);
    InferResult r2 = infer<float>(scene.noisy, grid, init_model, nullptr);
    EvalReport e1 = evaluate_image(r1.refined_params, grid, scene.boundary_mask, r1.color,
                                   scene.clean);
    EvalReport e2 = evaluate_image(r2.refined_params, grid, scene.boundary_mask, r2.color,
                                   scene.clean);
    auto same = [](double x, double y) {
      return std::memcmp(&x, &y, sizeof(double)) == 0;
    };
    if (!(same(e1.d0, e2.d0) && same(e1.d01, e2.d01) && same(e1.d02, e2.d02) &&
          same(e1.ssim, e2.ssim) && same(e1.psnr, e2.psnr) && same(e1.mse, e2.mse))) {
      detail = "evaluation reports differ";
      return false;
    }
    return true;
  });

  (void)refine_trained;
  std::cout << (failures == 0 ? "all criteria passed" : "criteria failed") << std::endl;
  return failures;
}
