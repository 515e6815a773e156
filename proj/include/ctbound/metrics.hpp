#pragma once

// Evaluation machinery: relative color contrast per edge, contrast-thresholded
// boundary re-rendering, edge localization error via an exact Euclidean
// distance transform, and color-map quality scores (SSIM / PSNR / MSE).

#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "ctbound/field.hpp"
#include "ctbound/junction.hpp"

namespace ctbound {

// Normalized color contrast across each wedge boundary: entry j compares the
// colors of wedges j and j+1 (mod 3).
inline std::array<double, 3> relative_color_difference(const JunctionParams& p, double alpha) {
  if (alpha <= 0) throw ConfigError("relative_color_difference: alpha must be > 0");
  std::array<double, 3> out{};
  for (int j = 0; j < 3; ++j) {
    const auto& a = p.colors[j];
    const auto& b = p.colors[(j + 1) % 3];
    if (a.size() != b.size())
      throw InputError("relative_color_difference: color channel mismatch");
    double s = 0;
    for (size_t c = 0; c < a.size(); ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
    out[j] = std::sqrt(s) / alpha;
  }
  return out;
}

// Global boundary map keeping only edges whose relative color difference
// reaches the threshold. The edge ray between wedges j and j+1 is ray
// (j+1) mod 3, since wedge j spans rays j..j+1.
inline ScalarField select_boundaries(const std::vector<JunctionParams>& params_grid,
                                     const PatchGridSpec& grid, double dc_thre,
                                     double alpha = 1.0, double eps = kDefaultEps) {
  grid.validate();
  if (dc_thre < 0) throw ConfigError("select_boundaries: threshold must be >= 0");
  if (static_cast<int>(params_grid.size()) != grid.patch_count())
    throw InputError("select_boundaries: params grid does not match patch grid");
  std::vector<ScalarField> maps;
  maps.reserve(params_grid.size());
  for (const auto& p : params_grid) {
    const auto dc = relative_color_difference(p, alpha);
    std::array<bool, 3> enabled{};
    for (int j = 0; j < 3; ++j) enabled[(j + 1) % 3] = dc[j] >= dc_thre;
    maps.push_back(render_patch_boundary_masked(p, grid.patch_size, enabled, eps));
  }
  return aggregate_boundary(maps, grid).field;
}

namespace detail {

// Felzenszwalb-Huttenlocher exact 1-D squared distance transform.
inline void dt1d(const std::vector<double>& f, std::vector<double>& d) {
  const int n = static_cast<int>(f.size());
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s;
    while (true) {
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    d[q] = (q - v[k]) * (q - v[k]) + f[v[k]];
  }
}

}  // namespace detail

// Exact squared Euclidean distance to the nearest on-pixel of the mask.
inline ScalarField squared_distance_transform(const ScalarField& mask) {
  const int H = mask.height, W = mask.width;
  const double inf = 1e15;  // finite sentinel; infinities break the parabola intersections
  ScalarField out(H, W);
  std::vector<double> col(H), dcol(H);
  // columns first
  std::vector<double> tmp(static_cast<size_t>(H) * W);
  for (int x = 0; x < W; ++x) {
    for (int y = 0; y < H; ++y) col[y] = mask.at(y, x) != 0.0 ? 0.0 : inf;
    detail::dt1d(col, dcol);
    for (int y = 0; y < H; ++y) tmp[static_cast<size_t>(y) * W + x] = dcol[y];
  }
  std::vector<double> row(W), drow(W);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) row[x] = tmp[static_cast<size_t>(y) * W + x];
    detail::dt1d(row, drow);
    for (int x = 0; x < W; ++x) out.at(y, x) = drow[x];
  }
  return out;
}

struct LocalizationError {
  double mean_px = std::numeric_limits<double>::quiet_NaN();
  bool empty_prediction = false;
  long predicted_pixels = 0;
};

// Mean distance from each predicted boundary pixel (after binarization) to the
// nearest truth pixel. One-directional by definition; an empty prediction is
// flagged, never reported as zero.
inline LocalizationError edge_localization_error(const ScalarField& pred,
                                                 const ScalarField& truth_mask,
                                                 double binarize_thre = 0.5) {
  if (pred.height != truth_mask.height || pred.width != truth_mask.width)
    throw InputError("edge_localization_error: shape mismatch");
  bool truth_any = false;
  for (double v : truth_mask.values) truth_any |= v != 0.0;
  if (!truth_any) throw InputError("edge_localization_error: empty truth mask");
  ScalarField sq = squared_distance_transform(truth_mask);
  LocalizationError res;
  double sum = 0;
  for (size_t i = 0; i < pred.values.size(); ++i)
    if (pred.values[i] >= binarize_thre) {
      sum += std::sqrt(sq.values[i]);
      ++res.predicted_pixels;
    }
  if (res.predicted_pixels == 0) {
    res.empty_prediction = true;
    return res;
  }
  res.mean_px = sum / res.predicted_pixels;
  return res;
}

// Symmetric chamfer variant (mean of both directions); provided for
// completeness, not used in reports.
inline double edge_localization_error_symmetric(const ScalarField& a, const ScalarField& b,
                                                double binarize_thre = 0.5) {
  auto ab = edge_localization_error(a, b, binarize_thre);
  auto ba = edge_localization_error(b, a, binarize_thre);
  if (ab.empty_prediction || ba.empty_prediction)
    return std::numeric_limits<double>::quiet_NaN();
  return 0.5 * (ab.mean_px + ba.mean_px);
}

struct ColorMapQuality {
  double ssim = 0.0;
  double psnr = 0.0;  // dB; +infinity for identical images
  double mse = 0.0;
};

namespace detail {

inline std::vector<double> gaussian_kernel_11() {
  std::vector<double> k(11);
  double s = 0;
  for (int i = 0; i < 11; ++i) {
    const double x = i - 5;
    k[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
    s += k[i];
  }
  for (auto& v : k) v /= s;
  return k;
}

// Separable Gaussian blur of one channel; border weights renormalized over
// the in-bounds support.
inline std::vector<double> blur(const std::vector<double>& img, int H, int W) {
  static const std::vector<double> k = gaussian_kernel_11();
  std::vector<double> tmp(img.size()), out(img.size());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double s = 0, wsum = 0;
      for (int t = -5; t <= 5; ++t) {
        const int xx = x + t;
        if (xx < 0 || xx >= W) continue;
        s += k[t + 5] * img[static_cast<size_t>(y) * W + xx];
        wsum += k[t + 5];
      }
      tmp[static_cast<size_t>(y) * W + x] = s / wsum;
    }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double s = 0, wsum = 0;
      for (int t = -5; t <= 5; ++t) {
        const int yy = y + t;
        if (yy < 0 || yy >= H) continue;
        s += k[t + 5] * tmp[static_cast<size_t>(yy) * W + x];
        wsum += k[t + 5];
      }
      out[static_cast<size_t>(y) * W + x] = s / wsum;
    }
  return out;
}

inline double ssim_channel(const std::vector<double>& a, const std::vector<double>& b,
                           int H, int W, double peak) {
  const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
  const size_t n = a.size();
  std::vector<double> aa(n), bb(n), ab(n);
  for (size_t i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  auto mu_a = blur(a, H, W), mu_b = blur(b, H, W);
  auto s_aa = blur(aa, H, W), s_bb = blur(bb, H, W), s_ab = blur(ab, H, W);
  double total = 0;
  for (size_t i = 0; i < n; ++i) {
    const double va = s_aa[i] - mu_a[i] * mu_a[i];
    const double vb = s_bb[i] - mu_b[i] * mu_b[i];
    const double cov = s_ab[i] - mu_a[i] * mu_b[i];
    total += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
  }
  return total / n;
}

}  // namespace detail

inline ColorMapQuality color_map_quality(const ColorField& pred, const ColorField& truth,
                                         double peak) {
  if (pred.height != truth.height || pred.width != truth.width ||
      pred.channels != truth.channels)
    throw InputError("color_map_quality: shape mismatch");
  if (peak <= 0) throw ConfigError("color_map_quality: peak must be > 0");
  ColorMapQuality q;
  double s = 0;
  for (size_t i = 0; i < pred.values.size(); ++i) {
    const double d = pred.values[i] - truth.values[i];
    s += d * d;
  }
  q.mse = s / pred.values.size();
  q.psnr = q.mse == 0.0 ? std::numeric_limits<double>::infinity()
                        : 10.0 * std::log10(peak * peak / q.mse);
  const int H = pred.height, W = pred.width, k = pred.channels;
  double ssim = 0;
  std::vector<double> a(static_cast<size_t>(H) * W), b(a.size());
  for (int ch = 0; ch < k; ++ch) {
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        a[static_cast<size_t>(y) * W + x] = pred.at(y, x, ch);
        b[static_cast<size_t>(y) * W + x] = truth.at(y, x, ch);
      }
    ssim += detail::ssim_channel(a, b, H, W, peak);
  }
  q.ssim = ssim / k;
  return q;
}

// One evaluated image: localization error at the standard contrast thresholds
// plus color-map quality.
// Falloff scale for boundary maps that will be binarized for scoring. At half
// a pixel the map crosses 0.5 exactly half a pixel off the edge, so the
// binarized boundary is about one pixel wide; the much sharper display default
// would binarize to an empty set on a pixel grid.
constexpr double kEvalEps = 0.5;

struct EvalReport {
  double d0 = 0, d01 = 0, d02 = 0;
  double ssim = 0, psnr = 0, mse = 0;
  double wall_s = 0;
  bool empty_prediction = false;  // any threshold produced no predicted pixels
};

inline void write_report_csv(std::ostream& os, const std::vector<EvalReport>& reports) {
  os << "D0,D0.1,D0.2,SSIM,PSNR,MSE,wall_s,empty_prediction\n";
  for (const auto& r : reports)
    os << r.d0 << "," << r.d01 << "," << r.d02 << "," << r.ssim << "," << r.psnr << ","
       << r.mse << "," << r.wall_s << "," << (r.empty_prediction ? 1 : 0) << "\n";
}

inline void write_report_table(std::ostream& os, const EvalReport& r) {
  os << std::fixed << std::setprecision(4);
  os << "  D(0)    D(0.1)  D(0.2)  SSIM    PSNR(dB)  MSE\n";
  os << "  " << std::setw(7) << std::left << r.d0 << " " << std::setw(7) << r.d01 << " "
     << std::setw(7) << r.d02 << " " << std::setw(7) << r.ssim << " " << std::setw(9)
     << r.psnr << " " << r.mse << "\n";
  os.unsetf(std::ios_base::floatfield);
}

inline EvalReport evaluate_image(const std::vector<JunctionParams>& params,
                                 const PatchGridSpec& grid, const ScalarField& truth_mask,
                                 const ColorField& pred_color, const ColorField& truth_color,
                                 double alpha = 1.0, double peak = 1.0,
                                 double binarize_thre = 0.5, double eps = kEvalEps) {
  EvalReport r;
  const std::array<double, 3> thresholds{0.0, 0.1, 0.2};
  double* slots[3] = {&r.d0, &r.d01, &r.d02};
  for (int i = 0; i < 3; ++i) {
    ScalarField sel = select_boundaries(params, grid, thresholds[i], alpha, eps);
    auto d = edge_localization_error(sel, truth_mask, binarize_thre);
    if (d.empty_prediction) r.empty_prediction = true;
    *slots[i] = d.mean_px;
  }
  auto q = color_map_quality(pred_color, truth_color, peak);
  r.ssim = q.ssim;
  r.psnr = q.psnr;
  r.mse = q.mse;
  return r;
}

}  // namespace ctbound
