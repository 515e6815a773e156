#pragma once

#include <cstddef>
#include <vector>

#include "ctbound/common.hpp"

namespace ctbound {

// Dense H x W map of non-negative reals (boundary confidence, masks, ...).
struct ScalarField {
  int height = 0;
  int width = 0;
  std::vector<double> values;  // row-major

  ScalarField() = default;
  ScalarField(int h, int w, double fill = 0.0)
      : height(h), width(w), values(static_cast<size_t>(h) * w, fill) {}

  double& at(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
  double at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
};

// Dense H x W x k map; channel-interleaved row-major.
struct ColorField {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> values;

  ColorField() = default;
  ColorField(int h, int w, int k, double fill = 0.0)
      : height(h), width(w), channels(k),
        values(static_cast<size_t>(h) * w * k, fill) {}

  double& at(int y, int x, int c) {
    return values[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return values[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

// Image / patch geometry. Patch (m, n) covers rows [m*stride, m*stride + patch)
// and columns [n*stride, n*stride + patch).
struct PatchGridSpec {
  int image_height = 0;
  int image_width = 0;
  int patch_size = 21;
  int stride = 1;
  int channels = 1;

  void validate() const {
    if (patch_size < 1 || stride < 1 || channels < 1)
      throw ConfigError("PatchGridSpec: patch_size, stride, channels must be >= 1");
    if (patch_size > image_height || patch_size > image_width)
      throw InputError("PatchGridSpec: patch larger than image");
  }

  int rows() const { return (image_height - patch_size) / stride + 1; }
  int cols() const { return (image_width - patch_size) / stride + 1; }
  int patch_count() const { return rows() * cols(); }
};

}  // namespace ctbound
