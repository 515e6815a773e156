#pragma once

// 8-bit PNG / PGM image input-output and the CTB1 raw photon-count format.
// CTB1 layout: magic "CTB1", then little-endian u32 {height, width, channels,
// dtype=0 (u32)}, f64 photon level, then row-major u32 counts.

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "ctbound/common.hpp"
#include "ctbound/field.hpp"

namespace ctbound {

struct PhotonImage {
  int height = 0;
  int width = 0;
  int channels = 1;
  double alpha = 1.0;
  std::vector<std::uint32_t> counts;  // row-major, channel-interleaved

  std::uint32_t& at(int y, int x, int c) {
    return counts[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  std::uint32_t at(int y, int x, int c) const {
    return counts[(static_cast<size_t>(y) * width + x) * channels + c];
  }

  // Counts as a real-valued field (photon units).
  ColorField to_field() const {
    ColorField f(height, width, channels);
    for (size_t i = 0; i < counts.size(); ++i) f.values[i] = counts[i];
    return f;
  }
};

namespace io_detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void write_u32(std::ofstream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<char*>(b), 4);
}

inline std::uint32_t read_u32(std::ifstream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace io_detail

// Writes an 8-bit PNG; values must already be bytes (0..255), gray or RGB.
inline void save_png8(const std::string& path, int height, int width, int channels,
                      const std::vector<unsigned char>& bytes) {
  if (channels != 1 && channels != 3)
    throw InputError("save_png8: channels must be 1 or 3: " + path);
  io_detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw InputError("save_png8: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw InputError("save_png8: libpng failure writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(height);
  std::vector<unsigned char> buf = bytes;
  for (int y = 0; y < height; ++y)
    rows[y] = buf.data() + static_cast<size_t>(y) * width * channels;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Loads an 8-bit PNG or PGM as values in [0, 1]; grayscale keeps k=1.
inline ColorField load_image(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw InputError("load_image: cannot open " + path);
  char magic[2] = {0, 0};
  probe.read(magic, 2);
  probe.close();

  if (magic[0] == 'P' && (magic[1] == '5' || magic[1] == '2')) {
    std::ifstream is(path, std::ios::binary);
    std::string m;
    int w, h, maxval;
    is >> m >> w >> h >> maxval;
    is.get();
    if (!is || w < 1 || h < 1 || maxval < 1 || maxval > 255)
      throw InputError("load_image: corrupt PGM header in " + path);
    ColorField out(h, w, 1);
    if (m == "P5") {
      std::vector<unsigned char> buf(static_cast<size_t>(w) * h);
      is.read(reinterpret_cast<char*>(buf.data()), buf.size());
      if (!is) throw InputError("load_image: truncated PGM " + path);
      for (size_t i = 0; i < buf.size(); ++i) out.values[i] = buf[i] / double(maxval);
    } else {
      for (auto& v : out.values) {
        int px;
        is >> px;
        if (!is) throw InputError("load_image: truncated PGM " + path);
        v = px / double(maxval);
      }
    }
    return out;
  }

  io_detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw InputError("load_image: cannot open " + path);
  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw InputError("load_image: not a PNG/PGM file: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw InputError("load_image: corrupt PNG " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  const int w = png_get_image_width(png, info);
  const int h = png_get_image_height(png, info);
  const int k = png_get_channels(png, info);
  if (k != 1 && k != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw InputError("load_image: unsupported channel count in " + path);
  }
  std::vector<unsigned char> buf(static_cast<size_t>(w) * h * k);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = buf.data() + static_cast<size_t>(y) * w * k;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  ColorField out(h, w, k);
  for (size_t i = 0; i < buf.size(); ++i) out.values[i] = buf[i] / 255.0;
  return out;
}

// Saves values in [0, 1] as an 8-bit PNG (clipped, rounded).
inline void save_image_unit(const std::string& path, const ColorField& img) {
  std::vector<unsigned char> bytes(img.values.size());
  for (size_t i = 0; i < bytes.size(); ++i) {
    double v = std::min(1.0, std::max(0.0, img.values[i]));
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  save_png8(path, img.height, img.width, img.channels, bytes);
}

inline void save_boundary_png(const std::string& path, const ScalarField& map) {
  std::vector<unsigned char> bytes(map.values.size());
  for (size_t i = 0; i < bytes.size(); ++i) {
    double v = std::min(1.0, std::max(0.0, map.values[i]));
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  save_png8(path, map.height, map.width, 1, bytes);
}

inline void save_ctb1(const std::string& path, const PhotonImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("save_ctb1: cannot open " + path);
  os.write("CTB1", 4);
  io_detail::write_u32(os, img.height);
  io_detail::write_u32(os, img.width);
  io_detail::write_u32(os, img.channels);
  io_detail::write_u32(os, 0);  // dtype: u32 counts
  static_assert(sizeof(double) == 8);
  os.write(reinterpret_cast<const char*>(&img.alpha), 8);
  for (std::uint32_t v : img.counts) io_detail::write_u32(os, v);
  if (!os) throw InputError("save_ctb1: write failure " + path);
}

inline PhotonImage load_ctb1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("load_ctb1: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CTB1", 4) != 0)
    throw InputError("load_ctb1: bad magic in " + path);
  PhotonImage img;
  img.height = io_detail::read_u32(is);
  img.width = io_detail::read_u32(is);
  img.channels = io_detail::read_u32(is);
  const std::uint32_t dtype = io_detail::read_u32(is);
  if (dtype != 0) throw InputError("load_ctb1: unsupported dtype in " + path);
  is.read(reinterpret_cast<char*>(&img.alpha), 8);
  img.counts.resize(static_cast<size_t>(img.height) * img.width * img.channels);
  for (auto& v : img.counts) v = io_detail::read_u32(is);
  if (!is) throw InputError("load_ctb1: truncated file " + path);
  return img;
}

}  // namespace ctbound
