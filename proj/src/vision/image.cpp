// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmlora/vision/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mmlora/errors.hpp"

namespace mmlora {
namespace {

std::size_t read_ppm_int(std::istream& in) {
  // Skips whitespace and '#' comments between header fields.
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  std::size_t v = 0;
  if (!(in >> v)) throw DataError("malformed PPM header");
  return v;
}

Image load_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[2];
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '6') throw DataError("not a binary PPM: " + path.string());
  Image img;
  img.width = read_ppm_int(in);
  img.height = read_ppm_int(in);
  const std::size_t maxval = read_ppm_int(in);
  if (maxval != 255) throw DataError("only 8-bit PPM is supported: " + path.string());
  in.get();
  if (img.width == 0 || img.height == 0) throw DataError("empty image: " + path.string());
  img.rgb.resize(img.width * img.height * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!in) throw DataError("truncated PPM data: " + path.string());
  return img;
}

Image load_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw DataError("cannot read PNG " + path.string() + ": " + png.message);
  png.format = PNG_FORMAT_RGB;
  Image img;
  img.width = png.width;
  img.height = png.height;
  img.rgb.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, img.rgb.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw DataError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return img;
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  in.close();
  static const unsigned char kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  if (std::memcmp(sig, kPngSig, 8) == 0) return load_png(path);
  if (sig[0] == 'P' && sig[1] == '6') return load_ppm(path);
  throw DataError("unsupported image format: " + path.string());
}

void save_ppm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
}

void save_png(const std::filesystem::path& path, const Image& image) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.rgb.data(), 0, nullptr))
    throw DataError("cannot write PNG " + path.string() + ": " + png.message);
}

Tensor image_to_tensor(const Image& image) {
  std::vector<double> v(image.rgb.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = image.rgb[i] / 255.0;
  return Tensor({image.height, image.width, 3}, std::move(v));
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 3 || image.dim(2) != 3) throw DimensionError("expected [H, W, 3], got " + shape_str(image.shape()));
  if (out_h == 0 || out_w == 0) throw DimensionError("resize target must be nonempty");
  const std::size_t in_h = image.dim(0), in_w = image.dim(1);
  const auto src = image.data();
  std::vector<double> out(out_h * out_w * 3);
  auto coord = [](std::size_t o, std::size_t in_n, std::size_t out_n) {
    const double s = (static_cast<double>(o) + 0.5) * static_cast<double>(in_n) / static_cast<double>(out_n) - 0.5;
    const double c = std::clamp(s, 0.0, static_cast<double>(in_n - 1));
    const auto lo = static_cast<std::size_t>(std::floor(c));
    const std::size_t hi = std::min(lo + 1, in_n - 1);
    return std::tuple{lo, hi, c - static_cast<double>(lo)};
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto [y0, y1, fy] = coord(y, in_h, out_h);
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto [x0, x1, fx] = coord(x, in_w, out_w);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        auto px = [&](std::size_t yy, std::size_t xx) { return src[(yy * in_w + xx) * 3 + ch]; };
        const double top = px(y0, x0) * (1 - fx) + px(y0, x1) * fx;
        const double bot = px(y1, x0) * (1 - fx) + px(y1, x1) * fx;
        out[(y * out_w + x) * 3 + ch] = top * (1 - fy) + bot * fy;
      }
    }
  }
  return Tensor({out_h, out_w, 3}, std::move(out));
}

std::vector<Tensor> make_crops(const Tensor& image, const CropPlan& plan, std::size_t crop) {
  Tensor resized = (image.dim(0) == plan.resize_h && image.dim(1) == plan.resize_w)
                       ? image
                       : resize_bilinear(image, plan.resize_h, plan.resize_w);
  const auto src = resized.data();
  std::vector<Tensor> crops;
  for (std::size_t r = 0; r < plan.rows; ++r) {
    for (std::size_t c = 0; c < plan.cols; ++c) {
      std::vector<double> v(crop * crop * 3);
      for (std::size_t y = 0; y < crop; ++y) {
        const std::size_t row = r * crop + y;
        const double* begin = src.data() + (row * plan.resize_w + c * crop) * 3;
        std::copy(begin, begin + crop * 3, v.begin() + static_cast<std::ptrdiff_t>(y * crop * 3));
      }
      crops.push_back(Tensor({crop, crop, 3}, std::move(v)));
    }
  }
  return crops;
}

}  // namespace mmlora
