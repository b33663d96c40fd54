// Copyright (C) 2026 The skipstep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <skipstep/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace skipstep {

/// Planar (C, H, W) image with values in [0, 1].
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

  std::size_t plane() const { return height * width; }
  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
  bool operator==(const Image&) const = default;
};

inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

/// Single-channel luminance; a one-channel image is returned unchanged.
inline Image luminance(const Image& img) {
  if (img.channels == 1) return img;
  if (img.channels != 3) throw std::invalid_argument("luminance: expected 1 or 3 channels");
  Image out(1, img.height, img.width);
  const std::size_t P = img.plane();
  for (std::size_t i = 0; i < P; ++i) {
    out.pixels[i] = kLumaR * img.pixels[i] + kLumaG * img.pixels[P + i] + kLumaB * img.pixels[2 * P + i];
  }
  return out;
}

/// [0, 1] -> [-1, 1] model domain, one image per batch slot.
template <class Real>
Tensor<Real> to_model_batch(std::span<const Image> images) {
  if (images.empty()) throw std::invalid_argument("to_model_batch: empty batch");
  const Image& f = images.front();
  Tensor<Real> out({images.size(), f.channels, f.height, f.width});
  const std::size_t per = f.pixels.size();
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n].channels != f.channels || images[n].height != f.height || images[n].width != f.width) {
      throw shape_error("to_model_batch: image " + std::to_string(n) + " differs in shape from image 0");
    }
    for (std::size_t i = 0; i < per; ++i) out[n * per + i] = static_cast<Real>(2.0 * images[n].pixels[i] - 1.0);
  }
  return out;
}

/// Batch slot n of a model-domain tensor as a [0, 1] image (clamped).
template <class Real>
Image from_model_batch(const Tensor<Real>& t, std::size_t n) {
  if (t.rank() != 4) throw shape_error("from_model_batch: expected (N, C, H, W), got " + shape_str(t.shape()));
  Image img(t.dim(1), t.dim(2), t.dim(3));
  const std::size_t per = img.pixels.size();
  for (std::size_t i = 0; i < per; ++i) {
    img.pixels[i] = std::clamp((static_cast<double>(t[n * per + i]) + 1.0) * 0.5, 0.0, 1.0);
  }
  return img;
}

// ---- quality ----------------------------------------------------------------

inline constexpr double kPsnrCap = 99.0;

inline double psnr_from_mse(double mse) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

struct QualityResult {
  std::vector<double> mse;
  std::vector<double> psnr;
  double mean_mse = 0.0;
  double mean_psnr = 0.0;
  double std_psnr = 0.0;

  void add(double m) {
    mse.push_back(m);
    psnr.push_back(psnr_from_mse(m));
  }

  void finalize() {
    const double n = static_cast<double>(psnr.size());
    if (psnr.empty()) return;
    mean_mse = mean_psnr = 0.0;
    for (std::size_t i = 0; i < psnr.size(); ++i) {
      mean_mse += mse[i];
      mean_psnr += psnr[i];
    }
    mean_mse /= n;
    mean_psnr /= n;
    double var = 0.0;
    for (double p : psnr) var += (p - mean_psnr) * (p - mean_psnr);
    std_psnr = psnr.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  }
};

/// Mean squared error over [0, 1] pixel values.
inline double mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw shape_error("psnr: size mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

inline QualityResult psnr(const Image& a, const Image& b) {
  if (a.channels != b.channels || a.height != b.height || a.width != b.width) {
    throw shape_error("psnr: image shapes differ");
  }
  QualityResult q;
  q.add(mse(a.pixels, b.pixels));
  q.finalize();
  return q;
}

/// Per-image PSNR between two model-domain batches, compared in [0, 1].
template <class Real>
QualityResult psnr(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) {
    throw shape_error("psnr: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  }
  const std::size_t N = a.dim(0);
  const std::size_t per = a.numel() / N;
  QualityResult q;
  for (std::size_t n = 0; n < N; ++n) {
    double s = 0.0;
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
      const double d = (static_cast<double>(a[i]) - static_cast<double>(b[i])) * 0.5;
      s += d * d;
    }
    q.add(s / static_cast<double>(per));
  }
  q.finalize();
  return q;
}

// ---- PPM / PGM ----------------------------------------------------------------

/// Binary P6 for 3 channels, P5 for 1 channel; maxval 255.
inline void write_pnm(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("write_pnm: expected 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << (img.channels == 3 ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> buf(img.pixels.size());
  const std::size_t P = img.plane();
  for (std::size_t i = 0; i < P; ++i) {
    for (std::size_t c = 0; c < img.channels; ++c) {
      const double v = std::clamp(img.pixels[c * P + i], 0.0, 1.0);
      buf[i * img.channels + c] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if ((magic != "P5" && magic != "P6") || maxval != 255 || w == 0 || h == 0) {
    throw std::runtime_error(path.string() + ": unsupported PNM header");
  }
  in.get();
  const std::size_t C = magic == "P6" ? 3 : 1;
  std::vector<unsigned char> buf(C * w * h);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw std::runtime_error(path.string() + ": truncated pixel data");
  Image img(C, h, w);
  for (std::size_t i = 0; i < w * h; ++i) {
    for (std::size_t c = 0; c < C; ++c) img.pixels[c * w * h + i] = buf[i * C + c] / 255.0;
  }
  return img;
}

}  // namespace skipstep
