// Copyright (C) 2026 The skipstep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <skipstep/image.hpp>
#include <skipstep/rng.hpp>
#include <skipstep/tensor.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace skipstep {

enum class TaskKind { Restore, StructGen };

inline std::string_view task_name(TaskKind k) { return k == TaskKind::Restore ? "restore" : "structgen"; }

inline TaskKind parse_task(std::string_view s) {
  if (s == "restore") return TaskKind::Restore;
  if (s == "structgen") return TaskKind::StructGen;
  throw std::invalid_argument("unknown task '" + std::string(s) + "' (expected restore or structgen)");
}

/// Condition channels a task produces for a given image channel count.
inline std::size_t condition_channels(TaskKind k, std::size_t image_channels) {
  return k == TaskKind::Restore ? image_channels : 1;
}

// ---- scenes -------------------------------------------------------------------

using Color = std::array<double, 3>;

/// Corners of {0.1, 0.9}^3.
inline constexpr std::array<Color, 8> kPalette = {{
    {0.1, 0.1, 0.1},
    {0.9, 0.1, 0.1},
    {0.1, 0.9, 0.1},
    {0.9, 0.9, 0.1},
    {0.1, 0.1, 0.9},
    {0.9, 0.1, 0.9},
    {0.1, 0.9, 0.9},
    {0.9, 0.9, 0.9},
}};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t min_shapes = 3;
  std::size_t max_shapes = 6;
  /// Overrides the drawn shape count when set.
  std::optional<std::size_t> force_shapes;
};

struct Gradient {
  Color from{};
  Color to{};
  /// Direction of increase, radians.
  double angle = 0.0;
};

struct Shape2D {
  enum class Kind { Rect, Circle } kind = Kind::Rect;
  Color color{};
  // Rect: [x0, x1) x [y0, y1) in pixels. Circle: centre (cx, cy), radius r.
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double cx = 0.0, cy = 0.0, r = 0.0;
};

struct SceneLayout {
  std::size_t image_size = 0;
  std::size_t channels = 3;
  Gradient background;
  std::vector<Shape2D> shapes;
};

/// Gradient position in [0, 1] at pixel (x, y): projection of the pixel
/// centre onto the gradient direction, normalised by the image's extent
/// along that direction.
inline double gradient_position(const Gradient& g, std::size_t size, std::size_t x, std::size_t y) {
  const double c = std::cos(g.angle), s = std::sin(g.angle);
  const double half = static_cast<double>(size) * 0.5;
  const double extent = (std::abs(c) + std::abs(s)) * static_cast<double>(size);
  const double proj = (static_cast<double>(x) + 0.5 - half) * c + (static_cast<double>(y) + 0.5 - half) * s;
  return std::clamp(proj / extent + 0.5, 0.0, 1.0);
}

inline SceneLayout describe_scene(const SceneSpec& spec) {
  if (spec.image_size < 4) throw std::invalid_argument("scene: image_size must be >= 4");
  if (spec.channels != 1 && spec.channels != 3) throw std::invalid_argument("scene: channels must be 1 or 3");
  if (spec.min_shapes > spec.max_shapes) throw std::invalid_argument("scene: min_shapes > max_shapes");
  Rng rng(Rng::derive(spec.seed, "scene"));
  SceneLayout L;
  L.image_size = spec.image_size;
  L.channels = spec.channels;
  const auto pick = [&] { return kPalette[static_cast<std::size_t>(rng.uniform_int(0, kPalette.size() - 1))]; };
  L.background.from = pick();
  L.background.to = pick();
  L.background.angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const std::size_t count =
      spec.force_shapes ? *spec.force_shapes
                        : static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(spec.min_shapes),
                                                                   static_cast<std::int64_t>(spec.max_shapes)));
  const int S = static_cast<int>(spec.image_size);
  const int lo = std::max(2, S / 8), hi = std::max(lo, S / 2);
  for (std::size_t k = 0; k < count; ++k) {
    Shape2D sh;
    sh.color = pick();
    if (rng.bernoulli(0.5)) {
      sh.kind = Shape2D::Kind::Rect;
      const int w = static_cast<int>(rng.uniform_int(lo, hi));
      const int h = static_cast<int>(rng.uniform_int(lo, hi));
      sh.x0 = static_cast<int>(rng.uniform_int(0, S - w));
      sh.y0 = static_cast<int>(rng.uniform_int(0, S - h));
      sh.x1 = sh.x0 + w;
      sh.y1 = sh.y0 + h;
    } else {
      sh.kind = Shape2D::Kind::Circle;
      sh.r = rng.uniform(lo * 0.75, hi * 0.5 + 1.0);
      sh.cx = rng.uniform(0.0, S);
      sh.cy = rng.uniform(0.0, S);
    }
    L.shapes.push_back(sh);
  }
  return L;
}

inline bool covers(const Shape2D& sh, std::size_t x, std::size_t y) {
  if (sh.kind == Shape2D::Kind::Rect) {
    const int xi = static_cast<int>(x), yi = static_cast<int>(y);
    return xi >= sh.x0 && xi < sh.x1 && yi >= sh.y0 && yi < sh.y1;
  }
  const double dx = static_cast<double>(x) + 0.5 - sh.cx;
  const double dy = static_cast<double>(y) + 0.5 - sh.cy;
  return dx * dx + dy * dy <= sh.r * sh.r;
}

/// Background first, then shapes in order (later shapes paint over earlier
/// ones). No anti-aliasing.
inline Image render(const SceneLayout& L) {
  const std::size_t S = L.image_size;
  Image rgb(3, S, S);
  for (std::size_t y = 0; y < S; ++y) {
    for (std::size_t x = 0; x < S; ++x) {
      const double p = gradient_position(L.background, S, x, y);
      Color c;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        c[ch] = L.background.from[ch] + (L.background.to[ch] - L.background.from[ch]) * p;
      }
      for (const auto& sh : L.shapes) {
        if (covers(sh, x, y)) c = sh.color;
      }
      for (std::size_t ch = 0; ch < 3; ++ch) rgb.at(ch, y, x) = c[ch];
    }
  }
  return L.channels == 1 ? luminance(rgb) : rgb;
}

inline Image gen_scene(const SceneSpec& spec) { return render(describe_scene(spec)); }

// ---- degradations -------------------------------------------------------------

inline constexpr std::size_t kRestoreFactor = 4;
inline constexpr double kRestoreNoise = 0.05;
inline constexpr double kEdgeThreshold = 0.25;

/// factor x factor box average, nearest-neighbour upsample back, additive
/// Gaussian noise from the (seed, "degrade") stream, clamped to [0, 1].
inline Image degrade_restore(const Image& x0, std::uint64_t seed, double sigma = kRestoreNoise,
                             std::size_t factor = kRestoreFactor) {
  if (x0.height % factor != 0 || x0.width % factor != 0) {
    throw std::invalid_argument("degrade_restore: image size must be divisible by " + std::to_string(factor));
  }
  Image out(x0.channels, x0.height, x0.width);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t c = 0; c < x0.channels; ++c) {
    for (std::size_t by = 0; by < x0.height; by += factor) {
      for (std::size_t bx = 0; bx < x0.width; bx += factor) {
        double s = 0.0;
        for (std::size_t y = by; y < by + factor; ++y) {
          for (std::size_t x = bx; x < bx + factor; ++x) s += x0.at(c, y, x);
        }
        s *= inv;
        for (std::size_t y = by; y < by + factor; ++y) {
          for (std::size_t x = bx; x < bx + factor; ++x) out.at(c, y, x) = s;
        }
      }
    }
  }
  if (sigma > 0.0) {
    Rng rng(Rng::derive(seed, "degrade"));
    for (double& v : out.pixels) v += sigma * rng.normal();
  }
  for (double& v : out.pixels) v = std::clamp(v, 0.0, 1.0);
  return out;
}

/// Raw Sobel responses on luminance with replicated borders.
struct SobelField {
  Image gx;
  Image gy;
};

inline SobelField sobel(const Image& img) {
  const Image L = luminance(img);
  const std::size_t H = L.height, W = L.width;
  SobelField f{Image(1, H, W), Image(1, H, W)};
  const auto px = [&](long y, long x) {
    y = std::clamp<long>(y, 0, static_cast<long>(H) - 1);
    x = std::clamp<long>(x, 0, static_cast<long>(W) - 1);
    return L.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
  };
  for (std::size_t yy = 0; yy < H; ++yy) {
    for (std::size_t xx = 0; xx < W; ++xx) {
      const long y = static_cast<long>(yy), x = static_cast<long>(xx);
      f.gx.at(0, yy, xx) = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                           (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
      f.gy.at(0, yy, xx) = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                           (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
    }
  }
  return f;
}

/// Binary single-channel map: 1 where the Sobel magnitude exceeds threshold.
inline Image edge_condition(const Image& x0, double threshold = kEdgeThreshold) {
  const SobelField f = sobel(x0);
  Image out(1, x0.height, x0.width);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const double m = std::hypot(f.gx.pixels[i], f.gy.pixels[i]);
    out.pixels[i] = m > threshold ? 1.0 : 0.0;
  }
  return out;
}

// ---- paired data ----------------------------------------------------------------

struct TaskPair {
  Image condition;
  Image target;
  TaskKind kind = TaskKind::Restore;
  std::uint64_t seed = 0;
};

struct DataSpec {
  TaskKind kind = TaskKind::Restore;
  std::size_t image_size = 32;
  std::size_t channels = 3;
};

inline TaskPair make_pair(const DataSpec& d, std::uint64_t seed) {
  SceneSpec s;
  s.seed = seed;
  s.image_size = d.image_size;
  s.channels = d.channels;
  TaskPair p;
  p.kind = d.kind;
  p.seed = seed;
  p.target = gen_scene(s);
  p.condition = d.kind == TaskKind::Restore ? degrade_restore(p.target, seed) : edge_condition(p.target);
  return p;
}

/// First validation seed; training seeds are [0, train_count).
inline constexpr std::uint64_t kValidationSeedOffset = 1'000'000;

struct DatasetSplit {
  std::size_t train_count = 4096;
  std::size_t val_count = 256;

  std::uint64_t train_seed(std::size_t i) const {
    if (i >= train_count) throw std::out_of_range("training index out of range");
    return i;
  }
  std::uint64_t val_seed(std::size_t i) const {
    if (i >= val_count) throw std::out_of_range("validation index out of range");
    return kValidationSeedOffset + i;
  }
  void validate() const {
    if (train_count == 0) throw std::invalid_argument("train_count must be positive");
    if (train_count > kValidationSeedOffset) {
      throw std::invalid_argument("train_count exceeds the validation seed offset");
    }
  }
  std::vector<std::uint64_t> val_seeds() const {
    std::vector<std::uint64_t> s(val_count);
    for (std::size_t i = 0; i < val_count; ++i) s[i] = val_seed(i);
    return s;
  }
};

/// `count` distinct training seeds drawn with a seeded partial shuffle.
inline std::vector<std::uint64_t> sample_train_seeds(const DatasetSplit& split, std::size_t count,
                                                     std::uint64_t seed) {
  if (count > split.train_count) throw std::invalid_argument("search batch larger than the training set");
  std::vector<std::uint64_t> all(split.train_count);
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  Rng rng(Rng::derive(seed, "search.batch"));
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                            static_cast<std::int64_t>(all.size()) - 1));
    std::swap(all[i], all[j]);
  }
  all.resize(count);
  return all;
}

template <class Real>
struct Batch {
  Tensor<Real> condition;
  Tensor<Real> target;
  std::vector<std::uint64_t> seeds;
};

/// Model-domain tensors for the pairs generated from `seeds`.
template <class Real>
Batch<Real> make_batch(const DataSpec& d, std::span<const std::uint64_t> seeds) {
  std::vector<Image> cond, tgt;
  cond.reserve(seeds.size());
  tgt.reserve(seeds.size());
  for (auto s : seeds) {
    TaskPair p = make_pair(d, s);
    cond.push_back(std::move(p.condition));
    tgt.push_back(std::move(p.target));
  }
  return {to_model_batch<Real>(cond), to_model_batch<Real>(tgt), {seeds.begin(), seeds.end()}};
}

}  // namespace skipstep
