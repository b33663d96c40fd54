// Copyright (C) 2026 The skipstep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// The primitive set used by the denoiser. Every primitive computes its
// forward value eagerly and, when a tape is active and any input requires a
// gradient, records a backward rule on that tape.

#include <skipstep/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace skipstep::ops {

namespace detail {

[[noreturn]] inline void mismatch(std::string_view prim, const std::string& what) {
  throw shape_error(std::string(prim) + ": " + what);
}

template <class Real>
bool any_requires_grad(const std::vector<Tensor<Real>>& inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<Real>& t) { return t.defined() && t.requires_grad(); });
}

template <class Real, class Backward>
void record(std::string_view name, std::vector<Tensor<Real>> inputs, const Tensor<Real>& out, Backward&& bw) {
  Tape<Real>* tape = Tape<Real>::active();
  if (tape == nullptr || !any_requires_grad(inputs)) return;
  tape->record(name, std::move(inputs), out, std::forward<Backward>(bw));
}

template <class Real>
void require_rank(std::string_view prim, const Tensor<Real>& t, std::size_t rank, const char* role) {
  if (t.rank() != rank) {
    mismatch(prim, std::string(role) + " must have rank " + std::to_string(rank) + ", got shape " +
                       shape_str(t.shape()));
  }
}

// c[i, 0:n] += sum_k a[i, k] * b[k, 0:n] for rows i in [0, m); each output
// element accumulates over k in ascending order regardless of n, so results
// for one column do not depend on how many columns are processed together.
template <class Real>
void gemm_accumulate(std::size_t m, std::size_t kdim, std::size_t n, const Real* a, const Real* b, Real* c) {
  constexpr std::size_t kColBlock = 512;
  for (std::size_t j0 = 0; j0 < n; j0 += kColBlock) {
    const std::size_t jn = std::min(kColBlock, n - j0);
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      Real* c0 = c + (i + 0) * n + j0;
      Real* c1 = c + (i + 1) * n + j0;
      Real* c2 = c + (i + 2) * n + j0;
      Real* c3 = c + (i + 3) * n + j0;
      for (std::size_t k = 0; k < kdim; ++k) {
        const Real a0 = a[(i + 0) * kdim + k];
        const Real a1 = a[(i + 1) * kdim + k];
        const Real a2 = a[(i + 2) * kdim + k];
        const Real a3 = a[(i + 3) * kdim + k];
        const Real* bk = b + k * n + j0;
        for (std::size_t j = 0; j < jn; ++j) {
          const Real bv = bk[j];
          c0[j] += a0 * bv;
          c1[j] += a1 * bv;
          c2[j] += a2 * bv;
          c3[j] += a3 * bv;
        }
      }
    }
    for (; i < m; ++i) {
      Real* ci = c + i * n + j0;
      for (std::size_t k = 0; k < kdim; ++k) {
        const Real av = a[i * kdim + k];
        const Real* bk = b + k * n + j0;
        for (std::size_t j = 0; j < jn; ++j) ci[j] += av * bk[j];
      }
    }
  }
}

template <class Real>
Real dot(const Real* a, const Real* b, std::size_t n) {
  Real acc[8] = {};
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[j + l] * b[j + l];
  }
  Real s = 0;
  for (; j < n; ++j) s += a[j] * b[j];
  for (Real v : acc) s += v;
  return s;
}

struct ConvGeometry {
  std::size_t batch, in_ch, height, width, out_ch, kernel, stride, pad, out_h, out_w;
  std::size_t patch() const { return in_ch * kernel * kernel; }
  std::size_t pixels() const { return out_h * out_w; }
  std::size_t columns() const { return batch * pixels(); }
};

// cols[(ci*k + ky)*k + kx][n*P + oy*OW + ox]
template <class Real>
void im2col(const ConvGeometry& g, const Real* x, Real* cols) {
  const std::size_t ncol = g.columns();
  for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        Real* row = cols + ((ci * g.kernel + ky) * g.kernel + kx) * ncol;
        for (std::size_t n = 0; n < g.batch; ++n) {
          const Real* plane = x + (n * g.in_ch + ci) * g.height * g.width;
          Real* dst = row + n * g.pixels();
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
            Real* drow = dst + oy * g.out_w;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
              std::fill(drow, drow + g.out_w, Real(0));
              continue;
            }
            const Real* srow = plane + static_cast<std::size_t>(iy) * g.width;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
              drow[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) ? Real(0) : srow[ix];
            }
          }
        }
      }
    }
  }
}

template <class Real>
void col2im_accumulate(const ConvGeometry& g, const Real* cols, Real* dx) {
  const std::size_t ncol = g.columns();
  for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const Real* row = cols + ((ci * g.kernel + ky) * g.kernel + kx) * ncol;
        for (std::size_t n = 0; n < g.batch; ++n) {
          Real* plane = dx + (n * g.in_ch + ci) * g.height * g.width;
          const Real* src = row + n * g.pixels();
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
            Real* drow = plane + static_cast<std::size_t>(iy) * g.width;
            const Real* srow = src + oy * g.out_w;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) drow[ix] += srow[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D convolution over (N, C, H, W) with a square (Cout, Cin, k, k) kernel,
/// zero padding k/2 and stride 1 or 2. bias may be undefined.
template <class Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias,
                    std::size_t stride = 1) {
  constexpr std::string_view kName = "conv2d";
  detail::require_rank(kName, x, 4, "input");
  detail::require_rank(kName, weight, 4, "weight");
  if (stride != 1 && stride != 2) detail::mismatch(kName, "stride must be 1 or 2, got " + std::to_string(stride));
  const std::size_t k = weight.dim(2);
  if (weight.dim(3) != k || k % 2 == 0) {
    detail::mismatch(kName, "kernel must be square with odd size, got " + shape_str(weight.shape()));
  }
  if (weight.dim(1) != x.dim(1)) {
    detail::mismatch(kName, "input has " + std::to_string(x.dim(1)) + " channels but weight expects " +
                                std::to_string(weight.dim(1)));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0))) {
    detail::mismatch(kName, "bias shape " + shape_str(bias.shape()) + " does not match " +
                                std::to_string(weight.dim(0)) + " output channels");
  }
  detail::ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), k, stride, k / 2, 0, 0};
  if (g.height + 2 * g.pad < k || g.width + 2 * g.pad < k) {
    detail::mismatch(kName, "input " + shape_str(x.shape()) + " smaller than kernel");
  }
  g.out_h = (g.height + 2 * g.pad - k) / stride + 1;
  g.out_w = (g.width + 2 * g.pad - k) / stride + 1;

  const std::size_t ncol = g.columns();
  std::vector<Real> cols(g.patch() * ncol);
  detail::im2col(g, x.data(), cols.data());

  std::vector<Real> acc(g.out_ch * ncol, Real(0));
  if (bias.defined()) {
    for (std::size_t co = 0; co < g.out_ch; ++co) std::fill_n(acc.data() + co * ncol, ncol, bias[co]);
  }
  detail::gemm_accumulate(g.out_ch, g.patch(), ncol, weight.data(), cols.data(), acc.data());

  Tensor<Real> out({g.batch, g.out_ch, g.out_h, g.out_w});
  const std::size_t P = g.pixels();
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < g.out_ch; ++co) {
      std::copy_n(acc.data() + co * ncol + n * P, P, out.data() + (n * g.out_ch + co) * P);
    }
  }

  detail::record<Real>(kName, {x, weight, bias}, out, [g, cols = std::move(cols)](typename Tape<Real>::Op& op) {
    const std::size_t ncol = g.columns();
    const std::size_t P = g.pixels();
    auto gout = op.output.grad();
    // Gradient rearranged to (Cout, N*P).
    std::vector<Real> gmat(g.out_ch * ncol);
    for (std::size_t n = 0; n < g.batch; ++n) {
      for (std::size_t co = 0; co < g.out_ch; ++co) {
        std::copy_n(gout.data() + (n * g.out_ch + co) * P, P, gmat.data() + co * ncol + n * P);
      }
    }
    Tensor<Real>& x = op.inputs[0];
    Tensor<Real>& w = op.inputs[1];
    Tensor<Real>& b = op.inputs[2];
    if (w.requires_grad()) {
      auto gw = w.ensure_grad();
      const std::size_t K = g.patch();
      for (std::size_t co = 0; co < g.out_ch; ++co) {
        for (std::size_t kk = 0; kk < K; ++kk) {
          gw[co * K + kk] += detail::dot(gmat.data() + co * ncol, cols.data() + kk * ncol, ncol);
        }
      }
    }
    if (b.defined() && b.requires_grad()) {
      auto gb = b.ensure_grad();
      for (std::size_t co = 0; co < g.out_ch; ++co) {
        Real s = 0;
        for (std::size_t j = 0; j < ncol; ++j) s += gmat[co * ncol + j];
        gb[co] += s;
      }
    }
    if (x.requires_grad()) {
      const std::size_t K = g.patch();
      // W^T as (K, Cout) so the shared kernel can form dcols = W^T * gmat.
      std::vector<Real> wt(K * g.out_ch);
      for (std::size_t co = 0; co < g.out_ch; ++co) {
        for (std::size_t kk = 0; kk < K; ++kk) wt[kk * g.out_ch + co] = w[co * K + kk];
      }
      std::vector<Real> dcols(K * ncol, Real(0));
      detail::gemm_accumulate(K, g.out_ch, ncol, wt.data(), gmat.data(), dcols.data());
      detail::col2im_accumulate(g, dcols.data(), x.ensure_grad().data());
    }
  });
  return out;
}

/// Nearest-neighbour 2x spatial upsampling of (N, C, H, W).
template <class Real>
Tensor<Real> upsample2x(const Tensor<Real>& x) {
  detail::require_rank("upsample2x", x, 4, "input");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<Real> out({N, C, 2 * H, 2 * W});
  for (std::size_t p = 0; p < N * C; ++p) {
    const Real* src = x.data() + p * H * W;
    Real* dst = out.data() + p * 4 * H * W;
    for (std::size_t y = 0; y < 2 * H; ++y) {
      for (std::size_t xx = 0; xx < 2 * W; ++xx) dst[y * 2 * W + xx] = src[(y / 2) * W + xx / 2];
    }
  }
  detail::record<Real>("upsample2x", {x}, out, [N, C, H, W](typename Tape<Real>::Op& op) {
    auto gout = op.output.grad();
    auto gx = op.inputs[0].ensure_grad();
    for (std::size_t p = 0; p < N * C; ++p) {
      const Real* src = gout.data() + p * 4 * H * W;
      Real* dst = gx.data() + p * H * W;
      for (std::size_t y = 0; y < 2 * H; ++y) {
        for (std::size_t xx = 0; xx < 2 * W; ++xx) dst[(y / 2) * W + xx / 2] += src[y * 2 * W + xx];
      }
    }
  });
  return out;
}

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) {
    detail::mismatch("add", "operand shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  }
  Tensor<Real> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  detail::record<Real>("add", {a, b}, out, [](typename Tape<Real>::Op& op) {
    auto g = op.output.grad();
    for (Tensor<Real>& in : op.inputs) {
      if (!in.requires_grad()) continue;
      auto gi = in.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
  return out;
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) {
    detail::mismatch("mul", "operand shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  }
  Tensor<Real> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  detail::record<Real>("mul", {a, b}, out, [](typename Tape<Real>::Op& op) {
    auto g = op.output.grad();
    Tensor<Real>& a = op.inputs[0];
    Tensor<Real>& b = op.inputs[1];
    if (a.requires_grad()) {
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
    }
    if (b.requires_grad()) {
      auto gb = b.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
    }
  });
  return out;
}

/// x * s for a constant scalar s.
template <class Real>
Tensor<Real> scale(const Tensor<Real>& x, Real s) {
  Tensor<Real> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * s;
  detail::record<Real>("scale", {x}, out, [s](typename Tape<Real>::Op& op) {
    auto g = op.output.grad();
    auto gx = op.inputs[0].ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
  });
  return out;
}

/// Adds a per-sample, per-channel bias (N, C) to every pixel of (N, C, H, W).
template <class Real>
Tensor<Real> add_channel_bias(const Tensor<Real>& x, const Tensor<Real>& bias) {
  constexpr std::string_view kName = "add_channel_bias";
  detail::require_rank(kName, x, 4, "input");
  detail::require_rank(kName, bias, 2, "bias");
  if (bias.dim(0) != x.dim(0) || bias.dim(1) != x.dim(1)) {
    detail::mismatch(kName, "bias shape " + shape_str(bias.shape()) + " does not match input " + shape_str(x.shape()));
  }
  const std::size_t NC = x.dim(0) * x.dim(1), P = x.dim(2) * x.dim(3);
  Tensor<Real> out(x.shape());
  for (std::size_t p = 0; p < NC; ++p) {
    const Real b = bias[p];
    for (std::size_t i = 0; i < P; ++i) out[p * P + i] = x[p * P + i] + b;
  }
  detail::record<Real>(kName, {x, bias}, out, [NC, P](typename Tape<Real>::Op& op) {
    auto g = op.output.grad();
    if (op.inputs[0].requires_grad()) {
      auto gx = op.inputs[0].ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (op.inputs[1].requires_grad()) {
      auto gb = op.inputs[1].ensure_grad();
      for (std::size_t p = 0; p < NC; ++p) {
        Real s = 0;
        for (std::size_t i = 0; i < P; ++i) s += g[p * P + i];
        gb[p] += s;
      }
    }
  });
  return out;
}

/// x * sigmoid(x), elementwise.
template <class Real>
Tensor<Real> silu(const Tensor<Real>& x) {
  Tensor<Real> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const Real v = x[i];
    out[i] = v / (Real(1) + std::exp(-v));
  }
  detail::record<Real>("silu", {x}, out, [](typename Tape<Real>::Op& op) {
    auto g = op.output.grad();
    const Tensor<Real>& x = op.inputs[0];
    auto gx = op.inputs[0].ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real v = x[i];
      const Real s = Real(1) / (Real(1) + std::exp(-v));
      gx[i] += g[i] * s * (Real(1) + v * (Real(1) - s));
    }
  });
  return out;
}

/// y = x W^T + b for x (N, in), W (out, in), b (out).
template <class Real>
Tensor<Real> affine(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias) {
  constexpr std::string_view kName = "affine";
  detail::require_rank(kName, x, 2, "input");
  detail::require_rank(kName, weight, 2, "weight");
  const std::size_t N = x.dim(0), in = x.dim(1), outd = weight.dim(0);
  if (weight.dim(1) != in) {
    detail::mismatch(kName, "input width " + std::to_string(in) + " does not match weight " + shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outd)) {
    detail::mismatch(kName, "bias shape " + shape_str(bias.shape()) + " does not match output width " +
                                std::to_string(outd));
  }
  Tensor<Real> out({N, outd});
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t o = 0; o < outd; ++o) {
      Real s = bias.defined() ? bias[o] : Real(0);
      for (std::size_t i = 0; i < in; ++i) s += weight[o * in + i] * x[n * in + i];
      out[n * outd + o] = s;
    }
  }
  detail::record<Real>(kName, {x, weight, bias}, out, [N, in, outd](typename Tape<Real>::Op& op) {
    auto g = op.output.grad();
    Tensor<Real>& x = op.inputs[0];
    Tensor<Real>& w = op.inputs[1];
    Tensor<Real>& b = op.inputs[2];
    if (x.requires_grad()) {
      auto gx = x.ensure_grad();
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t o = 0; o < outd; ++o) {
          const Real go = g[n * outd + o];
          for (std::size_t i = 0; i < in; ++i) gx[n * in + i] += go * w[o * in + i];
        }
      }
    }
    if (w.requires_grad()) {
      auto gw = w.ensure_grad();
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t o = 0; o < outd; ++o) {
          const Real go = g[n * outd + o];
          for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += go * x[n * in + i];
        }
      }
    }
    if (b.defined() && b.requires_grad()) {
      auto gb = b.ensure_grad();
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t o = 0; o < outd; ++o) gb[o] += g[n * outd + o];
      }
    }
  });
  return out;
}

/// Concatenates (N, Ca, H, W) and (N, Cb, H, W) along channels.
template <class Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b) {
  constexpr std::string_view kName = "concat_channels";
  detail::require_rank(kName, a, 4, "first input");
  detail::require_rank(kName, b, 4, "second input");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    detail::mismatch(kName, "shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                                " differ outside the channel axis");
  }
  const std::size_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), P = a.dim(2) * a.dim(3);
  Tensor<Real> out({N, Ca + Cb, a.dim(2), a.dim(3)});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(a.data() + n * Ca * P, Ca * P, out.data() + n * (Ca + Cb) * P);
    std::copy_n(b.data() + n * Cb * P, Cb * P, out.data() + (n * (Ca + Cb) + Ca) * P);
  }
  detail::record<Real>(kName, {a, b}, out, [N, Ca, Cb, P](typename Tape<Real>::Op& op) {
    auto g = op.output.grad();
    if (op.inputs[0].requires_grad()) {
      auto ga = op.inputs[0].ensure_grad();
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t i = 0; i < Ca * P; ++i) ga[n * Ca * P + i] += g[n * (Ca + Cb) * P + i];
      }
    }
    if (op.inputs[1].requires_grad()) {
      auto gb = op.inputs[1].ensure_grad();
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t i = 0; i < Cb * P; ++i) gb[n * Cb * P + i] += g[(n * (Ca + Cb) + Ca) * P + i];
      }
    }
  });
  return out;
}

/// Channels [begin, end) of (N, C, H, W).
template <class Real>
Tensor<Real> slice_channels(const Tensor<Real>& x, std::size_t begin, std::size_t end) {
  constexpr std::string_view kName = "slice_channels";
  detail::require_rank(kName, x, 4, "input");
  if (begin >= end || end > x.dim(1)) {
    detail::mismatch(kName, "range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                ") invalid for " + std::to_string(x.dim(1)) + " channels");
  }
  const std::size_t N = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3), Co = end - begin;
  Tensor<Real> out({N, Co, x.dim(2), x.dim(3)});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(x.data() + (n * C + begin) * P, Co * P, out.data() + n * Co * P);
  }
  detail::record<Real>(kName, {x}, out, [N, C, P, Co, begin](typename Tape<Real>::Op& op) {
    auto g = op.output.grad();
    auto gx = op.inputs[0].ensure_grad();
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t i = 0; i < Co * P; ++i) gx[(n * C + begin) * P + i] += g[n * Co * P + i];
    }
  });
  return out;
}

/// Mean of all elements, as a scalar tensor of shape [1].
template <class Real>
Tensor<Real> mean(const Tensor<Real>& x) {
  Real s = 0;
  for (Real v : x.values()) s += v;
  const Real inv = Real(1) / static_cast<Real>(x.numel());
  Tensor<Real> out({1}, s * inv);
  detail::record<Real>("mean", {x}, out, [inv](typename Tape<Real>::Op& op) {
    const Real g = op.output.grad()[0] * inv;
    for (Real& v : op.inputs[0].ensure_grad()) v += g;
  });
  return out;
}

/// Sum of squared differences, as a scalar tensor of shape [1].
template <class Real>
Tensor<Real> squared_error(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) {
    detail::mismatch("squared_error", "operand shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                                          " differ");
  }
  Real s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const Real d = a[i] - b[i];
    s += d * d;
  }
  Tensor<Real> out({1}, s);
  detail::record<Real>("squared_error", {a, b}, out, [](typename Tape<Real>::Op& op) {
    const Real g = op.output.grad()[0];
    Tensor<Real>& a = op.inputs[0];
    Tensor<Real>& b = op.inputs[1];
    if (a.requires_grad()) {
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += Real(2) * g * (a[i] - b[i]);
    }
    if (b.requires_grad()) {
      auto gb = b.ensure_grad();
      for (std::size_t i = 0; i < a.numel(); ++i) gb[i] -= Real(2) * g * (a[i] - b[i]);
    }
  });
  return out;
}

/// Repeats channels of x cyclically until `channels` are present, truncating the last cycle.
template <class Real>
Tensor<Real> repeat_channels(const Tensor<Real>& x, std::size_t channels) {
  const std::size_t c = x.dim(1);
  if (channels == c) return x;
  Tensor<Real> out = slice_channels(x, 0, std::min(c, channels));
  while (out.dim(1) < channels) {
    const std::size_t take = std::min(c, channels - out.dim(1));
    out = concat_channels(out, take == c ? x : slice_channels(x, 0, take));
  }
  return out;
}

}  // namespace skipstep::ops
