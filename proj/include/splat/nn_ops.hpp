#pragma once

#include <cmath>
#include <cstddef>

#include "splat/tensor.hpp"

namespace splat {

// Cross-correlation (no kernel flip), zero padding. Input (Cin,H,W), weight
// (Cout,Cin,k,k), optional bias (Cout). Accumulation order per output is the
// fixed (ci,ky,kx) nesting below.
inline DTensor conv2d(const DTensor& input, const DTensor& weight, const DTensor* bias,
                      int stride = 1, int padding = 0) {
  if (input.ndim() != 3) throw DimensionError("conv2d: input must be (C,H,W)");
  if (weight.ndim() != 4) throw DimensionError("conv2d: weight must be (Cout,Cin,k,k)");
  const int c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int c_out = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != c_in)
    throw DimensionError("conv2d: weight Cin does not match input channels");
  if (weight.dim(3) != k || (k % 2) == 0)
    throw DimensionError("conv2d: kernel must be square with odd size");
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (!input.all_finite()) throw NumericError("conv2d: non-finite input");
  const int oh = (h + 2 * padding - k) / stride + 1;
  const int ow = (w + 2 * padding - k) / stride + 1;
  if (oh <= 0 || ow <= 0) throw DimensionError("conv2d: empty output");
  if (bias && (bias->ndim() != 1 || bias->dim(0) != c_out))
    throw DimensionError("conv2d: bias shape mismatch");

  DTensor out = DTensor::zeros({c_out, oh, ow});
  for (int co = 0; co < c_out; ++co) {
    float* oplane = out.data() + static_cast<std::size_t>(co) * oh * ow;
    if (bias) {
      const float b = (*bias)[static_cast<std::size_t>(co)];
      for (int i = 0; i < oh * ow; ++i) oplane[i] = b;
    }
    for (int ci = 0; ci < c_in; ++ci) {
      const float* iplane = input.data() + static_cast<std::size_t>(ci) * h * w;
      const float* kplane =
          weight.data() + (static_cast<std::size_t>(co) * c_in + ci) * k * k;
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const float wv = kplane[ky * k + kx];
          if (wv == 0.0f) continue;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= h) continue;
            const float* irow = iplane + static_cast<std::size_t>(iy) * w;
            float* orow = oplane + static_cast<std::size_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - padding + kx;
              if (ix < 0 || ix >= w) continue;
              orow[ox] += wv * irow[ix];
            }
          }
        }
    }
  }

  auto ip = input.impl(), wp = weight.impl(), op = out.impl();
  auto bp = bias ? bias->impl() : std::shared_ptr<detail::TensorImpl>();
  const bool any_rg =
      input.requires_grad() || weight.requires_grad() || (bias && bias->requires_grad());
  detail::maybe_record(out, any_rg, [ip, wp, bp, op, stride, padding] {
    auto* g = detail::grad_of(op);
    if (!g) return;
    const int c_in = ip->shape[0], h = ip->shape[1], w = ip->shape[2];
    const int c_out = wp->shape[0], k = wp->shape[2];
    const int oh = op->shape[1], ow = op->shape[2];
    if (ip->requires_grad) ip->ensure_grad();
    if (wp->requires_grad) wp->ensure_grad();
    if (bp && bp->requires_grad) bp->ensure_grad();
    for (int co = 0; co < c_out; ++co) {
      const float* gplane = g->data() + static_cast<std::size_t>(co) * oh * ow;
      if (bp && bp->requires_grad) {
        float s = 0;
        for (int i = 0; i < oh * ow; ++i) s += gplane[i];
        bp->grad[static_cast<std::size_t>(co)] += s;
      }
      for (int ci = 0; ci < c_in; ++ci) {
        const float* iplane = ip->data.data() + static_cast<std::size_t>(ci) * h * w;
        const std::size_t kbase = (static_cast<std::size_t>(co) * c_in + ci) * k * k;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const float wv = wp->data[kbase + ky * k + kx];
            float wsum = 0;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * stride - padding + ky;
              if (iy < 0 || iy >= h) continue;
              const float* grow = gplane + static_cast<std::size_t>(oy) * ow;
              const float* irow = iplane + static_cast<std::size_t>(iy) * w;
              float* girow = ip->requires_grad
                                 ? ip->grad.data() + (static_cast<std::size_t>(ci) * h + iy) * w
                                 : nullptr;
              for (int ox = 0; ox < ow; ++ox) {
                const int ix = ox * stride - padding + kx;
                if (ix < 0 || ix >= w) continue;
                if (girow) girow[ix] += wv * grow[ox];
                wsum += grow[ox] * irow[ix];
              }
            }
            if (wp->requires_grad) wp->grad[kbase + ky * k + kx] += wsum;
          }
      }
    }
  });
  return out;
}

inline DTensor conv2d(const DTensor& input, const DTensor& weight, const DTensor& bias,
                      int stride = 1, int padding = 0) {
  return conv2d(input, weight, &bias, stride, padding);
}

inline DTensor conv2d(const DTensor& input, const DTensor& weight, int stride = 1,
                      int padding = 0) {
  return conv2d(input, weight, nullptr, stride, padding);
}

// Transposed convolution restricted to kernel size == stride: every input
// pixel scatters one disjoint SxS output block, so blocks tile the output
// exactly once. Weight layout (Cin,Cout,S,S).
inline DTensor transposed_conv2d(const DTensor& input, const DTensor& weight, int stride) {
  if (input.ndim() != 3) throw DimensionError("transposed_conv2d: input must be (C,H,W)");
  if (weight.ndim() != 4)
    throw DimensionError("transposed_conv2d: weight must be (Cin,Cout,S,S)");
  const int c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int c_out = weight.dim(1), s = weight.dim(2);
  if (weight.dim(0) != c_in)
    throw DimensionError("transposed_conv2d: weight Cin does not match input");
  if (weight.dim(3) != s) throw DimensionError("transposed_conv2d: kernel must be square");
  if (s != stride)
    throw ConfigError("transposed_conv2d: kernel size must equal stride (non-overlapping blocks)");
  const int oh = h * s, ow = w * s;
  DTensor out = DTensor::zeros({c_out, oh, ow});
  for (int ci = 0; ci < c_in; ++ci) {
    const float* iplane = input.data() + static_cast<std::size_t>(ci) * h * w;
    for (int co = 0; co < c_out; ++co) {
      const float* kplane =
          weight.data() + (static_cast<std::size_t>(ci) * c_out + co) * s * s;
      float* oplane = out.data() + static_cast<std::size_t>(co) * oh * ow;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const float v = iplane[y * w + x];
          if (v == 0.0f) continue;
          for (int sy = 0; sy < s; ++sy) {
            float* orow = oplane + static_cast<std::size_t>(y * s + sy) * ow + x * s;
            const float* krow = kplane + sy * s;
            for (int sx = 0; sx < s; ++sx) orow[sx] += v * krow[sx];
          }
        }
    }
  }
  auto ip = input.impl(), wp = weight.impl(), op = out.impl();
  detail::maybe_record(out, input.requires_grad() || weight.requires_grad(),
                       [ip, wp, op, s] {
    auto* g = detail::grad_of(op);
    if (!g) return;
    const int c_in = ip->shape[0], h = ip->shape[1], w = ip->shape[2];
    const int c_out = wp->shape[1];
    const int ow = op->shape[2];
    if (ip->requires_grad) ip->ensure_grad();
    if (wp->requires_grad) wp->ensure_grad();
    for (int ci = 0; ci < c_in; ++ci)
      for (int co = 0; co < c_out; ++co) {
        const std::size_t kbase = (static_cast<std::size_t>(ci) * c_out + co) * s * s;
        const float* gplane = g->data() + static_cast<std::size_t>(co) * op->shape[1] * ow;
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const float v = ip->data[(static_cast<std::size_t>(ci) * h + y) * w + x];
            float gsum = 0;
            for (int sy = 0; sy < s; ++sy) {
              const float* grow = gplane + static_cast<std::size_t>(y * s + sy) * ow + x * s;
              for (int sx = 0; sx < s; ++sx) {
                const float wv = wp->data[kbase + sy * s + sx];
                gsum += wv * grow[sx];
                if (wp->requires_grad) wp->grad[kbase + sy * s + sx] += v * grow[sx];
              }
            }
            if (ip->requires_grad)
              ip->grad[(static_cast<std::size_t>(ci) * h + y) * w + x] += gsum;
          }
      }
  });
  return out;
}

// Channel-to-space rearrangement: (C*S^2,H,W) -> (C,S*H,S*W). Channel k of
// group c lands at block offset (k/S, k%S); bijective on elements.
inline DTensor pixel_shuffle(const DTensor& input, int s) {
  if (input.ndim() != 3) throw DimensionError("pixel_shuffle: input must be (C,H,W)");
  const int c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (c_in % (s * s) != 0)
    throw DimensionError("pixel_shuffle: channels not divisible by S^2");
  const int c = c_in / (s * s);
  DTensor out = DTensor::zeros({c, h * s, w * s});
  const int oh = h * s, ow = w * s;
  for (int co = 0; co < c; ++co)
    for (int sy = 0; sy < s; ++sy)
      for (int sx = 0; sx < s; ++sx) {
        const float* iplane =
            input.data() + (static_cast<std::size_t>(co) * s * s + sy * s + sx) * h * w;
        for (int y = 0; y < h; ++y) {
          float* orow =
              out.data() + (static_cast<std::size_t>(co) * oh + y * s + sy) * ow + sx;
          const float* irow = iplane + static_cast<std::size_t>(y) * w;
          for (int x = 0; x < w; ++x) orow[x * s] = irow[x];
        }
      }
  auto ip = input.impl(), op = out.impl();
  detail::maybe_record(out, input.requires_grad(), [ip, op, s] {
    auto* g = detail::grad_of(op);
    if (!g || !ip->requires_grad) return;
    ip->ensure_grad();
    const int c_in = ip->shape[0], h = ip->shape[1], w = ip->shape[2];
    const int c = c_in / (s * s);
    const int oh = h * s, ow = w * s;
    for (int co = 0; co < c; ++co)
      for (int sy = 0; sy < s; ++sy)
        for (int sx = 0; sx < s; ++sx) {
          float* gplane =
              ip->grad.data() + (static_cast<std::size_t>(co) * s * s + sy * s + sx) * h * w;
          for (int y = 0; y < h; ++y) {
            const float* grow =
                g->data() + (static_cast<std::size_t>(co) * oh + y * s + sy) * ow + sx;
            for (int x = 0; x < w; ++x) gplane[y * w + x] += grow[x * s];
          }
        }
  });
  return out;
}

// Inverse of pixel_shuffle: (C,S*H,S*W) -> (C*S^2,H,W).
inline DTensor pixel_unshuffle(const DTensor& input, int s) {
  if (input.ndim() != 3) throw DimensionError("pixel_unshuffle: input must be (C,H,W)");
  const int c = input.dim(0), ih = input.dim(1), iw = input.dim(2);
  if (ih % s != 0 || iw % s != 0)
    throw DimensionError("pixel_unshuffle: extents not divisible by S");
  const int h = ih / s, w = iw / s;
  DTensor out = DTensor::zeros({c * s * s, h, w});
  for (int co = 0; co < c; ++co)
    for (int sy = 0; sy < s; ++sy)
      for (int sx = 0; sx < s; ++sx) {
        float* oplane =
            out.data() + (static_cast<std::size_t>(co) * s * s + sy * s + sx) * h * w;
        for (int y = 0; y < h; ++y) {
          const float* irow =
              input.data() + (static_cast<std::size_t>(co) * ih + y * s + sy) * iw + sx;
          for (int x = 0; x < w; ++x) oplane[y * w + x] = irow[x * s];
        }
      }
  auto ip = input.impl(), op = out.impl();
  detail::maybe_record(out, input.requires_grad(), [ip, op, s] {
    auto* g = detail::grad_of(op);
    if (!g || !ip->requires_grad) return;
    ip->ensure_grad();
    const int c = ip->shape[0], ih = ip->shape[1], iw = ip->shape[2];
    const int h = ih / s, w = iw / s;
    for (int co = 0; co < c; ++co)
      for (int sy = 0; sy < s; ++sy)
        for (int sx = 0; sx < s; ++sx) {
          const float* gplane =
              g->data() + (static_cast<std::size_t>(co) * s * s + sy * s + sx) * h * w;
          for (int y = 0; y < h; ++y) {
            float* grow =
                ip->grad.data() + (static_cast<std::size_t>(co) * ih + y * s + sy) * iw + sx;
            for (int x = 0; x < w; ++x) grow[x * s] += gplane[y * w + x];
          }
        }
  });
  return out;
}

namespace detail {
// Shared 2x2 window walk for the pooling ops. Odd extents replicate the
// border (reads clamp to the last row/column).
template <class Fn>
inline void for_each_pool_window(int h, int w, Fn&& fn) {
  const int oh = (h + 1) / 2, ow = (w + 1) / 2;
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      const int y0 = 2 * oy, x0 = 2 * ox;
      const int y1 = y0 + 1 < h ? y0 + 1 : h - 1;
      const int x1 = x0 + 1 < w ? x0 + 1 : w - 1;
      fn(oy, ox, y0, x0, y1, x1);
    }
}
}  // namespace detail

// 2x2 max pooling, ceil semantics. Backward routes the whole gradient to the
// argmax source; ties resolve to the first window element in row-major order.
inline DTensor max_pool2(const DTensor& input) {
  if (input.ndim() != 3) throw DimensionError("max_pool2: input must be (C,H,W)");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int oh = (h + 1) / 2, ow = (w + 1) / 2;
  DTensor out = DTensor::zeros({c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::int32_t>>(
      static_cast<std::size_t>(c) * oh * ow);
  for (int ch = 0; ch < c; ++ch) {
    const float* p = input.data() + static_cast<std::size_t>(ch) * h * w;
    float* o = out.data() + static_cast<std::size_t>(ch) * oh * ow;
    std::int32_t* am = argmax->data() + static_cast<std::size_t>(ch) * oh * ow;
    detail::for_each_pool_window(h, w, [&](int oy, int ox, int y0, int x0, int y1, int x1) {
      const int idx[4] = {y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1};
      int best = idx[0];
      float bv = p[idx[0]];
      for (int i = 1; i < 4; ++i)
        if (p[idx[i]] > bv) {
          bv = p[idx[i]];
          best = idx[i];
        }
      o[oy * ow + ox] = bv;
      am[oy * ow + ox] = best;
    });
  }
  auto ip = input.impl(), op = out.impl();
  detail::maybe_record(out, input.requires_grad(), [ip, op, argmax] {
    auto* g = detail::grad_of(op);
    if (!g || !ip->requires_grad) return;
    ip->ensure_grad();
    const int c = ip->shape[0], h = ip->shape[1], w = ip->shape[2];
    const std::size_t ohw = g->size() / c;
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < ohw; ++i)
        ip->grad[static_cast<std::size_t>(ch) * h * w +
                 (*argmax)[static_cast<std::size_t>(ch) * ohw + i]] +=
            (*g)[static_cast<std::size_t>(ch) * ohw + i];
  });
  return out;
}

// 2x2 average pooling with the same ceil/replicate semantics as max_pool2.
inline DTensor avg_pool2(const DTensor& input) {
  if (input.ndim() != 3) throw DimensionError("avg_pool2: input must be (C,H,W)");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int oh = (h + 1) / 2, ow = (w + 1) / 2;
  DTensor out = DTensor::zeros({c, oh, ow});
  for (int ch = 0; ch < c; ++ch) {
    const float* p = input.data() + static_cast<std::size_t>(ch) * h * w;
    float* o = out.data() + static_cast<std::size_t>(ch) * oh * ow;
    detail::for_each_pool_window(h, w, [&](int oy, int ox, int y0, int x0, int y1, int x1) {
      o[oy * ow + ox] =
          0.25f * (p[y0 * w + x0] + p[y0 * w + x1] + p[y1 * w + x0] + p[y1 * w + x1]);
    });
  }
  auto ip = input.impl(), op = out.impl();
  detail::maybe_record(out, input.requires_grad(), [ip, op] {
    auto* g = detail::grad_of(op);
    if (!g || !ip->requires_grad) return;
    ip->ensure_grad();
    const int c = ip->shape[0], h = ip->shape[1], w = ip->shape[2];
    const int oh = (h + 1) / 2, ow = (w + 1) / 2;
    for (int ch = 0; ch < c; ++ch) {
      float* gi = ip->grad.data() + static_cast<std::size_t>(ch) * h * w;
      const float* go = g->data() + static_cast<std::size_t>(ch) * oh * ow;
      detail::for_each_pool_window(h, w, [&](int oy, int ox, int y0, int x0, int y1, int x1) {
        const float v = 0.25f * go[oy * ow + ox];
        gi[y0 * w + x0] += v;
        gi[y0 * w + x1] += v;
        gi[y1 * w + x0] += v;
        gi[y1 * w + x1] += v;
      });
    }
  });
  return out;
}

}  // namespace splat
