#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <thread>
#include <vector>

#include "splat/camera.hpp"
#include "splat/tensor.hpp"

namespace splat {

// Per-pixel displacement from the source camera's grid toward a destination
// time step. Invalid pixels (background depth, reprojection off-frame or
// behind the destination near plane) carry V = 0.
struct MotionField {
  DTensor vectors;              // 2,H,W (vx, vy) in pixels
  std::vector<std::uint8_t> valid;  // H*W
  int width = 0, height = 0;

  bool is_valid(int y, int x) const {
    return valid[static_cast<std::size_t>(y) * width + x] != 0;
  }
};

// Result of scatter-warping a payload: the warped buffer, a hole mask for
// destination pixels no source reached, the winning source z per pixel and
// the destination->source index map that realized the warp.
struct WarpResult {
  DTensor payload;                    // C,H',W'
  std::vector<std::uint8_t> hole_mask;  // H'*W', 1 = hole
  std::vector<float> zbuf;            // winning camera z, +inf at holes
  std::vector<std::int32_t> dst_to_src;  // -1 at holes
  int width = 0, height = 0;
};

inline DTensor mask_to_tensor(const std::vector<std::uint8_t>& mask, int h, int w) {
  DTensor t = DTensor::zeros({1, h, w});
  for (std::size_t i = 0; i < mask.size(); ++i) t[i] = mask[i] ? 1.0f : 0.0f;
  return t;
}

// V[x] = Proj(UnProj(x, src), dst) - x on the shared pixel grid. Both cameras
// must have the field's resolution (scale intrinsics down beforehand for
// low-resolution buffers).
inline MotionField motion_field(const Camera& src_cam, const Camera& dst_cam,
                                const DTensor& src_depth) {
  if (src_depth.ndim() != 3 || src_depth.dim(0) != 1)
    throw DimensionError("motion_field: depth must be (1,H,W)");
  const int h = src_depth.dim(1), w = src_depth.dim(2);
  if (src_cam.width != w || src_cam.height != h || dst_cam.width != w ||
      dst_cam.height != h)
    throw ContractError("motion_field: cameras must match the depth resolution");
  MotionField f;
  f.width = w;
  f.height = h;
  f.vectors = DTensor::zeros({2, h, w});
  f.valid.assign(static_cast<std::size_t>(h) * w, 0);
  const float background = src_cam.far_clip * (1.0f - 1e-4f);
  float* vx = f.vectors.data();
  float* vy = f.vectors.data() + static_cast<std::size_t>(h) * w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const float z = src_depth[i];
      if (z >= background) continue;
      const float u = static_cast<float>(x) + 0.5f;
      const float v = static_cast<float>(y) + 0.5f;
      const Vec3 world = src_cam.to_world(src_cam.unproject(u, v, z));
      const Vec3 q = dst_cam.to_camera(world);
      if (q.z <= dst_cam.near_clip) continue;
      float du, dv;
      dst_cam.project(q, du, dv);
      if (du < 0.0f || du >= static_cast<float>(w) || dv < 0.0f ||
          dv >= static_cast<float>(h))
        continue;
      vx[i] = du - u;
      vy[i] = dv - v;
      f.valid[i] = 1;
    }
  return f;
}

namespace detail {
// Packs (z, source index) so that the numerically smaller key is the warp
// winner: lower z first, lower row-major index on equal z. Non-negative z
// floats compare correctly through their bit pattern.
inline std::uint64_t warp_key(float z, std::int32_t src) {
  std::uint32_t zb;
  static_assert(sizeof(zb) == sizeof(z));
  std::memcpy(&zb, &z, sizeof(z));
  return (static_cast<std::uint64_t>(zb) << 32) | static_cast<std::uint32_t>(src);
}
}  // namespace detail

// Scatter warp: each valid source pixel lands on round(x + V[x]); conflicts
// resolve to the nearest camera z, ties to the lower source index. The
// payload gather runs through gather_pixels, so it stays differentiable when
// the payload tracks gradients.
inline WarpResult forward_warp(const DTensor& payload, const DTensor& depth,
                               const MotionField& field, int out_h = 0, int out_w = 0,
                               bool parallel = false) {
  if (payload.ndim() != 3) throw DimensionError("forward_warp: payload must be (C,H,W)");
  const int h = payload.dim(1), w = payload.dim(2);
  if (depth.ndim() != 3 || depth.dim(1) != h || depth.dim(2) != w)
    throw DimensionError("forward_warp: depth resolution mismatch");
  if (field.width != w || field.height != h)
    throw DimensionError("forward_warp: field resolution mismatch");
  if (out_h <= 0) out_h = h;
  if (out_w <= 0) out_w = w;

  const std::size_t out_n = static_cast<std::size_t>(out_h) * out_w;
  const float* vx = field.vectors.data();
  const float* vy = field.vectors.data() + static_cast<std::size_t>(h) * w;
  constexpr std::uint64_t kEmpty = ~std::uint64_t{0};

  std::vector<std::uint64_t> keys(out_n, kEmpty);
  auto scatter_range = [&](int y_begin, int y_end, auto&& write_min) {
    for (int y = y_begin; y < y_end; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        if (!field.valid[i]) continue;
        const int dx = static_cast<int>(std::lround(static_cast<float>(x) + vx[i]));
        const int dy = static_cast<int>(std::lround(static_cast<float>(y) + vy[i]));
        if (dx < 0 || dx >= out_w || dy < 0 || dy >= out_h) continue;
        const std::size_t di = static_cast<std::size_t>(dy) * out_w + dx;
        write_min(di, detail::warp_key(depth[i], static_cast<std::int32_t>(i)));
      }
  };

  if (!parallel) {
    scatter_range(0, h, [&](std::size_t di, std::uint64_t key) {
      if (key < keys[di]) keys[di] = key;
    });
  } else {
    std::vector<std::atomic<std::uint64_t>> akeys(out_n);
    for (auto& a : akeys) a.store(kEmpty, std::memory_order_relaxed);
    int n_threads = static_cast<int>(std::thread::hardware_concurrency());
    if (n_threads < 1) n_threads = 1;
    std::vector<std::thread> pool;
    const int rows_per = (h + n_threads - 1) / n_threads;
    for (int t = 0; t < n_threads; ++t) {
      const int yb = t * rows_per, ye = std::min(h, yb + rows_per);
      if (yb >= ye) break;
      pool.emplace_back([&, yb, ye] {
        scatter_range(yb, ye, [&](std::size_t di, std::uint64_t key) {
          std::uint64_t cur = akeys[di].load(std::memory_order_relaxed);
          while (key < cur &&
                 !akeys[di].compare_exchange_weak(cur, key, std::memory_order_relaxed)) {
          }
        });
      });
    }
    for (auto& th : pool) th.join();
    for (std::size_t i = 0; i < out_n; ++i) keys[i] = akeys[i].load(std::memory_order_relaxed);
  }

  WarpResult r;
  r.width = out_w;
  r.height = out_h;
  r.hole_mask.assign(out_n, 1);
  r.zbuf.assign(out_n, std::numeric_limits<float>::infinity());
  r.dst_to_src.assign(out_n, -1);
  for (std::size_t i = 0; i < out_n; ++i) {
    if (keys[i] == kEmpty) continue;
    r.hole_mask[i] = 0;
    r.dst_to_src[i] = static_cast<std::int32_t>(keys[i] & 0xffffffffu);
    const std::uint32_t zb = static_cast<std::uint32_t>(keys[i] >> 32);
    float z;
    std::memcpy(&z, &zb, sizeof(z));
    r.zbuf[i] = z;
  }
  r.payload = gather_pixels(payload, r.dst_to_src, out_h, out_w);
  return r;
}

// Warps a 6-channel gradient stack (dI/dx rgb, dI/dy rgb) and corrects each
// (gx,gy) pair by the inverse-transpose Jacobian of the full pixel mapping
// x -> x + V. The Jacobian comes from central differences of the dense field
// at the winning source pixel (one-sided at borders/invalid neighbors).
// Near-singular pixels (|det| < 1e-3, foldover) are zeroed and flagged as
// holes.
inline WarpResult warp_gradients(const DTensor& grads, const DTensor& depth,
                                 const MotionField& field) {
  if (grads.ndim() != 3 || grads.dim(0) != 6)
    throw DimensionError("warp_gradients: expected a (6,H,W) gradient stack");
  if (grads.requires_grad())
    throw ContractError("warp_gradients: gradient maps are fixed inputs, not differentiable");
  WarpResult r = forward_warp(grads, depth, field);
  const int h = field.height, w = field.width;
  const float* vx = field.vectors.data();
  const float* vy = field.vectors.data() + static_cast<std::size_t>(h) * w;

  auto diff = [&](const float* v, int y, int x, bool along_x) -> float {
    // derivative of field component v at (y,x); uses valid neighbors only
    const int ym = along_x ? y : y - 1, yp = along_x ? y : y + 1;
    const int xm = along_x ? x - 1 : x, xp = along_x ? x + 1 : x;
    const bool has_m = ym >= 0 && xm >= 0 && field.is_valid(ym, xm);
    const bool has_p = yp < h && xp < w && field.is_valid(yp, xp);
    const std::size_t i = static_cast<std::size_t>(y) * w + x;
    const std::size_t im = static_cast<std::size_t>(ym < 0 ? 0 : ym) * w + (xm < 0 ? 0 : xm);
    const std::size_t ip =
        static_cast<std::size_t>(yp >= h ? h - 1 : yp) * w + (xp >= w ? w - 1 : xp);
    if (has_m && has_p) return 0.5f * (v[ip] - v[im]);
    if (has_p) return v[ip] - v[i];
    if (has_m) return v[i] - v[im];
    return 0.0f;
  };

  const std::size_t out_n = static_cast<std::size_t>(r.height) * r.width;
  const std::size_t hw = out_n;  // grads warped at the field resolution
  float* p = r.payload.data();
  for (std::size_t di = 0; di < out_n; ++di) {
    const std::int32_t s = r.dst_to_src[di];
    if (s < 0) continue;
    const int sy = static_cast<int>(s) / w;
    const int sx = static_cast<int>(s) % w;
    const float a = 1.0f + diff(vx, sy, sx, true);   // d(x+Vx)/dx
    const float b = diff(vx, sy, sx, false);         // d(x+Vx)/dy
    const float c = diff(vy, sy, sx, true);          // d(y+Vy)/dx
    const float d = 1.0f + diff(vy, sy, sx, false);  // d(y+Vy)/dy
    const float det = a * d - b * c;
    if (std::fabs(det) < 1e-3f) {
      for (int ch = 0; ch < 6; ++ch) p[ch * hw + di] = 0.0f;
      r.hole_mask[di] = 1;
      r.dst_to_src[di] = -1;
      r.zbuf[di] = std::numeric_limits<float>::infinity();
      continue;
    }
    const float inv = 1.0f / det;
    for (int ch = 0; ch < 3; ++ch) {
      const float gx = p[ch * hw + di];
      const float gy = p[(3 + ch) * hw + di];
      p[ch * hw + di] = (d * gx - c * gy) * inv;
      p[(3 + ch) * hw + di] = (-b * gx + a * gy) * inv;
    }
  }
  return r;
}

}  // namespace splat
