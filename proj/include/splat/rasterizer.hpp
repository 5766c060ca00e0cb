#pragma once

#include <algorithm>
#include <atomic>
#include <cassert>
#include <cmath>
#include <mutex>
#include <thread>
#include <vector>

#include "splat/camera.hpp"
#include "splat/scene.hpp"
#include "splat/sh.hpp"
#include "splat/tensor.hpp"

namespace splat {

// One Gaussian after projection to the image plane. cov2d already includes
// the low-pass dilation; inv_cov2d is its exact inverse.
struct ProjectedGaussian {
  float mean_x = 0, mean_y = 0;        // continuous pixel coords
  float cov_a = 0, cov_b = 0, cov_c = 0;  // [[a,b],[b,c]]
  float icov_a = 0, icov_b = 0, icov_c = 0;
  float depth = 0;                     // camera-space z
  Vec3 color;                          // SH-evaluated, clamped to [0,1]
  float opacity = 0;
  float radius = 0;                    // 3 sigma of the major axis, pixels
  Vec3 normal_world;                   // minor-axis normal, faces the camera
};

struct ProjectStats {
  int culled_near = 0;
  int culled_frustum = 0;
  int skipped_degenerate = 0;
};

struct RenderOptions {
  bool clamp_alpha = true;       // cap per-splat alpha at 0.99
  float alpha_skip = 1.0f / 255.0f;
  float transmittance_stop = 1e-4f;
  float cov_low_pass = 0.3f;     // added to the cov2d diagonal, pixels^2
  int tile = 16;
  bool parallel = false;
  int threads = 0;               // 0 = hardware concurrency
};

// Per-frame G-buffer set. Where nothing was splatted: color/grads/normal/nv
// zero, alpha 0, depth = far.
struct FrameBundle {
  DTensor color;    // 3,H,W in [0,1]
  DTensor grad_x;   // 3,H,W  d(color)/dx, intensity per pixel
  DTensor grad_y;   // 3,H,W
  DTensor depth;    // 1,H,W camera z, background = far
  DTensor normal;   // 3,H,W unit or zero
  DTensor nv;       // 1,H,W normal . view in [-1,1]
  DTensor alpha;    // 1,H,W accumulated opacity
  Camera camera;

  int height() const { return color.dim(1); }
  int width() const { return color.dim(2); }
};

// Global accounting of render() invocations so the harness can prove which
// resolutions were rasterized inside a timed region.
class RenderCallLog {
 public:
  static RenderCallLog& instance() {
    static RenderCallLog log;
    return log;
  }
  void record(int w, int h) {
    std::lock_guard<std::mutex> lk(mu_);
    calls_.push_back({w, h});
  }
  void reset() {
    std::lock_guard<std::mutex> lk(mu_);
    calls_.clear();
  }
  int count_with_min_pixels(long pixels) const {
    std::lock_guard<std::mutex> lk(mu_);
    int n = 0;
    for (auto& c : calls_)
      if (static_cast<long>(c.first) * c.second >= pixels) ++n;
    return n;
  }
  int total() const {
    std::lock_guard<std::mutex> lk(mu_);
    return static_cast<int>(calls_.size());
  }

 private:
  mutable std::mutex mu_;
  std::vector<std::pair<int, int>> calls_;
};

// Projects, culls and depth-sorts the scene for one camera. World covariance
// R S S^T R^T is pushed through the camera rotation and the perspective
// Jacobian, then dilated on the diagonal.
inline std::vector<ProjectedGaussian> project(const GaussianScene& scene,
                                              const Camera& cam,
                                              const RenderOptions& opt = {},
                                              ProjectStats* stats = nullptr) {
  cam.validate();
  std::vector<ProjectedGaussian> out;
  out.reserve(static_cast<std::size_t>(scene.count));
  ProjectStats local;
  const Vec3 cam_center = cam.center();
  for (int i = 0; i < scene.count; ++i) {
    const Vec3 p_cam = cam.to_camera(scene.centers[i]);
    if (p_cam.z <= cam.near_clip) {
      ++local.culled_near;
      continue;
    }
    const Mat3 r = scene.rotations[i].to_mat3();
    const Vec3 s = scene.scale(i);
    // M = R * diag(s); Sigma = M M^T
    Mat3 m = r;
    for (int row = 0; row < 3; ++row) {
      m(row, 0) *= s.x;
      m(row, 1) *= s.y;
      m(row, 2) *= s.z;
    }
    Mat3 sigma;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        sigma(a, b) = m(a, 0) * m(b, 0) + m(a, 1) * m(b, 1) + m(a, 2) * m(b, 2);
    const Mat3 sig_cam_full = cam.rotation * sigma * cam.rotation.transposed();

    const float z = p_cam.z;
    const float jxx = cam.fx / z, jxz = -cam.fx * p_cam.x / (z * z);
    const float jyy = cam.fy / z, jyz = -cam.fy * p_cam.y / (z * z);
    // cov2d = J Sigma_cam J^T, J = [[jxx,0,jxz],[0,jyy,jyz]]
    const float sxx = sig_cam_full(0, 0), sxy = sig_cam_full(0, 1),
                sxz = sig_cam_full(0, 2), syy = sig_cam_full(1, 1),
                syz = sig_cam_full(1, 2), szz = sig_cam_full(2, 2);
    float cov_a = jxx * (jxx * sxx + jxz * sxz) + jxz * (jxx * sxz + jxz * szz);
    float cov_b = jxx * (jyy * sxy + jyz * sxz) + jxz * (jyy * syz + jyz * szz);
    float cov_c = jyy * (jyy * syy + jyz * syz) + jyz * (jyy * syz + jyz * szz);
    cov_a += opt.cov_low_pass;
    cov_c += opt.cov_low_pass;

    const float det = cov_a * cov_c - cov_b * cov_b;
    if (!(det > 0.0f) || !std::isfinite(det) || cov_a <= 0.0f || cov_c <= 0.0f) {
      ++local.skipped_degenerate;
      continue;
    }
    const float mid = 0.5f * (cov_a + cov_c);
    const float disc = std::sqrt(std::max(mid * mid - det, 0.0f));
    const float lambda_max = mid + disc;
    const float radius = 3.0f * std::sqrt(lambda_max);

    ProjectedGaussian pg;
    cam.project(p_cam, pg.mean_x, pg.mean_y);
    if (pg.mean_x < -radius || pg.mean_x > static_cast<float>(cam.width) + radius ||
        pg.mean_y < -radius || pg.mean_y > static_cast<float>(cam.height) + radius) {
      ++local.culled_frustum;
      continue;
    }
    pg.cov_a = cov_a;
    pg.cov_b = cov_b;
    pg.cov_c = cov_c;
    const float inv_det = 1.0f / det;
    pg.icov_a = cov_c * inv_det;
    pg.icov_b = -cov_b * inv_det;
    pg.icov_c = cov_a * inv_det;
    pg.depth = z;
    pg.radius = radius;
    pg.opacity = scene.opacity(i);

    const Vec3 dir = normalized(scene.centers[i] - cam_center);
    Vec3 col = eval_sh(scene.sh_of(i), scene.sh_basis, dir);
    col.x = std::clamp(col.x, 0.0f, 1.0f);
    col.y = std::clamp(col.y, 0.0f, 1.0f);
    col.z = std::clamp(col.z, 0.0f, 1.0f);
    pg.color = col;

    // minor axis = rotation column of the smallest scale (ties to the first)
    const int minor = (s.x <= s.y && s.x <= s.z) ? 0 : (s.y <= s.z ? 1 : 2);
    Vec3 n = r.col(minor);
    if (dot(n, cam_center - scene.centers[i]) < 0) n = -n;
    pg.normal_world = n;

    out.push_back(pg);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const ProjectedGaussian& a, const ProjectedGaussian& b) {
                     return a.depth < b.depth;
                   });
  if (stats) *stats = local;
  return out;
}

namespace detail {

// Front-to-back compositing of one tile. Walks pixels row-major and the
// tile's splat list in depth order; the transmittance derivative recursion
// runs alongside the color accumulation.
inline void render_tile(const std::vector<ProjectedGaussian>& gs,
                        const std::vector<int>& tile_list, const Camera& cam,
                        const RenderOptions& opt, int x0, int y0, int x1, int y1,
                        FrameBundle& fb) {
  const int w = cam.width;
  const std::size_t hw = static_cast<std::size_t>(cam.width) * cam.height;
  float* color = fb.color.data();
  float* gx = fb.grad_x.data();
  float* gy = fb.grad_y.data();
  float* depth = fb.depth.data();
  float* normal = fb.normal.data();
  float* nv = fb.nv.data();
  float* acc = fb.alpha.data();

  for (int py = y0; py < y1; ++py)
    for (int px = x0; px < x1; ++px) {
      const float cxp = static_cast<float>(px) + 0.5f;
      const float cyp = static_cast<float>(py) + 0.5f;
      float t_cur = 1.0f, dtx = 0.0f, dty = 0.0f;
      float c0 = 0, c1 = 0, c2 = 0;
      float gx0 = 0, gx1 = 0, gx2 = 0, gy0 = 0, gy1 = 0, gy2 = 0;
      float d_acc = 0, a_acc = 0;
      float n0 = 0, n1 = 0, n2 = 0;
      for (int gi : tile_list) {
        const ProjectedGaussian& g = gs[static_cast<std::size_t>(gi)];
        const float dx = cxp - g.mean_x;
        const float dy = cyp - g.mean_y;
        const float power =
            -0.5f * (g.icov_a * dx * dx + 2.0f * g.icov_b * dx * dy + g.icov_c * dy * dy);
        if (power > 0.0f) continue;
        float alpha = g.opacity * std::exp(power);
        bool clamped = false;
        if (opt.clamp_alpha && alpha > 0.99f) {
          alpha = 0.99f;
          clamped = true;
        }
        if (alpha < opt.alpha_skip) continue;
        // d(alpha)/d(pixel) = alpha * -(icov . d); zero where the cap is active
        const float dax = clamped ? 0.0f : alpha * -(g.icov_a * dx + g.icov_b * dy);
        const float day = clamped ? 0.0f : alpha * -(g.icov_b * dx + g.icov_c * dy);
        const float at = alpha * t_cur;
        c0 += g.color.x * at;
        c1 += g.color.y * at;
        c2 += g.color.z * at;
        const float wx = dtx * alpha + t_cur * dax;
        const float wy = dty * alpha + t_cur * day;
        gx0 += g.color.x * wx;
        gx1 += g.color.y * wx;
        gx2 += g.color.z * wx;
        gy0 += g.color.x * wy;
        gy1 += g.color.y * wy;
        gy2 += g.color.z * wy;
        d_acc += g.depth * at;
        a_acc += at;
        n0 += g.normal_world.x * at;
        n1 += g.normal_world.y * at;
        n2 += g.normal_world.z * at;
        dtx = -dax * t_cur + (1.0f - alpha) * dtx;
        dty = -day * t_cur + (1.0f - alpha) * dty;
        t_cur *= (1.0f - alpha);
        if (t_cur < opt.transmittance_stop) break;
      }
      const std::size_t pi = static_cast<std::size_t>(py) * w + px;
      color[pi] = c0;
      color[hw + pi] = c1;
      color[2 * hw + pi] = c2;
      gx[pi] = gx0;
      gx[hw + pi] = gx1;
      gx[2 * hw + pi] = gx2;
      gy[pi] = gy0;
      gy[hw + pi] = gy1;
      gy[2 * hw + pi] = gy2;
      depth[pi] = d_acc + t_cur * cam.far_clip;
      acc[pi] = a_acc;
      const float nn = std::sqrt(n0 * n0 + n1 * n1 + n2 * n2);
      if (nn > 1e-6f) {
        n0 /= nn;
        n1 /= nn;
        n2 /= nn;
        const Vec3 to_cam = -cam.ray_dir_world(px, py);
        float d = n0 * to_cam.x + n1 * to_cam.y + n2 * to_cam.z;
        nv[pi] = std::clamp(d, -1.0f, 1.0f);
        normal[pi] = n0;
        normal[hw + pi] = n1;
        normal[2 * hw + pi] = n2;
      } else {
        normal[pi] = normal[hw + pi] = normal[2 * hw + pi] = 0.0f;
        nv[pi] = 0.0f;
      }
    }
}

}  // namespace detail

// Renders the full FrameBundle: alpha-blended color, its analytic x/y image
// gradients, expected depth, blended minor-axis normals and the normal.view
// map. Pure function of (scene, camera); tile-parallel execution writes
// disjoint pixels and is bit-identical to the serial order.
inline FrameBundle render(const GaussianScene& scene, const Camera& cam,
                          const RenderOptions& opt = {}, ProjectStats* stats = nullptr) {
  RenderCallLog::instance().record(cam.width, cam.height);
  const std::vector<ProjectedGaussian> gs = project(scene, cam, opt, stats);

  FrameBundle fb;
  fb.camera = cam;
  fb.color = DTensor::zeros({3, cam.height, cam.width});
  fb.grad_x = DTensor::zeros({3, cam.height, cam.width});
  fb.grad_y = DTensor::zeros({3, cam.height, cam.width});
  fb.depth = DTensor::full({1, cam.height, cam.width}, cam.far_clip);
  fb.normal = DTensor::zeros({3, cam.height, cam.width});
  fb.nv = DTensor::zeros({1, cam.height, cam.width});
  fb.alpha = DTensor::zeros({1, cam.height, cam.width});

  const int tile = opt.tile;
  const int tiles_x = (cam.width + tile - 1) / tile;
  const int tiles_y = (cam.height + tile - 1) / tile;
  std::vector<std::vector<int>> tile_lists(static_cast<std::size_t>(tiles_x) * tiles_y);
  for (int gi = 0; gi < static_cast<int>(gs.size()); ++gi) {
    const ProjectedGaussian& g = gs[static_cast<std::size_t>(gi)];
    const int tx0 = std::max(0, static_cast<int>(std::floor((g.mean_x - g.radius) / tile)));
    const int ty0 = std::max(0, static_cast<int>(std::floor((g.mean_y - g.radius) / tile)));
    const int tx1 =
        std::min(tiles_x - 1, static_cast<int>(std::floor((g.mean_x + g.radius) / tile)));
    const int ty1 =
        std::min(tiles_y - 1, static_cast<int>(std::floor((g.mean_y + g.radius) / tile)));
    for (int ty = ty0; ty <= ty1; ++ty)
      for (int tx = tx0; tx <= tx1; ++tx)
        tile_lists[static_cast<std::size_t>(ty) * tiles_x + tx].push_back(gi);
  }

  auto run_tile = [&](int ti) {
    const int ty = ti / tiles_x, tx = ti % tiles_x;
    detail::render_tile(gs, tile_lists[static_cast<std::size_t>(ti)], cam, opt,
                        tx * tile, ty * tile, std::min((tx + 1) * tile, cam.width),
                        std::min((ty + 1) * tile, cam.height), fb);
  };

  const int n_tiles = tiles_x * tiles_y;
  if (!opt.parallel) {
    for (int ti = 0; ti < n_tiles; ++ti) run_tile(ti);
  } else {
    int n_threads = opt.threads > 0 ? opt.threads
                                    : static_cast<int>(std::thread::hardware_concurrency());
    if (n_threads < 1) n_threads = 1;
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t)
      pool.emplace_back([&] {
        for (int ti = next.fetch_add(1); ti < n_tiles; ti = next.fetch_add(1)) run_tile(ti);
      });
    for (auto& th : pool) th.join();
  }

  assert(fb.color.all_finite() && fb.grad_x.all_finite() && fb.grad_y.all_finite() &&
         fb.depth.all_finite() && fb.normal.all_finite());
  return fb;
}

}  // namespace splat
