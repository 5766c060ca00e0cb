#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "splat/tensor.hpp"
#include "splat/nn_ops.hpp"
#include "splat/warp.hpp"

namespace splat {

struct LossConfig {
  float charbonnier_eps = 1e-3f;
  float lambda_lap = 0.1f;    // Laplace term in the supersampling loss
  float lambda_perc = 0.2f;   // perceptual substitute in the interpolation loss
  float lambda_occ = 0.05f;   // occlusion-aware term
  float lambda_alpha = 0.2f;  // blend-weight regularizer
  enum class PerceptualMode { off, multiscale_gradient };
  PerceptualMode perceptual_mode = PerceptualMode::multiscale_gradient;

  void validate() const {
    if (!(charbonnier_eps > 0)) throw ConfigError("loss config: eps must be > 0");
    if (lambda_lap < 0 || lambda_perc < 0 || lambda_occ < 0 || lambda_alpha < 0)
      throw ConfigError("loss config: weights must be >= 0");
  }
};

// mean sqrt((x-y)^2 + eps^2); floor eps at equality.
inline DTensor charbonnier(const DTensor& x, const DTensor& y, float eps = 1e-3f) {
  const DTensor d = sub(x, y);
  return mean(sqrt(add_scalar(mul(d, d), eps * eps)));
}

// mean L1 of the 5-point Laplacian difference.
inline DTensor laplace_loss(const DTensor& x, const DTensor& y) {
  return mean(abs(sub(laplacian5(x), laplacian5(y))));
}

// ||alpha||_2 as the root of the mean square.
inline DTensor alpha_reg(const DTensor& alpha) {
  return sqrt(mean(mul(alpha, alpha)));
}

// Dependency-free stand-in for a pretrained perceptual loss: L1 on finite
// difference gradients over a 3-level average pooled pyramid, plus an L1
// intensity term at the coarsest level so constant offsets stay visible.
// Zero iff the inputs agree at every scale.
inline DTensor perceptual_substitute(const DTensor& x, const DTensor& y) {
  DTensor xl = x, yl = y;
  DTensor total = DTensor::scalar(0.0f);
  for (int level = 0; level < 3; ++level) {
    if (level > 0) {
      xl = avg_pool2(xl);
      yl = avg_pool2(yl);
    }
    total = add(total, mean(abs(sub(image_dx(xl), image_dx(yl)))));
    total = add(total, mean(abs(sub(image_dy(xl), image_dy(yl)))));
  }
  return add(total, mean(abs(sub(xl, yl))));
}

inline std::atomic<long>& occlusion_empty_warnings() {
  static std::atomic<long> n{0};
  return n;
}

// Occlusion-aware photometric consistency: the prediction is scatter-warped
// toward each neighbor frame with ground-truth-side fields and compared under
// L1 on non-hole pixels (sum over both directions). The warp is a fixed index
// map during backward.
inline DTensor occlusion_loss(const DTensor& pred_mid, const DTensor& depth_mid,
                              const MotionField& to_frame0, const MotionField& to_frame1,
                              const DTensor& frame0, const DTensor& frame1) {
  DTensor total = DTensor::scalar(0.0f);
  const MotionField* fields[2] = {&to_frame0, &to_frame1};
  const DTensor* targets[2] = {&frame0, &frame1};
  for (int j = 0; j < 2; ++j) {
    const WarpResult wr = forward_warp(pred_mid, depth_mid, *fields[j]);
    long count = 0;
    DTensor mask = DTensor::zeros({1, wr.height, wr.width});
    for (std::size_t i = 0; i < wr.hole_mask.size(); ++i)
      if (!wr.hole_mask[i]) {
        mask[i] = 1.0f;
        ++count;
      }
    if (count == 0) {
      occlusion_empty_warnings().fetch_add(1);
      continue;
    }
    const DTensor l1 = mul(abs(sub(wr.payload, *targets[j])), mask);
    total = add(total, mul_scalar(sum(l1),
                                  1.0f / static_cast<float>(count * pred_mid.dim(0))));
  }
  return total;
}

// Supersampling training loss: charbonnier + lambda * laplace.
inline DTensor gass_total(const DTensor& x, const DTensor& y, const LossConfig& cfg = {}) {
  cfg.validate();
  return add(charbonnier(x, y, cfg.charbonnier_eps),
             mul_scalar(laplace_loss(x, y), cfg.lambda_lap));
}

// Interpolation training loss: charbonnier + perceptual substitute +
// occlusion term + blend regularizer. The occlusion scalar is computed by the
// caller (it needs warp fields) and may be omitted.
inline DTensor ltfi_total(const DTensor& pred, const DTensor& gt, const DTensor& alpha,
                          const DTensor* occlusion, const LossConfig& cfg = {}) {
  cfg.validate();
  DTensor total = charbonnier(pred, gt, cfg.charbonnier_eps);
  if (cfg.perceptual_mode == LossConfig::PerceptualMode::multiscale_gradient)
    total = add(total, mul_scalar(perceptual_substitute(pred, gt), cfg.lambda_perc));
  if (occlusion) total = add(total, mul_scalar(*occlusion, cfg.lambda_occ));
  total = add(total, mul_scalar(alpha_reg(alpha), cfg.lambda_alpha));
  return total;
}

// ---------------------------------------------------------------------------
// Quality metrics (plain doubles, no gradients).

inline double psnr(const DTensor& x, const DTensor& y, double peak = 1.0) {
  if (!x.same_shape(y)) throw DimensionError("psnr: shape mismatch");
  double mse = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double d = static_cast<double>(x[i]) - y[i];
    mse += d * d;
  }
  mse /= static_cast<double>(x.numel());
  if (mse <= 0) return 99.0;
  const double v = 10.0 * std::log10(peak * peak / mse);
  return v > 99.0 ? 99.0 : v;
}

// Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), valid positions only,
// per-channel averaged, peak 1.
inline double ssim(const DTensor& x, const DTensor& y) {
  if (!x.same_shape(y)) throw DimensionError("ssim: shape mismatch");
  if (x.ndim() != 3) throw DimensionError("ssim: expected (C,H,W)");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  constexpr int kWin = 11;
  constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;
  if (h < kWin || w < kWin) throw DimensionError("ssim: image smaller than the window");
  double win[kWin];
  double wsum = 0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - (kWin - 1) / 2.0;
    win[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    wsum += win[i];
  }
  for (double& v : win) v /= wsum;

  double total = 0;
  for (int ch = 0; ch < c; ++ch) {
    const float* xp = x.data() + static_cast<std::size_t>(ch) * h * w;
    const float* yp = y.data() + static_cast<std::size_t>(ch) * h * w;
    double acc = 0;
    long n = 0;
    for (int oy = 0; oy + kWin <= h; ++oy)
      for (int ox = 0; ox + kWin <= w; ++ox) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int wy = 0; wy < kWin; ++wy)
          for (int wx = 0; wx < kWin; ++wx) {
            const double g = win[wy] * win[wx];
            const double a = xp[(oy + wy) * w + ox + wx];
            const double b = yp[(oy + wy) * w + ox + wx];
            mx += g * a;
            my += g * b;
            sxx += g * a * a;
            syy += g * b * b;
            sxy += g * a * b;
          }
        sxx -= mx * mx;
        syy -= my * my;
        sxy -= mx * my;
        const double v = ((2 * mx * my + kC1) * (2 * sxy + kC2)) /
                         ((mx * mx + my * my + kC1) * (sxx + syy + kC2));
        acc += v;
        ++n;
      }
    total += acc / static_cast<double>(n);
  }
  return total / c;
}

// Per-frame quality/timing rows plus the derived aggregates.
struct FrameMetrics {
  int index = 0;
  std::string kind;   // "keyframe" or "interpolated"
  double time = 0;    // path parameter of the frame
  double psnr_db = 0;
  double ssim_val = 0;
};

struct MetricReport {
  std::vector<FrameMetrics> frames;
  double mean_psnr = 0;
  double mean_ssim = 0;
  double fps = 0;
  double ms_render_lr = 0, ms_gass = 0, ms_ltfi = 0, ms_warp = 0;  // totals
  long hr_renders_timed = 0;

  void finalize() {
    mean_psnr = mean_ssim = 0;
    if (frames.empty()) return;
    for (const auto& f : frames) {
      mean_psnr += f.psnr_db;
      mean_ssim += f.ssim_val;
    }
    mean_psnr /= static_cast<double>(frames.size());
    mean_ssim /= static_cast<double>(frames.size());
  }

  void write_text(std::ostream& os) const {
    os << "frames: " << frames.size() << "\n";
    os << "mean_psnr: " << mean_psnr << "\n";
    os << "mean_ssim: " << mean_ssim << "\n";
    os << "fps: " << fps << "\n";
    os << "ms_render_lr: " << ms_render_lr << "\n";
    os << "ms_gass: " << ms_gass << "\n";
    os << "ms_ltfi: " << ms_ltfi << "\n";
    os << "ms_warp: " << ms_warp << "\n";
    os << "hr_renders_timed: " << hr_renders_timed << "\n";
  }

  void write_csv(std::ostream& os) const {
    os << "frame,kind,time,psnr,ssim\n";
    for (const auto& f : frames)
      os << f.index << "," << f.kind << "," << f.time << "," << f.psnr_db << ","
         << f.ssim_val << "\n";
  }
};

}  // namespace splat
