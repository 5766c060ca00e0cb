#pragma once

#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "splat/nn_ops.hpp"
#include "splat/optim.hpp"
#include "splat/rasterizer.hpp"
#include "splat/rng.hpp"
#include "splat/tensor.hpp"
#include "splat/warp.hpp"

namespace splat {

// ---------------------------------------------------------------------------
// Gradient-aware interpolation: a piecewise cubic-Hermite surface constrained
// by pixel values and their rendered x/y derivatives, evaluated blockwise so
// the whole map is linear in the 27 inputs (9 values, 9 dx, 9 dy) of each
// 3x3 neighborhood and therefore realizable as Conv3x3 -> TConvSxS.

namespace detail {

inline void hermite_basis(float u, float& hv0, float& hv1, float& hd0, float& hd1) {
  const float u2 = u * u, u3 = u2 * u;
  hv0 = 2 * u3 - 3 * u2 + 1;
  hv1 = -2 * u3 + 3 * u2;
  hd0 = u3 - 2 * u2 + u;
  hd1 = u3 - u2;
}

// Cross-derivative estimate at block node (dy,dx) from y-differences of the
// x-derivative channel, restricted to the 3x3 block: central at the middle
// row, one-sided at the block edge. Exact for quadratics either way.
inline float block_fxy(const float* gx, int dy, int dx) {
  auto at = [&](int y, int x) { return gx[(y + 1) * 3 + (x + 1)]; };
  if (dy == 0) return 0.5f * (at(1, dx) - at(-1, dx));
  if (dy == 1) return at(1, dx) - at(0, dx);
  return at(0, dx) - at(-1, dx);
}

// Evaluates the Hermite surface of one 3x3 block at offset (ox,oy) from the
// center node, |offset| < 0.5. val/gx/gy are the 9 block samples in row-major
// (dy+1)*3+(dx+1) order.
inline float hermite_block_eval(const float* val, const float* gx, const float* gy,
                                float ox, float oy) {
  const int cx = ox < 0.0f ? -1 : 0;  // left node of the enclosing cell
  const int cy = oy < 0.0f ? -1 : 0;
  const float u = ox - static_cast<float>(cx);
  const float v = oy - static_cast<float>(cy);
  float hu[2], hdu[2], hv[2], hdv[2];
  hermite_basis(u, hu[0], hu[1], hdu[0], hdu[1]);
  hermite_basis(v, hv[0], hv[1], hdv[0], hdv[1]);
  auto at = [&](const float* a, int y, int x) { return a[(y + 1) * 3 + (x + 1)]; };
  float acc = 0.0f;
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 2; ++i) {
      const int nx = cx + i, ny = cy + j;
      const float p = at(val, ny, nx);
      const float fx = at(gx, ny, nx);
      const float fy = at(gy, ny, nx);
      const float fxy = block_fxy(gx, ny, nx);
      acc += hu[i] * hv[j] * p + hdu[i] * hv[j] * fx + hu[i] * hdv[j] * fy +
             hdu[i] * hdv[j] * fxy;
    }
  return acc;
}

}  // namespace detail

// Closed-form gradient-constrained upsampler; the non-learned reference for
// the Conv->TConv path. HR pixel X of block x0 = X/S evaluates the block
// surface at offset ((X%S)+0.5)/S - 0.5. Border blocks clamp-replicate.
inline DTensor hermite_oracle_upsample(const DTensor& img, const DTensor& grad_x,
                                       const DTensor& grad_y, int s) {
  if (img.ndim() != 3) throw DimensionError("hermite_oracle_upsample: (C,H,W) expected");
  if (!img.same_shape(grad_x) || !img.same_shape(grad_y))
    throw DimensionError("hermite_oracle_upsample: gradient shape mismatch");
  if (s < 2) throw ConfigError("hermite_oracle_upsample: scale must be >= 2");
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  DTensor out = DTensor::zeros({c, h * s, w * s});
  auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
  std::vector<float> offs(static_cast<std::size_t>(s));
  for (int k = 0; k < s; ++k)
    offs[static_cast<std::size_t>(k)] =
        (static_cast<float>(k) + 0.5f) / static_cast<float>(s) - 0.5f;
  for (int ch = 0; ch < c; ++ch) {
    const float* ip = img.data() + static_cast<std::size_t>(ch) * h * w;
    const float* gxp = grad_x.data() + static_cast<std::size_t>(ch) * h * w;
    const float* gyp = grad_y.data() + static_cast<std::size_t>(ch) * h * w;
    float* op = out.data() + static_cast<std::size_t>(ch) * h * s * w * s;
    for (int y0 = 0; y0 < h; ++y0)
      for (int x0 = 0; x0 < w; ++x0) {
        float val[9], gx[9], gy[9];
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = clampi(y0 + dy, 0, h - 1);
            const int xx = clampi(x0 + dx, 0, w - 1);
            const int k = (dy + 1) * 3 + (dx + 1);
            val[k] = ip[yy * w + xx];
            gx[k] = gxp[yy * w + xx];
            gy[k] = gyp[yy * w + xx];
          }
        for (int sy = 0; sy < s; ++sy)
          for (int sx = 0; sx < s; ++sx)
            op[(y0 * s + sy) * (w * s) + x0 * s + sx] = detail::hermite_block_eval(
                val, gx, gy, offs[static_cast<std::size_t>(sx)],
                offs[static_cast<std::size_t>(sy)]);
      }
  }
  return out;
}

// Keys cubic convolution (a = -0.5) with clamp-replicate borders; the
// gradient-free upsampling baseline. Separable two-pass with double
// accumulation.
inline DTensor bicubic_upsample(const DTensor& img, int s) {
  if (img.ndim() != 3) throw DimensionError("bicubic_upsample: (C,H,W) expected");
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const int oh = h * s, ow = w * s;
  auto kernel = [](double t) -> double {
    t = std::fabs(t);
    if (t <= 1.0) return 1.5 * t * t * t - 2.5 * t * t + 1.0;
    if (t < 2.0) return -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0;
    return 0.0;
  };
  auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };

  // horizontal pass: (C,H,W) -> (C,H,OW)
  std::vector<double> tmp(static_cast<std::size_t>(c) * h * ow);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y) {
      const float* row = img.data() + (static_cast<std::size_t>(ch) * h + y) * w;
      double* trow = tmp.data() + (static_cast<std::size_t>(ch) * h + y) * ow;
      for (int x = 0; x < ow; ++x) {
        const double src = (x + 0.5) / s - 0.5;
        const int x0 = static_cast<int>(std::floor(src));
        double acc = 0;
        for (int k = -1; k <= 2; ++k)
          acc += kernel(src - (x0 + k)) * row[clampi(x0 + k, 0, w - 1)];
        trow[x] = acc;
      }
    }
  DTensor out = DTensor::zeros({c, oh, ow});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < oh; ++y) {
      const double src = (y + 0.5) / s - 0.5;
      const int y0 = static_cast<int>(std::floor(src));
      double wk[4];
      for (int k = -1; k <= 2; ++k) wk[k + 1] = kernel(src - (y0 + k));
      float* orow = out.data() + (static_cast<std::size_t>(ch) * oh + y) * ow;
      for (int x = 0; x < ow; ++x) {
        double acc = 0;
        for (int k = -1; k <= 2; ++k)
          acc += wk[k + 1] *
                 tmp[(static_cast<std::size_t>(ch) * h + clampi(y0 + k, 0, h - 1)) * ow + x];
        orow[x] = static_cast<float>(acc);
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Closed-form initialization of the Conv->TConv pair.

// The per-channel block map M (S^2 x 27, double) plus its factorization rank.
struct BlockMap {
  std::vector<double> m;  // row-major, rows = S^2, cols = 27
  int rows = 0, cols = 27;
  int rank = 0;
};

// Builds M column-by-column from the block oracle on the delta basis of
// local configurations.
inline BlockMap hermite_block_map(int s) {
  BlockMap bm;
  bm.rows = s * s;
  bm.m.assign(static_cast<std::size_t>(bm.rows) * 27, 0.0);
  float val[9], gx[9], gy[9];
  for (int k = 0; k < 27; ++k) {
    for (int i = 0; i < 9; ++i) val[i] = gx[i] = gy[i] = 0.0f;
    if (k < 9) val[k] = 1.0f;
    else if (k < 18) gx[k - 9] = 1.0f;
    else gy[k - 18] = 1.0f;
    for (int sy = 0; sy < s; ++sy)
      for (int sx = 0; sx < s; ++sx) {
        const float ox = (static_cast<float>(sx) + 0.5f) / s - 0.5f;
        const float oy = (static_cast<float>(sy) + 0.5f) / s - 0.5f;
        bm.m[static_cast<std::size_t>(sy * s + sx) * 27 + k] =
            detail::hermite_block_eval(val, gx, gy, ox, oy);
      }
  }
  return bm;
}

namespace detail {
// Modified Gram-Schmidt rank factorization M = B * A with orthonormal rows
// A (rank x cols); fills `basis` and `coef` and returns the numerical rank.
inline int rank_factorize(const std::vector<double>& m, int rows, int cols,
                          std::vector<std::vector<double>>& basis,
                          std::vector<std::vector<double>>& coef) {
  basis.clear();
  double max_norm = 0.0;
  for (int r = 0; r < rows; ++r) {
    double n = 0;
    for (int c = 0; c < cols; ++c) n += m[r * cols + c] * m[r * cols + c];
    max_norm = std::max(max_norm, std::sqrt(n));
  }
  const double tol = 1e-9 * (max_norm > 0 ? max_norm : 1.0);
  for (int r = 0; r < rows; ++r) {
    std::vector<double> v(m.begin() + r * cols, m.begin() + (r + 1) * cols);
    for (const auto& b : basis) {
      double d = 0;
      for (int c = 0; c < cols; ++c) d += v[c] * b[c];
      for (int c = 0; c < cols; ++c) v[c] -= d * b[c];
    }
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n > tol) {
      for (double& x : v) x /= n;
      basis.push_back(std::move(v));
    }
  }
  const int rank = static_cast<int>(basis.size());
  coef.assign(static_cast<std::size_t>(rows), std::vector<double>(rank, 0.0));
  for (int r = 0; r < rows; ++r)
    for (int f = 0; f < rank; ++f) {
      double d = 0;
      for (int c = 0; c < cols; ++c) d += m[r * cols + c] * basis[f][c];
      coef[r][f] = d;
    }
  return rank;
}
}  // namespace detail

inline int block_map_rank(const BlockMap& bm) {
  std::vector<std::vector<double>> basis, coef;
  return detail::rank_factorize(bm.m, bm.rows, bm.cols, basis, coef);
}

struct GassInit {
  DTensor conv_w;   // (C_F, 9, 3, 3)
  DTensor conv_b;   // (C_F)
  DTensor tconv_w;  // (C_F, 3, S, S)
  BlockMap block_map;
};

// Factors the Hermite block map into the two layers, color group by color
// group: features [c*per, c*per+rank) of group c carry the row-space basis of
// M applied to that color's 27 block inputs, and the transposed conv
// reassembles the S^2 outputs. Slack features get small fan-in noise on the
// conv side and zero on the tconv side, so the composite map still equals M
// exactly while training can recruit them.
inline GassInit solve_M_init(int s, int c_f, Rng& rng) {
  BlockMap bm = hermite_block_map(s);
  std::vector<std::vector<double>> basis, coef;
  bm.rank = detail::rank_factorize(bm.m, bm.rows, bm.cols, basis, coef);
  const int minimum = std::min(s * s, 27);
  if (bm.rank != minimum)
    throw ConfigError("solve_M_init: block map rank " + std::to_string(bm.rank) +
                      " != " + std::to_string(minimum));
  if (c_f <= minimum)
    throw ConfigError("solve_M_init: feature count must exceed min(S^2, 27)");
  if (c_f % 3 != 0 || c_f / 3 < bm.rank)
    throw ConfigError("solve_M_init: need at least rank features per color group");

  const int per = c_f / 3;
  GassInit init;
  init.conv_w = DTensor::zeros({c_f, 9, 3, 3});
  init.conv_b = DTensor::zeros({c_f});
  init.tconv_w = DTensor::zeros({c_f, 3, s, s});
  const float noise = std::sqrt(1.0f / (9.0f * 9.0f));
  for (int c = 0; c < 3; ++c) {
    for (int f = 0; f < per; ++f) {
      const int feat = c * per + f;
      if (f < bm.rank) {
        for (int g = 0; g < 3; ++g)  // 0 values, 1 dx, 2 dy
          for (int t = 0; t < 9; ++t)
            init.conv_w[((static_cast<std::size_t>(feat) * 9 + g * 3 + c) * 3 +
                         t / 3) * 3 + t % 3] = static_cast<float>(basis[f][g * 9 + t]);
        for (int p = 0; p < bm.rows; ++p)
          init.tconv_w[((static_cast<std::size_t>(feat) * 3 + c) * s + p / s) * s +
                       p % s] = static_cast<float>(coef[p][f]);
      } else {
        // slack: nonzero conv rows keep the feature trainable, zero tconv
        // keeps the composite exact
        for (int g = 0; g < 3; ++g)
          for (int t = 0; t < 9; ++t)
            init.conv_w[((static_cast<std::size_t>(feat) * 9 + g * 3 + c) * 3 +
                         t / 3) * 3 + t % 3] = rng.uniform(-noise, noise);
      }
    }
  }
  init.block_map = std::move(bm);
  return init;
}

// ---------------------------------------------------------------------------
// Model and forward pass.

// Warped temporal feature carried between consecutive frames of a sequence.
// Stores the source frame's camera and depth so the feature can be scatter
// warped into the next view.
struct HistoryState {
  DTensor h;      // C_h, H, W (low resolution)
  Camera camera;
  DTensor depth;  // 1, H, W source-frame depth, for the forward warp
  int frame_index = -1;

  bool fresh() const { return frame_index < 0; }
};

struct GassOptions {
  bool no_gai = false;   // bicubic path, refinement off
  bool no_gtrr = false;  // keep the interpolation path, residual forced 0
};

struct GassModel {
  int scale = 2;
  int c_f = 48;
  int c_h = 16;
  Parameter conv_in_w, conv_in_b;
  Parameter tconv_w;
  Parameter gru_z_w, gru_z_b, gru_r_w, gru_r_b, gru_h_w, gru_h_b;
  Parameter head_w, head_b;

  std::vector<Parameter*> parameters() {
    return {&conv_in_w, &conv_in_b, &tconv_w, &gru_z_w, &gru_z_b, &gru_r_w,
            &gru_r_b,   &gru_h_w,   &gru_h_b, &head_w,  &head_b};
  }
  std::vector<Parameter*> interpolation_parameters() {
    return {&conv_in_w, &conv_in_b, &tconv_w};
  }
  std::vector<Parameter*> refine_parameters() {
    return {&gru_z_w, &gru_z_b, &gru_r_w, &gru_r_b, &gru_h_w, &gru_h_b, &head_w, &head_b};
  }
};

namespace detail {
inline DTensor fan_in_conv(Rng& rng, int c_out, int c_in, int k) {
  DTensor w = DTensor::zeros({c_out, c_in, k, k});
  const float bound = std::sqrt(1.0f / (static_cast<float>(c_in) * k * k));
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
  return w;
}
}  // namespace detail

// GRU input: dI/dx (3), dI/dy (3), depth (1), normal.view (1).
inline constexpr int kGassGruInput = 8;

inline GassModel make_gass_model(int scale, std::uint64_t seed, int c_f = 48,
                                 int c_h = 16) {
  Rng rng(seed);
  GassModel m;
  m.scale = scale;
  m.c_f = c_f;
  m.c_h = c_h;
  GassInit init = solve_M_init(scale, c_f, rng);
  m.conv_in_w = Parameter("conv_in.weight", init.conv_w);
  m.conv_in_b = Parameter("conv_in.bias", init.conv_b);
  m.tconv_w = Parameter("tconv_out.weight", init.tconv_w);
  const int gin = kGassGruInput + c_h;
  m.gru_z_w = Parameter("gru.update.weight", detail::fan_in_conv(rng, c_h, gin, 3));
  m.gru_z_b = Parameter("gru.update.bias", DTensor::zeros({c_h}));
  m.gru_r_w = Parameter("gru.reset.weight", detail::fan_in_conv(rng, c_h, gin, 3));
  m.gru_r_b = Parameter("gru.reset.bias", DTensor::zeros({c_h}));
  m.gru_h_w = Parameter("gru.cand.weight", detail::fan_in_conv(rng, c_h, gin, 3));
  m.gru_h_b = Parameter("gru.cand.bias", DTensor::zeros({c_h}));
  m.head_w = Parameter("head.weight", detail::fan_in_conv(rng, c_f, c_h, 3));
  m.head_b = Parameter("head.bias", DTensor::zeros({c_f}));
  return m;
}

// Convolutional GRU update over the geometry inputs:
//   z = sig(Conv[x,h~]), r = sig(Conv[x,h~]), hc = tanh(Conv[x, r*h~]),
//   h = (1-z)*h~ + z*hc, dF = Conv(h).
inline std::pair<DTensor, DTensor> refine(GassModel& model, const DTensor& grad_x,
                                          const DTensor& grad_y, const DTensor& depth,
                                          const DTensor& nv, const DTensor& h_prev) {
  if (grad_x.dim(0) != 3 || grad_y.dim(0) != 3 || depth.dim(0) != 1 || nv.dim(0) != 1)
    throw DimensionError("refine: unexpected channel counts");
  if (h_prev.dim(0) != model.c_h) throw DimensionError("refine: state channel mismatch");
  const DTensor x = concat_channels({grad_x, grad_y, depth, nv});
  const DTensor xh = concat_channels({x, h_prev});
  const DTensor z = sigmoid(conv2d(xh, model.gru_z_w.value, model.gru_z_b.value, 1, 1));
  const DTensor r = sigmoid(conv2d(xh, model.gru_r_w.value, model.gru_r_b.value, 1, 1));
  const DTensor xr = concat_channels({x, mul(r, h_prev)});
  const DTensor hc = tanh(conv2d(xr, model.gru_h_w.value, model.gru_h_b.value, 1, 1));
  const DTensor h = add(mul(one_minus(z), h_prev), mul(z, hc));
  const DTensor df = conv2d(h, model.head_w.value, model.head_b.value, 1, 1);
  return {h, df};
}

// The raw interpolation path, Conv -> (+dF) -> TConv, no output clamp.
inline DTensor gass_interpolate(GassModel& model, const DTensor& img, const DTensor& gx,
                                const DTensor& gy, const DTensor* residual = nullptr) {
  DTensor f = conv2d(concat_channels({img, gx, gy}), model.conv_in_w.value,
                     model.conv_in_b.value, 1, 1);
  if (residual) f = add(f, *residual);
  return transposed_conv2d(f, model.tconv_w.value, model.scale);
}

// Full supersampling step for one frame. The previous state's feature is
// scatter-warped into the current view with the stored source depth; fresh
// sequences start from zeros.
inline std::pair<DTensor, HistoryState> gass_forward(GassModel& model,
                                                     const FrameBundle& bundle,
                                                     const HistoryState& state,
                                                     const GassOptions& opt = {}) {
  const int h = bundle.height(), w = bundle.width();
  if (opt.no_gai) {
    HistoryState next;
    next.camera = bundle.camera;
    next.depth = bundle.depth;
    next.frame_index = state.frame_index + 1;
    next.h = DTensor::zeros({model.c_h, h, w});
    return {clamp01(bicubic_upsample(bundle.color, model.scale)), next};
  }

  HistoryState next;
  next.camera = bundle.camera;
  next.depth = bundle.depth;
  next.frame_index = state.frame_index + 1;

  if (opt.no_gtrr) {
    next.h = DTensor::zeros({model.c_h, h, w});
    return {clamp01(gass_interpolate(model, bundle.color, bundle.grad_x, bundle.grad_y)),
            next};
  }

  DTensor h_prev;
  if (state.fresh()) {
    h_prev = DTensor::zeros({model.c_h, h, w});
  } else {
    if (state.h.dim(1) != h || state.h.dim(2) != w)
      throw ContractError("gass_forward: state resolution mismatch");
    const MotionField field = motion_field(state.camera, bundle.camera, state.depth);
    h_prev = forward_warp(state.h, state.depth, field).payload;
  }

  const DTensor depth_n = mul_scalar(bundle.depth, 1.0f / bundle.camera.far_clip);
  auto [h_new, df] = refine(model, bundle.grad_x, bundle.grad_y, depth_n, bundle.nv, h_prev);
  DTensor out =
      clamp01(gass_interpolate(model, bundle.color, bundle.grad_x, bundle.grad_y, &df));
  next.h = h_new;
  return {out, next};
}

}  // namespace splat
