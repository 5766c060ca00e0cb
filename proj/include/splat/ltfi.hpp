#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "splat/gass.hpp"
#include "splat/nn_ops.hpp"
#include "splat/optim.hpp"
#include "splat/rasterizer.hpp"
#include "splat/tensor.hpp"
#include "splat/warp.hpp"

namespace splat {

// Temporal frame interpolation: both neighbor frames are scatter-warped to
// the midpoint pose, encoded, fused in a small U-Net with attention-gated
// skips, and blended against the warped previous frame. A convolutional GRU
// carries a half-resolution hidden state across interpolations.

inline constexpr int kLtfiEnc0Input = 8;   // warped I,D,N + hole
inline constexpr int kLtfiEnc1Input = 14;  // warped I,D,N,G(6) + hole

// Hidden state between interpolations, kept at half the output resolution.
struct TemporalState {
  DTensor h;           // C_h, H/2, W/2
  Camera camera_half;  // source pose at half resolution
  DTensor depth_half;  // 1, H/2, W/2
  int frame_index = -1;

  bool fresh() const { return frame_index < 0; }
};

struct LtfiOptions {
  bool no_gi = false;   // zero the warped frame-1 gradient channels
  bool no_tru = false;  // hold the temporal state at zeros
};

struct LtfiModel {
  int scale = 2;
  int c_e = 16;  // encoder output channels
  int c_h = 16;  // fused/hidden feature channels
  int c0 = 8;    // full-resolution U-Net width
  int c2 = 32;   // bottleneck width

  Parameter enc0_w, enc0_b;
  Parameter enc1a_w, enc1a_b;
  Parameter enc1b_w, enc1b_b;
  Parameter e0_w, e0_b;
  Parameter e1_w, e1_b;
  Parameter e2_w, e2_b;
  Parameter sab0_w, sab0_b;
  Parameter sab1_w, sab1_b;
  Parameter d1_w, d1_b;
  Parameter d0_w, d0_b;
  Parameter head_alpha_w, head_alpha_b;
  Parameter head_color_w, head_color_b;
  Parameter tru_z_w, tru_z_b, tru_r_w, tru_r_b, tru_h_w, tru_h_b;

  std::vector<Parameter*> parameters() {
    return {&enc0_w,       &enc0_b,       &enc1a_w,      &enc1a_b,      &enc1b_w,
            &enc1b_b,      &e0_w,         &e0_b,         &e1_w,         &e1_b,
            &e2_w,         &e2_b,         &sab0_w,       &sab0_b,       &sab1_w,
            &sab1_b,       &d1_w,         &d1_b,         &d0_w,         &d0_b,
            &head_alpha_w, &head_alpha_b, &head_color_w, &head_color_b, &tru_z_w,
            &tru_z_b,      &tru_r_w,      &tru_r_b,      &tru_h_w,      &tru_h_b};
  }
};

inline LtfiModel make_ltfi_model(int scale, std::uint64_t seed) {
  Rng rng(seed);
  LtfiModel m;
  m.scale = scale;
  auto conv = [&](const char* name, int co, int ci, int k) {
    return Parameter(std::string(name) + ".weight", detail::fan_in_conv(rng, co, ci, k));
  };
  auto bias = [&](const char* name, int co) {
    return Parameter(std::string(name) + ".bias", DTensor::zeros({co}));
  };
  m.enc0_w = conv("enc0", m.c_e, kLtfiEnc0Input, 3);
  m.enc0_b = bias("enc0", m.c_e);
  m.enc1a_w = conv("enc1a", m.c_e, kLtfiEnc1Input, 3);
  m.enc1a_b = bias("enc1a", m.c_e);
  m.enc1b_w = conv("enc1b", m.c_e * scale * scale, m.c_e, 3);
  m.enc1b_b = bias("enc1b", m.c_e * scale * scale);
  m.e0_w = conv("ffn.e0", m.c0, 2 * m.c_e, 3);
  m.e0_b = bias("ffn.e0", m.c0);
  m.e1_w = conv("ffn.e1", m.c_h, m.c0, 3);
  m.e1_b = bias("ffn.e1", m.c_h);
  m.e2_w = conv("ffn.e2", m.c2, m.c_h, 3);
  m.e2_b = bias("ffn.e2", m.c2);
  m.sab0_w = conv("ffn.sab0", 1, 2, 7);
  m.sab0_b = bias("ffn.sab0", 1);
  m.sab1_w = conv("ffn.sab1", 1, 2, 7);
  m.sab1_b = bias("ffn.sab1", 1);
  m.d1_w = conv("ffn.d1", m.c_h, m.c2 / 4 + m.c_h + m.c_h, 3);
  m.d1_b = bias("ffn.d1", m.c_h);
  m.d0_w = conv("ffn.d0", m.c0, m.c_h / 4 + m.c0, 3);
  m.d0_b = bias("ffn.d0", m.c0);
  m.head_alpha_w = conv("head.alpha", 1, m.c0, 1);
  m.head_alpha_b = bias("head.alpha", 1);
  m.head_color_w = conv("head.color", 3, m.c0, 1);
  m.head_color_b = bias("head.color", 3);
  const int tin = 2 * m.c_h;
  m.tru_z_w = conv("tru.update", m.c_h, tin, 3);
  m.tru_z_b = bias("tru.update", m.c_h);
  m.tru_r_w = conv("tru.reset", m.c_h, tin, 3);
  m.tru_r_b = bias("tru.reset", m.c_h);
  m.tru_h_w = conv("tru.cand", m.c_h, tin, 3);
  m.tru_h_b = bias("tru.cand", m.c_h);
  return m;
}

// Spatial attention gate on a skip connection: a 7x7 conv over the channel
// mean/max pair produces a sigmoid mask that scales every channel.
inline DTensor sab(const DTensor& skip, const Parameter& w, const Parameter& b) {
  const DTensor pooled = concat_channels({channel_mean(skip), channel_max(skip)});
  const DTensor a = sigmoid(conv2d(pooled, w.value, b.value, 1, 3));
  return mul(skip, a);
}

struct FfnOutput {
  DTensor alpha;  // 1,H,W in (0,1)
  DTensor color;  // 3,H,W in (0,1)
  DTensor fused;  // C_h, H/2, W/2, pre-head decoder feature
};

// U-Net fusion of the two warped-and-encoded branches. The warped temporal
// state joins at the half-resolution decoder level; without it the hidden
// state could never reach the output. Pixel-shuffle upsampling, crops handle
// odd extents.
inline FfnOutput ffn_forward(LtfiModel& model, const DTensor& f0, const DTensor& f1,
                             const DTensor& h_warped) {
  if (!f0.same_shape(f1)) throw DimensionError("ffn_forward: branch grids differ");
  const int h = f0.dim(1), w = f0.dim(2);
  const DTensor x = concat_channels({f0, f1});
  const DTensor e0 = relu(conv2d(x, model.e0_w.value, model.e0_b.value, 1, 1));
  const DTensor e1 = relu(conv2d(max_pool2(e0), model.e1_w.value, model.e1_b.value, 1, 1));
  const DTensor e2 = relu(conv2d(max_pool2(e1), model.e2_w.value, model.e2_b.value, 1, 1));
  const int h2 = e1.dim(1), w2 = e1.dim(2);
  if (h_warped.dim(0) != model.c_h || h_warped.dim(1) != h2 || h_warped.dim(2) != w2)
    throw DimensionError("ffn_forward: temporal state grid mismatch");
  const DTensor u1 = crop2d(pixel_shuffle(e2, 2), h2, w2);
  const DTensor d1 = relu(conv2d(concat_channels({u1, sab(e1, model.sab1_w, model.sab1_b),
                                                  h_warped}),
                                 model.d1_w.value, model.d1_b.value, 1, 1));
  const DTensor u0 = crop2d(pixel_shuffle(d1, 2), h, w);
  const DTensor d0 = relu(conv2d(concat_channels({u0, sab(e0, model.sab0_w, model.sab0_b)}),
                                 model.d0_w.value, model.d0_b.value, 1, 1));
  FfnOutput out;
  out.alpha = sigmoid(conv2d(d0, model.head_alpha_w.value, model.head_alpha_b.value, 1, 0));
  out.color = sigmoid(conv2d(d0, model.head_color_w.value, model.head_color_b.value, 1, 0));
  out.fused = d1;
  return out;
}

// I_half = a * pred + (1-a) * warped, with a forced to 1 on warp holes (the
// fused prediction must fill disocclusions).
inline DTensor blend(const DTensor& alpha, const DTensor& pred, const DTensor& warped,
                     const DTensor& hole_mask) {
  if (alpha.dim(0) != 1 || hole_mask.dim(0) != 1)
    throw DimensionError("blend: alpha and hole mask must be single channel");
  const DTensor a_eff = add(mul(alpha, one_minus(hole_mask)), hole_mask);
  return add(mul(pred, a_eff), mul(warped, one_minus(a_eff)));
}

// GRU update of the temporal state from the fused feature.
inline DTensor tru_update(LtfiModel& model, const DTensor& h_warped, const DTensor& fused) {
  if (h_warped.dim(0) != model.c_h || fused.dim(0) != model.c_h)
    throw DimensionError("tru_update: channel mismatch");
  const DTensor xh = concat_channels({fused, h_warped});
  const DTensor z = sigmoid(conv2d(xh, model.tru_z_w.value, model.tru_z_b.value, 1, 1));
  const DTensor r = sigmoid(conv2d(xh, model.tru_r_w.value, model.tru_r_b.value, 1, 1));
  const DTensor xr = concat_channels({fused, mul(r, h_warped)});
  const DTensor hc = tanh(conv2d(xr, model.tru_h_w.value, model.tru_h_b.value, 1, 1));
  return add(mul(one_minus(z), h_warped), mul(z, hc));
}

// High-resolution products of the preceding frame. In the live pipeline the
// color is the upsampled output and depth/normal are nearest-upsampled from
// the low-resolution bundle; training may substitute native renders.
struct Frame0Hr {
  DTensor color;   // 3,H,W
  DTensor depth;   // 1,H,W
  DTensor normal;  // 3,H,W
  Camera camera;   // HR intrinsics
};

// Nearest upsampling for geometry buffers (plain, not differentiable).
inline DTensor nearest_upsample(const DTensor& t, int s) {
  const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
  DTensor out = DTensor::zeros({c, h * s, w * s});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h * s; ++y)
      for (int x = 0; x < w * s; ++x)
        out[(static_cast<std::size_t>(ch) * h * s + y) * (w * s) + x] =
            t[(static_cast<std::size_t>(ch) * h + y / s) * w + x / s];
  return out;
}

// Every-other-pixel decimation to half resolution (plain).
inline DTensor decimate2(const DTensor& t) {
  const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
  const int oh = h / 2, ow = w / 2;
  DTensor out = DTensor::zeros({c, oh, ow});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x)
        out[(static_cast<std::size_t>(ch) * oh + y) * ow + x] =
            t[(static_cast<std::size_t>(ch) * h + 2 * y) * w + 2 * x];
  return out;
}

// Full interpolation step: warp both branches to the midpoint pose, encode,
// fuse, blend, update the temporal state. Consumes only frame-0 HR products
// and the frame-1 LR bundle; never requests an HR rasterization.
inline std::pair<DTensor, TemporalState> ltfi_forward(LtfiModel& model,
                                                      const Frame0Hr& frame0,
                                                      const FrameBundle& frame1_lr,
                                                      const Camera& cam_mid_hr,
                                                      const TemporalState& state,
                                                      const LtfiOptions& opt = {}) {
  if (!frame0.depth.defined() || !frame1_lr.depth.defined())
    throw ContractError("ltfi_forward: both frames need depth");
  const int hr_h = frame0.color.dim(1), hr_w = frame0.color.dim(2);
  const int s = model.scale;
  if (frame1_lr.height() * s != hr_h || frame1_lr.width() * s != hr_w)
    throw ContractError("ltfi_forward: frame-1 resolution does not match scale");

  // frame-0 branch at HR
  const float far0 = frame0.camera.far_clip;
  const MotionField field0 = motion_field(frame0.camera, cam_mid_hr, frame0.depth);
  const DTensor pay0 = concat_channels(
      {frame0.color, mul_scalar(frame0.depth, 1.0f / far0), frame0.normal});
  const WarpResult w0 = forward_warp(pay0, frame0.depth, field0);
  const DTensor hole0 = mask_to_tensor(w0.hole_mask, hr_h, hr_w);
  const DTensor warped0_color = slice_channels(w0.payload, 0, 3);
  const DTensor enc0_in = concat_channels({w0.payload, hole0});
  const DTensor f0 = relu(conv2d(enc0_in, model.enc0_w.value, model.enc0_b.value, 1, 1));

  // frame-1 branch at LR, pixel-shuffled up after encoding
  const Camera cam_mid_lr = cam_mid_hr.scaled_down(s);
  const float far1 = frame1_lr.camera.far_clip;
  const MotionField field1 = motion_field(frame1_lr.camera, cam_mid_lr, frame1_lr.depth);
  const DTensor pay1 = concat_channels(
      {frame1_lr.color, mul_scalar(frame1_lr.depth, 1.0f / far1), frame1_lr.normal});
  const WarpResult w1 = forward_warp(pay1, frame1_lr.depth, field1);
  const int lr_h = frame1_lr.height(), lr_w = frame1_lr.width();
  DTensor warped_grads;
  if (opt.no_gi) {
    warped_grads = DTensor::zeros({6, lr_h, lr_w});
  } else {
    warped_grads = warp_gradients(
                       concat_channels({frame1_lr.grad_x, frame1_lr.grad_y}).detached(),
                       frame1_lr.depth, field1)
                       .payload;
  }
  const DTensor hole1 = mask_to_tensor(w1.hole_mask, lr_h, lr_w);
  const DTensor enc1_in = concat_channels({w1.payload, warped_grads, hole1});
  const DTensor f1a = relu(conv2d(enc1_in, model.enc1a_w.value, model.enc1a_b.value, 1, 1));
  const DTensor f1b = conv2d(f1a, model.enc1b_w.value, model.enc1b_b.value, 1, 1);
  const DTensor f1 = pixel_shuffle(f1b, s);

  // temporal state, warped to the midpoint at half resolution
  const int h2 = (hr_h + 1) / 2, w2 = (hr_w + 1) / 2;
  DTensor h_warped;
  if (opt.no_tru || state.fresh()) {
    h_warped = DTensor::zeros({model.c_h, h2, w2});
  } else {
    const MotionField fh =
        motion_field(state.camera_half, cam_mid_hr.scaled_down(2), state.depth_half);
    h_warped = forward_warp(state.h, state.depth_half, fh).payload;
  }

  const FfnOutput ffn = ffn_forward(model, f0, f1, h_warped);
  const DTensor out = clamp01(blend(ffn.alpha, ffn.color, warped0_color, hole0));

  TemporalState next;
  next.frame_index = state.frame_index + 1;
  next.camera_half = cam_mid_hr.scaled_down(2);
  if (opt.no_tru) {
    next.h = DTensor::zeros({model.c_h, h2, w2});
  } else {
    next.h = tru_update(model, h_warped, ffn.fused);
  }
  // depth at the midpoint for the next warp: warped frame-0 depth, holes
  // filled with far, decimated to the state grid
  DTensor d_mid = slice_channels(w0.payload, 3, 4).detached();
  for (std::size_t i = 0; i < d_mid.numel(); ++i)
    d_mid[i] = w0.hole_mask[i] ? cam_mid_hr.far_clip : d_mid[i] * far0;
  next.depth_half = decimate2(d_mid);
  return {out, next};
}

}  // namespace splat
