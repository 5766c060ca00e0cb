#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "splat/error.hpp"

namespace splat {

namespace detail {

struct TensorImpl {
  std::vector<int> shape;
  std::vector<float> data;
  bool requires_grad = false;
  std::vector<float> grad;  // allocated lazily, only for requires_grad tensors

  std::size_t numel() const { return data.size(); }

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
  }
};

inline std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw DimensionError("tensor extent must be positive");
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

}  // namespace detail

// Eager tape of backward rules. Recorded in forward execution order and
// replayed in exact reverse; one backward pass consumes the tape.
class Tape {
 public:
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

  void run_backward() {
    if (consumed_) throw StateError("tape already consumed by a backward pass");
    consumed_ = true;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

namespace detail {
inline thread_local Tape* g_active_tape = nullptr;
}

inline Tape* active_tape() { return detail::g_active_tape; }

// RAII activation of a tape on the current thread. Ops record backward rules
// only while a tape is active; without one they run in pure inference mode.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : prev_(detail::g_active_tape) {
    detail::g_active_tape = &tape;
  }
  ~TapeScope() { detail::g_active_tape = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// N-dimensional float32 array with optional reverse-mode gradient tracking.
// Channels-first layout for images (C,H,W), row-major storage. Copies are
// shallow; the underlying buffer is shared.
class DTensor {
 public:
  DTensor() = default;

  static DTensor zeros(std::vector<int> shape, bool requires_grad = false) {
    auto impl = std::make_shared<detail::TensorImpl>();
    const std::size_t n = detail::shape_numel(shape);
    impl->shape = std::move(shape);
    impl->data.assign(n, 0.0f);
    impl->requires_grad = requires_grad;
    DTensor t;
    t.p_ = std::move(impl);
    return t;
  }

  static DTensor full(std::vector<int> shape, float value, bool requires_grad = false) {
    DTensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.p_->data.begin(), t.p_->data.end(), value);
    return t;
  }

  static DTensor from(std::vector<int> shape, std::vector<float> data,
                      bool requires_grad = false) {
    if (detail::shape_numel(shape) != data.size())
      throw DimensionError("data length does not match shape");
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    DTensor t;
    t.p_ = std::move(impl);
    return t;
  }

  static DTensor scalar(float v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(p_); }
  const std::vector<int>& shape() const { return p_->shape; }
  int dim(int i) const { return p_->shape.at(static_cast<std::size_t>(i)); }
  int ndim() const { return static_cast<int>(p_->shape.size()); }
  std::size_t numel() const { return p_->numel(); }

  float* data() { return p_->data.data(); }
  const float* data() const { return p_->data.data(); }
  std::vector<float>& vec() { return p_->data; }
  const std::vector<float>& vec() const { return p_->data; }

  float& operator[](std::size_t i) { return p_->data[i]; }
  float operator[](std::size_t i) const { return p_->data[i]; }

  float item() const {
    if (numel() != 1) throw ContractError("item() requires a scalar tensor");
    return p_->data[0];
  }

  bool requires_grad() const { return p_->requires_grad; }
  void set_requires_grad(bool rg) {
    p_->requires_grad = rg;
    if (!rg) p_->grad.clear();
  }

  bool has_grad() const { return !p_->grad.empty(); }
  std::vector<float>& grad() {
    if (p_->grad.empty()) throw StateError("tensor has no gradient buffer");
    return p_->grad;
  }
  const std::vector<float>& grad() const {
    if (p_->grad.empty()) throw StateError("tensor has no gradient buffer");
    return p_->grad;
  }
  void zero_grad() {
    if (!p_->grad.empty()) std::fill(p_->grad.begin(), p_->grad.end(), 0.0f);
  }

  // Detached view: same buffer, no grad tracking.
  DTensor detached() const {
    DTensor t;
    t.p_ = std::make_shared<detail::TensorImpl>();
    t.p_->shape = p_->shape;
    t.p_->data = p_->data;
    return t;
  }

  DTensor clone() const {
    DTensor t = DTensor::from(p_->shape, p_->data, p_->requires_grad);
    return t;
  }

  bool same_shape(const DTensor& o) const { return p_->shape == o.p_->shape; }

  bool all_finite() const {
    for (float v : p_->data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::shared_ptr<detail::TensorImpl> impl() const { return p_; }

 private:
  std::shared_ptr<detail::TensorImpl> p_;

  friend DTensor wrap_impl(std::shared_ptr<detail::TensorImpl>);
};

inline DTensor wrap_impl(std::shared_ptr<detail::TensorImpl> impl) {
  DTensor t;
  t.p_ = std::move(impl);
  return t;
}

namespace detail {

// Marks `out` as grad-requiring and records `fn` when a tape is active and
// any input requires grad. Returns true when recording happened.
inline bool maybe_record(DTensor& out, bool any_input_rg, std::function<void()> fn) {
  Tape* tape = active_tape();
  if (!tape || !any_input_rg) return false;
  out.impl()->requires_grad = true;
  tape->record(std::move(fn));
  return true;
}

inline const std::vector<float>* grad_of(const std::shared_ptr<TensorImpl>& impl) {
  return impl->grad.empty() ? nullptr : &impl->grad;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction ops. Accumulation is plain row-major order so
// results are reproducible run to run.

namespace detail {
inline void check_same_shape(const DTensor& a, const DTensor& b, const char* op) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(op) + ": shape mismatch");
}
}  // namespace detail

inline DTensor add(const DTensor& a, const DTensor& b) {
  detail::check_same_shape(a, b, "add");
  DTensor out = DTensor::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
  auto ap = a.impl(), bp = b.impl(), op = out.impl();
  detail::maybe_record(out, a.requires_grad() || b.requires_grad(), [ap, bp, op] {
    auto* g = detail::grad_of(op);
    if (!g) return;
    if (ap->requires_grad) {
      ap->ensure_grad();
      for (std::size_t i = 0; i < g->size(); ++i) ap->grad[i] += (*g)[i];
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      for (std::size_t i = 0; i < g->size(); ++i) bp->grad[i] += (*g)[i];
    }
  });
  return out;
}

inline DTensor sub(const DTensor& a, const DTensor& b) {
  detail::check_same_shape(a, b, "sub");
  DTensor out = DTensor::zeros(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
  auto ap = a.impl(), bp = b.impl(), op = out.impl();
  detail::maybe_record(out, a.requires_grad() || b.requires_grad(), [ap, bp, op] {
    auto* g = detail::grad_of(op);
    if (!g) return;
    if (ap->requires_grad) {
      ap->ensure_grad();
      for (std::size_t i = 0; i < g->size(); ++i) ap->grad[i] += (*g)[i];
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      for (std::size_t i = 0; i < g->size(); ++i) bp->grad[i] -= (*g)[i];
    }
  });
  return out;
}

// Elementwise product. Also accepts a (1,H,W) mask/weight against a (C,H,W)
// tensor in either argument position; the single-channel side broadcasts
// across channels.
inline DTensor mul(const DTensor& a, const DTensor& b) {
  const bool bc_b = a.ndim() == 3 && b.ndim() == 3 && b.dim(0) == 1 && a.dim(0) != 1 &&
                    a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2);
  const bool bc_a = a.ndim() == 3 && b.ndim() == 3 && a.dim(0) == 1 && b.dim(0) != 1 &&
                    a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2);
  if (!bc_a && !bc_b) detail::check_same_shape(a, b, "mul");

  const DTensor& wide = bc_a ? b : a;
  const DTensor& narrow = bc_a ? a : (bc_b ? b : b);
  DTensor out = DTensor::zeros(wide.shape());

  if (bc_a || bc_b) {
    const int c = wide.dim(0);
    const std::size_t hw = static_cast<std::size_t>(wide.dim(1)) * wide.dim(2);
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i)
        out[ch * hw + i] = wide[ch * hw + i] * narrow[i];
  } else {
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  }

  auto ap = a.impl(), bp = b.impl(), op = out.impl();
  const bool broadcast = bc_a || bc_b;
  const bool a_is_narrow = bc_a;
  detail::maybe_record(out, a.requires_grad() || b.requires_grad(),
                       [ap, bp, op, broadcast, a_is_narrow] {
    auto* g = detail::grad_of(op);
    if (!g) return;
    if (!broadcast) {
      if (ap->requires_grad) {
        ap->ensure_grad();
        for (std::size_t i = 0; i < g->size(); ++i) ap->grad[i] += (*g)[i] * bp->data[i];
      }
      if (bp->requires_grad) {
        bp->ensure_grad();
        for (std::size_t i = 0; i < g->size(); ++i) bp->grad[i] += (*g)[i] * ap->data[i];
      }
      return;
    }
    auto& widep = a_is_narrow ? bp : ap;
    auto& narrowp = a_is_narrow ? ap : bp;
    const int c = widep->shape[0];
    const std::size_t hw = narrowp->numel();
    if (widep->requires_grad) {
      widep->ensure_grad();
      for (int ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hw; ++i)
          widep->grad[ch * hw + i] += (*g)[ch * hw + i] * narrowp->data[i];
    }
    if (narrowp->requires_grad) {
      narrowp->ensure_grad();
      for (int ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hw; ++i)
          narrowp->grad[i] += (*g)[ch * hw + i] * widep->data[ch * hw + i];
    }
  });
  return out;
}

inline DTensor add_scalar(const DTensor& a, float s) {
  DTensor out = DTensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + s;
  auto ap = a.impl(), op = out.impl();
  detail::maybe_record(out, a.requires_grad(), [ap, op] {
    auto* g = detail::grad_of(op);
    if (!g || !ap->requires_grad) return;
    ap->ensure_grad();
    for (std::size_t i = 0; i < g->size(); ++i) ap->grad[i] += (*g)[i];
  });
  return out;
}

inline DTensor mul_scalar(const DTensor& a, float s) {
  DTensor out = DTensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
  auto ap = a.impl(), op = out.impl();
  detail::maybe_record(out, a.requires_grad(), [ap, op, s] {
    auto* g = detail::grad_of(op);
    if (!g || !ap->requires_grad) return;
    ap->ensure_grad();
    for (std::size_t i = 0; i < g->size(); ++i) ap->grad[i] += (*g)[i] * s;
  });
  return out;
}

// s - x, handy for gate complements.
inline DTensor one_minus(const DTensor& a) {
  DTensor out = DTensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = 1.0f - a[i];
  auto ap = a.impl(), op = out.impl();
  detail::maybe_record(out, a.requires_grad(), [ap, op] {
    auto* g = detail::grad_of(op);
    if (!g || !ap->requires_grad) return;
    ap->ensure_grad();
    for (std::size_t i = 0; i < g->size(); ++i) ap->grad[i] -= (*g)[i];
  });
  return out;
}

inline DTensor sigmoid(const DTensor& a) {
  DTensor out = DTensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i)
    out[i] = 1.0f / (1.0f + std::exp(-a[i]));
  auto ap = a.impl(), op = out.impl();
  detail::maybe_record(out, a.requires_grad(), [ap, op] {
    auto* g = detail::grad_of(op);
    if (!g || !ap->requires_grad) return;
    ap->ensure_grad();
    for (std::size_t i = 0; i < g->size(); ++i) {
      const float s = op->data[i];
      ap->grad[i] += (*g)[i] * s * (1.0f - s);
    }
  });
  return out;
}

inline DTensor tanh(const DTensor& a) {
  DTensor out = DTensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = std::tanh(a[i]);
  auto ap = a.impl(), op = out.impl();
  detail::maybe_record(out, a.requires_grad(), [ap, op] {
    auto* g = detail::grad_of(op);
    if (!g || !ap->requires_grad) return;
    ap->ensure_grad();
    for (std::size_t i = 0; i < g->size(); ++i) {
      const float t = op->data[i];
      ap->grad[i] += (*g)[i] * (1.0f - t * t);
    }
  });
  return out;
}

inline DTensor relu(const DTensor& a) {
  DTensor out = DTensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] > 0 ? a[i] : 0.0f;
  auto ap = a.impl(), op = out.impl();
  detail::maybe_record(out, a.requires_grad(), [ap, op] {
    auto* g = detail::grad_of(op);
    if (!g || !ap->requires_grad) return;
    ap->ensure_grad();
    for (std::size_t i = 0; i < g->size(); ++i)
      if (ap->data[i] > 0) ap->grad[i] += (*g)[i];
  });
  return out;
}

inline DTensor abs(const DTensor& a) {
  DTensor out = DTensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = std::fabs(a[i]);
  auto ap = a.impl(), op = out.impl();
  detail::maybe_record(out, a.requires_grad(), [ap, op] {
    auto* g = detail::grad_of(op);
    if (!g || !ap->requires_grad) return;
    ap->ensure_grad();
    for (std::size_t i = 0; i < g->size(); ++i) {
      const float x = ap->data[i];
      ap->grad[i] += (x > 0 ? (*g)[i] : (x < 0 ? -(*g)[i] : 0.0f));
    }
  });
  return out;
}

// Requires strictly positive input for a finite gradient; a tiny floor guards
// the subgradient at 0.
inline DTensor sqrt(const DTensor& a) {
  DTensor out = DTensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = std::sqrt(a[i]);
  auto ap = a.impl(), op = out.impl();
  detail::maybe_record(out, a.requires_grad(), [ap, op] {
    auto* g = detail::grad_of(op);
    if (!g || !ap->requires_grad) return;
    ap->ensure_grad();
    for (std::size_t i = 0; i < g->size(); ++i) {
      const float r = op->data[i] > 1e-12f ? op->data[i] : 1e-12f;
      ap->grad[i] += (*g)[i] * 0.5f / r;
    }
  });
  return out;
}

inline DTensor clamp01(const DTensor& a) {
  DTensor out = DTensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i)
    out[i] = a[i] < 0.0f ? 0.0f : (a[i] > 1.0f ? 1.0f : a[i]);
  auto ap = a.impl(), op = out.impl();
  detail::maybe_record(out, a.requires_grad(), [ap, op] {
    auto* g = detail::grad_of(op);
    if (!g || !ap->requires_grad) return;
    ap->ensure_grad();
    for (std::size_t i = 0; i < g->size(); ++i)
      if (ap->data[i] >= 0.0f && ap->data[i] <= 1.0f) ap->grad[i] += (*g)[i];
  });
  return out;
}

inline DTensor sum(const DTensor& a) {
  float s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i];
  DTensor out = DTensor::scalar(s);
  auto ap = a.impl(), op = out.impl();
  detail::maybe_record(out, a.requires_grad(), [ap, op] {
    auto* g = detail::grad_of(op);
    if (!g || !ap->requires_grad) return;
    ap->ensure_grad();
    for (std::size_t i = 0; i < ap->data.size(); ++i) ap->grad[i] += (*g)[0];
  });
  return out;
}

inline DTensor mean(const DTensor& a) {
  const float inv = 1.0f / static_cast<float>(a.numel());
  float s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i];
  DTensor out = DTensor::scalar(s * inv);
  auto ap = a.impl(), op = out.impl();
  detail::maybe_record(out, a.requires_grad(), [ap, op, inv] {
    auto* g = detail::grad_of(op);
    if (!g || !ap->requires_grad) return;
    ap->ensure_grad();
    for (std::size_t i = 0; i < ap->data.size(); ++i) ap->grad[i] += (*g)[0] * inv;
  });
  return out;
}

inline DTensor concat_channels(const std::vector<DTensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: empty input");
  const int h = parts[0].dim(1), w = parts[0].dim(2);
  int c_total = 0;
  bool any_rg = false;
  for (const auto& p : parts) {
    if (p.ndim() != 3 || p.dim(1) != h || p.dim(2) != w)
      throw DimensionError("concat_channels: spatial extents differ");
    c_total += p.dim(0);
    any_rg = any_rg || p.requires_grad();
  }
  DTensor out = DTensor::zeros({c_total, h, w});
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t n = p.numel();
    std::copy(p.data(), p.data() + n, out.data() + off);
    off += n;
  }
  std::vector<std::shared_ptr<detail::TensorImpl>> impls;
  impls.reserve(parts.size());
  for (const auto& p : parts) impls.push_back(p.impl());
  auto op = out.impl();
  detail::maybe_record(out, any_rg, [impls, op, hw] {
    auto* g = detail::grad_of(op);
    if (!g) return;
    (void)hw;
    std::size_t off2 = 0;
    for (auto& ip : impls) {
      const std::size_t n = ip->data.size();
      if (ip->requires_grad) {
        ip->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) ip->grad[i] += (*g)[off2 + i];
      }
      off2 += n;
    }
  });
  return out;
}

// Channel slice [c0, c1) of a (C,H,W) tensor.
inline DTensor slice_channels(const DTensor& a, int c0, int c1) {
  if (a.ndim() != 3) throw DimensionError("slice_channels: expected (C,H,W)");
  if (c0 < 0 || c1 <= c0 || c1 > a.dim(0))
    throw DimensionError("slice_channels: bad channel range");
  const int h = a.dim(1), w = a.dim(2);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  DTensor out = DTensor::zeros({c1 - c0, h, w});
  std::copy(a.data() + c0 * hw, a.data() + c1 * hw, out.data());
  auto ap = a.impl(), op = out.impl();
  detail::maybe_record(out, a.requires_grad(), [ap, op, c0, hw] {
    auto* g = detail::grad_of(op);
    if (!g || !ap->requires_grad) return;
    ap->ensure_grad();
    for (std::size_t i = 0; i < g->size(); ++i) ap->grad[c0 * hw + i] += (*g)[i];
  });
  return out;
}

// Per-pixel mean over channels: (C,H,W) -> (1,H,W).
inline DTensor channel_mean(const DTensor& a) {
  if (a.ndim() != 3) throw DimensionError("channel_mean: expected (C,H,W)");
  const int c = a.dim(0);
  const std::size_t hw = static_cast<std::size_t>(a.dim(1)) * a.dim(2);
  DTensor out = DTensor::zeros({1, a.dim(1), a.dim(2)});
  const float inv = 1.0f / static_cast<float>(c);
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < hw; ++i) out[i] += a[ch * hw + i];
  for (std::size_t i = 0; i < hw; ++i) out[i] *= inv;
  auto ap = a.impl(), op = out.impl();
  detail::maybe_record(out, a.requires_grad(), [ap, op, inv, hw] {
    auto* g = detail::grad_of(op);
    if (!g || !ap->requires_grad) return;
    ap->ensure_grad();
    const int c = ap->shape[0];
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i) ap->grad[ch * hw + i] += (*g)[i] * inv;
  });
  return out;
}

// Per-pixel max over channels: (C,H,W) -> (1,H,W); backward routes to the
// argmax channel (lowest index on ties).
inline DTensor channel_max(const DTensor& a) {
  if (a.ndim() != 3) throw DimensionError("channel_max: expected (C,H,W)");
  const int c = a.dim(0);
  const std::size_t hw = static_cast<std::size_t>(a.dim(1)) * a.dim(2);
  DTensor out = DTensor::zeros({1, a.dim(1), a.dim(2)});
  auto arg = std::make_shared<std::vector<std::int32_t>>(hw, 0);
  for (std::size_t i = 0; i < hw; ++i) {
    float best = a[i];
    std::int32_t bc = 0;
    for (int ch = 1; ch < c; ++ch)
      if (a[ch * hw + i] > best) {
        best = a[ch * hw + i];
        bc = ch;
      }
    out[i] = best;
    (*arg)[i] = bc;
  }
  auto ap = a.impl(), op = out.impl();
  detail::maybe_record(out, a.requires_grad(), [ap, op, arg, hw] {
    auto* g = detail::grad_of(op);
    if (!g || !ap->requires_grad) return;
    ap->ensure_grad();
    for (std::size_t i = 0; i < hw; ++i)
      ap->grad[static_cast<std::size_t>((*arg)[i]) * hw + i] += (*g)[i];
  });
  return out;
}

// Gathers pixels of a (C,H,W) tensor through a precomputed destination->source
// index map (one entry per destination pixel, -1 for holes). The map itself is
// not differentiated; gradients scatter-add back through the indices. Backbone
// of warped-feature and warped-prediction paths.
inline DTensor gather_pixels(const DTensor& src, const std::vector<std::int32_t>& dst_to_src,
                             int out_h, int out_w) {
  if (src.ndim() != 3) throw DimensionError("gather_pixels: expected (C,H,W) source");
  const int c = src.dim(0);
  const std::size_t src_hw = static_cast<std::size_t>(src.dim(1)) * src.dim(2);
  const std::size_t out_hw = static_cast<std::size_t>(out_h) * out_w;
  if (dst_to_src.size() != out_hw)
    throw DimensionError("gather_pixels: index map size mismatch");
  DTensor out = DTensor::zeros({c, out_h, out_w});
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < out_hw; ++i) {
      const std::int32_t s = dst_to_src[i];
      if (s >= 0) out[ch * out_hw + i] = src[ch * src_hw + static_cast<std::size_t>(s)];
    }
  auto sp = src.impl(), op = out.impl();
  auto map = std::make_shared<std::vector<std::int32_t>>(dst_to_src);
  detail::maybe_record(out, src.requires_grad(), [sp, op, map, src_hw, out_hw] {
    auto* g = detail::grad_of(op);
    if (!g || !sp->requires_grad) return;
    sp->ensure_grad();
    const int c = sp->shape[0];
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < out_hw; ++i) {
        const std::int32_t s = (*map)[i];
        if (s >= 0)
          sp->grad[ch * src_hw + static_cast<std::size_t>(s)] += (*g)[ch * out_hw + i];
      }
  });
  return out;
}

// Top-left crop of a (C,H,W) tensor; backward zero-pads.
inline DTensor crop2d(const DTensor& a, int out_h, int out_w) {
  if (a.ndim() != 3) throw DimensionError("crop2d: expected (C,H,W)");
  const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
  if (out_h > h || out_w > w) throw DimensionError("crop2d: crop larger than input");
  DTensor out = DTensor::zeros({c, out_h, out_w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x)
        out[(static_cast<std::size_t>(ch) * out_h + y) * out_w + x] =
            a[(static_cast<std::size_t>(ch) * h + y) * w + x];
  auto ap = a.impl(), op = out.impl();
  detail::maybe_record(out, a.requires_grad(), [ap, op, out_h, out_w] {
    auto* g = detail::grad_of(op);
    if (!g || !ap->requires_grad) return;
    ap->ensure_grad();
    const int c = ap->shape[0], h = ap->shape[1], w = ap->shape[2];
    (void)h;
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x)
          ap->grad[(static_cast<std::size_t>(ch) * ap->shape[1] + y) * w + x] +=
              (*g)[(static_cast<std::size_t>(ch) * out_h + y) * out_w + x];
  });
  return out;
}

// Horizontal forward difference, output width W-1.
inline DTensor image_dx(const DTensor& a) {
  if (a.ndim() != 3) throw DimensionError("image_dx: expected (C,H,W)");
  const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
  if (w < 2) throw DimensionError("image_dx: width must be >= 2");
  DTensor out = DTensor::zeros({c, h, w - 1});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y) {
      const float* row = a.data() + (static_cast<std::size_t>(ch) * h + y) * w;
      float* orow = out.data() + (static_cast<std::size_t>(ch) * h + y) * (w - 1);
      for (int x = 0; x < w - 1; ++x) orow[x] = row[x + 1] - row[x];
    }
  auto ap = a.impl(), op = out.impl();
  detail::maybe_record(out, a.requires_grad(), [ap, op] {
    auto* g = detail::grad_of(op);
    if (!g || !ap->requires_grad) return;
    ap->ensure_grad();
    const int c = ap->shape[0], h = ap->shape[1], w = ap->shape[2];
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y) {
        float* grow = ap->grad.data() + (static_cast<std::size_t>(ch) * h + y) * w;
        const float* og = g->data() + (static_cast<std::size_t>(ch) * h + y) * (w - 1);
        for (int x = 0; x < w - 1; ++x) {
          grow[x + 1] += og[x];
          grow[x] -= og[x];
        }
      }
  });
  return out;
}

// Vertical forward difference, output height H-1.
inline DTensor image_dy(const DTensor& a) {
  if (a.ndim() != 3) throw DimensionError("image_dy: expected (C,H,W)");
  const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
  if (h < 2) throw DimensionError("image_dy: height must be >= 2");
  DTensor out = DTensor::zeros({c, h - 1, w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h - 1; ++y)
      for (int x = 0; x < w; ++x)
        out[(static_cast<std::size_t>(ch) * (h - 1) + y) * w + x] =
            a[(static_cast<std::size_t>(ch) * h + y + 1) * w + x] -
            a[(static_cast<std::size_t>(ch) * h + y) * w + x];
  auto ap = a.impl(), op = out.impl();
  detail::maybe_record(out, a.requires_grad(), [ap, op] {
    auto* g = detail::grad_of(op);
    if (!g || !ap->requires_grad) return;
    ap->ensure_grad();
    const int c = ap->shape[0], h = ap->shape[1], w = ap->shape[2];
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h - 1; ++y)
        for (int x = 0; x < w; ++x) {
          const float og = (*g)[(static_cast<std::size_t>(ch) * (h - 1) + y) * w + x];
          ap->grad[(static_cast<std::size_t>(ch) * h + y + 1) * w + x] += og;
          ap->grad[(static_cast<std::size_t>(ch) * h + y) * w + x] -= og;
        }
  });
  return out;
}

// 5-point Laplacian [[0,1,0],[1,-4,1],[0,1,0]] with replicate padding,
// applied per channel. Backward mirrors the clamped gather as a scatter.
inline DTensor laplacian5(const DTensor& a) {
  if (a.ndim() != 3) throw DimensionError("laplacian5: expected (C,H,W)");
  const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
  DTensor out = DTensor::zeros(a.shape());
  auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
  for (int ch = 0; ch < c; ++ch) {
    const float* p = a.data() + static_cast<std::size_t>(ch) * h * w;
    float* o = out.data() + static_cast<std::size_t>(ch) * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float up = p[clampi(y - 1, 0, h - 1) * w + x];
        const float dn = p[clampi(y + 1, 0, h - 1) * w + x];
        const float lf = p[y * w + clampi(x - 1, 0, w - 1)];
        const float rt = p[y * w + clampi(x + 1, 0, w - 1)];
        o[y * w + x] = up + dn + lf + rt - 4.0f * p[y * w + x];
      }
  }
  auto ap = a.impl(), op = out.impl();
  detail::maybe_record(out, a.requires_grad(), [ap, op] {
    auto* g = detail::grad_of(op);
    if (!g || !ap->requires_grad) return;
    ap->ensure_grad();
    const int c = ap->shape[0], h = ap->shape[1], w = ap->shape[2];
    auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
    for (int ch = 0; ch < c; ++ch) {
      float* gi = ap->grad.data() + static_cast<std::size_t>(ch) * h * w;
      const float* go = g->data() + static_cast<std::size_t>(ch) * h * w;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const float v = go[y * w + x];
          gi[clampi(y - 1, 0, h - 1) * w + x] += v;
          gi[clampi(y + 1, 0, h - 1) * w + x] += v;
          gi[y * w + clampi(x - 1, 0, w - 1)] += v;
          gi[y * w + clampi(x + 1, 0, w - 1)] += v;
          gi[y * w + x] -= 4.0f * v;
        }
    }
  });
  return out;
}

// Backpropagates from a scalar loss through the active tape. The tape must be
// the one the loss was recorded on and is consumed by the call.
inline void backward(const DTensor& loss) {
  if (loss.numel() != 1)
    throw ContractError("backward: loss must be a scalar tensor");
  Tape* tape = active_tape();
  if (!tape) throw StateError("backward: no active tape");
  if (loss.requires_grad()) {
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] = 1.0f;
  }
  tape->run_backward();
}

}  // namespace splat
