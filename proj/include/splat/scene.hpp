#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "splat/error.hpp"
#include "splat/geometry.hpp"
#include "splat/rng.hpp"
#include "splat/sh.hpp"

namespace splat {

// Explicit Gaussian scene. Storage mirrors the PLY interchange: opacity as a
// logit, scale as log-scale, rotations as (w,x,y,z) quaternions that are
// renormalized on construction/load. sh is (N,3,B) row-major.
struct GaussianScene {
  int count = 0;
  int sh_basis = 1;  // B = (L+1)^2, L in 0..3
  std::vector<Vec3> centers;
  std::vector<Quat> rotations;
  std::vector<Vec3> log_scales;
  std::vector<float> opacity_logits;
  std::vector<float> sh;  // count * 3 * sh_basis

  const float* sh_of(int i) const {
    return sh.data() + static_cast<std::size_t>(i) * 3 * sh_basis;
  }
  float* sh_of(int i) {
    return sh.data() + static_cast<std::size_t>(i) * 3 * sh_basis;
  }

  float opacity(int i) const {
    return 1.0f / (1.0f + std::exp(-opacity_logits[static_cast<std::size_t>(i)]));
  }

  Vec3 scale(int i) const {
    const Vec3& s = log_scales[static_cast<std::size_t>(i)];
    return {std::exp(s.x), std::exp(s.y), std::exp(s.z)};
  }

  // Renormalizes quaternions that deviate from unit norm by more than 1e-6.
  // Already-unit rotations are left untouched so load/save round trips stay
  // f32-exact.
  void renormalize_rotations() {
    for (auto& q : rotations) {
      const float n = q.norm();
      if (n < 1e-6f) throw DataError("scene: zero-norm rotation quaternion");
      if (std::fabs(n - 1.0f) > 1e-6f) q = q.normalized();
    }
  }

  void validate() const {
    if (static_cast<int>(centers.size()) != count ||
        static_cast<int>(rotations.size()) != count ||
        static_cast<int>(log_scales.size()) != count ||
        static_cast<int>(opacity_logits.size()) != count ||
        sh.size() != static_cast<std::size_t>(count) * 3 * sh_basis)
      throw DataError("scene: field sizes disagree with count");
  }
};

struct SyntheticSceneSpec {
  std::uint64_t seed = 1;
  int count = 1000;
  float extent = 2.0f;  // box edge length, centered at the origin
  int sh_degree = 1;
};

// Deterministic procedural scene: centers uniform in the extent box, scales
// log-uniform in [0.01, 0.2]*extent, opacities uniform in (0.3, 0.95), SH dc
// uniform in [-0.5, 0.5] with smaller higher-order terms.
inline GaussianScene generate_synthetic_scene(const SyntheticSceneSpec& spec) {
  if (spec.count < 1) throw RangeError("synthetic scene: count must be >= 1");
  if (spec.sh_degree < 0 || spec.sh_degree > 3)
    throw RangeError("synthetic scene: sh degree must be in 0..3");
  Rng rng(spec.seed);
  GaussianScene s;
  s.count = spec.count;
  s.sh_basis = sh_basis_size(spec.sh_degree);
  s.centers.resize(spec.count);
  s.rotations.resize(spec.count);
  s.log_scales.resize(spec.count);
  s.opacity_logits.resize(spec.count);
  s.sh.resize(static_cast<std::size_t>(spec.count) * 3 * s.sh_basis);

  const float half = 0.5f * spec.extent;
  const float log_lo = std::log(0.01f * spec.extent);
  const float log_hi = std::log(0.2f * spec.extent);
  for (int i = 0; i < spec.count; ++i) {
    s.centers[i] = {rng.uniform(-half, half), rng.uniform(-half, half),
                    rng.uniform(-half, half)};
    Quat q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    if (q.norm() < 1e-6f) q = Quat{1, 0, 0, 0};
    s.rotations[i] = q.normalized();
    s.log_scales[i] = {rng.uniform(log_lo, log_hi), rng.uniform(log_lo, log_hi),
                       rng.uniform(log_lo, log_hi)};
    const float op = rng.uniform(0.3f, 0.95f);
    s.opacity_logits[i] = std::log(op / (1.0f - op));
    float* co = s.sh_of(i);
    for (int c = 0; c < 3; ++c) {
      co[c * s.sh_basis + 0] = rng.uniform(-0.5f, 0.5f);
      for (int b = 1; b < s.sh_basis; ++b)
        co[c * s.sh_basis + b] = rng.uniform(-0.1f, 0.1f);
    }
  }
  return s;
}

}  // namespace splat
