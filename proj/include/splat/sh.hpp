#pragma once

#include <array>
#include <cmath>

#include "splat/error.hpp"
#include "splat/geometry.hpp"

namespace splat {

// Real spherical harmonics up to degree 3, with the basis ordering and sign
// convention used by the common 3DGS PLY interchange (so coefficients loaded
// from such files evaluate to the intended colors).

inline constexpr float kShC0 = 0.28209479177387814f;
inline constexpr float kShC1 = 0.4886025119029199f;
inline constexpr std::array<float, 5> kShC2 = {
    1.0925484305920792f, -1.0925484305920792f, 0.31539156525252005f,
    -1.0925484305920792f, 0.5462742152960396f};
inline constexpr std::array<float, 7> kShC3 = {
    -0.5900435899266435f, 2.890611442640554f,  -0.4570457994644658f,
    0.3731763325901154f,  -0.4570457994644658f, 1.445305721320277f,
    -0.5900435899266435f};

inline int sh_basis_size(int degree) { return (degree + 1) * (degree + 1); }

inline int sh_degree_from_basis(int basis) {
  switch (basis) {
    case 1: return 0;
    case 4: return 1;
    case 9: return 2;
    case 16: return 3;
    default: throw DimensionError("SH basis size must be one of 1, 4, 9, 16");
  }
}

// Evaluates the basis at a unit direction. `out` must hold basis_size(degree)
// entries.
inline void sh_basis(int degree, const Vec3& d, float* out) {
  out[0] = kShC0;
  if (degree < 1) return;
  const float x = d.x, y = d.y, z = d.z;
  out[1] = -kShC1 * y;
  out[2] = kShC1 * z;
  out[3] = -kShC1 * x;
  if (degree < 2) return;
  const float xx = x * x, yy = y * y, zz = z * z;
  const float xy = x * y, yz = y * z, xz = x * z;
  out[4] = kShC2[0] * xy;
  out[5] = kShC2[1] * yz;
  out[6] = kShC2[2] * (2.0f * zz - xx - yy);
  out[7] = kShC2[3] * xz;
  out[8] = kShC2[4] * (xx - yy);
  if (degree < 3) return;
  out[9] = kShC3[0] * y * (3.0f * xx - yy);
  out[10] = kShC3[1] * xy * z;
  out[11] = kShC3[2] * y * (4.0f * zz - xx - yy);
  out[12] = kShC3[3] * z * (2.0f * zz - 3.0f * xx - 3.0f * yy);
  out[13] = kShC3[4] * x * (4.0f * zz - xx - yy);
  out[14] = kShC3[5] * z * (xx - yy);
  out[15] = kShC3[6] * x * (xx - 3.0f * yy);
}

// c = 0.5 + sum_b coeffs[b] * Y_b(dir), per channel. Returns the raw value;
// any [0,1] clamping is the renderer's business. coeffs is (3,B) row-major.
inline Vec3 eval_sh(const float* coeffs, int basis, const Vec3& view_dir) {
  const float n = norm(view_dir);
  if (std::fabs(n - 1.0f) > 1e-4f)
    throw ContractError("eval_sh: view direction must be unit length");
  const int degree = sh_degree_from_basis(basis);
  float y[16];
  sh_basis(degree, view_dir, y);
  Vec3 c{0.5f, 0.5f, 0.5f};
  for (int b = 0; b < basis; ++b) {
    c.x += coeffs[b] * y[b];
    c.y += coeffs[basis + b] * y[b];
    c.z += coeffs[2 * basis + b] * y[b];
  }
  return c;
}

}  // namespace splat
