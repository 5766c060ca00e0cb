#pragma once

#include <array>
#include <cmath>

namespace splat {

struct Vec3 {
  float x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(float s) const { return {x * s, y * s, z * s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
};

inline float dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline float norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline Vec3 normalized(const Vec3& v) {
  const float n = norm(v);
  return n > 0 ? v * (1.0f / n) : Vec3{};
}

// Row-major 3x3.
struct Mat3 {
  std::array<float, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  float& operator()(int r, int c) { return m[r * 3 + c]; }
  float operator()(int r, int c) const { return m[r * 3 + c]; }

  static Mat3 identity() { return Mat3{}; }

  Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }

  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        float s = 0;
        for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
        r(i, j) = s;
      }
    return r;
  }

  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
  }

  Vec3 col(int c) const { return {m[c], m[3 + c], m[6 + c]}; }
};

// Unit quaternion, (w, x, y, z) ordering.
struct Quat {
  float w = 1, x = 0, y = 0, z = 0;

  float norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

  Quat normalized() const {
    const float n = norm();
    if (n <= 0) return Quat{};
    return {w / n, x / n, y / n, z / n};
  }

  Mat3 to_mat3() const {
    Mat3 r;
    const float xx = x * x, yy = y * y, zz = z * z;
    const float xy = x * y, xz = x * z, yz = y * z;
    const float wx = w * x, wy = w * y, wz = w * z;
    r(0, 0) = 1 - 2 * (yy + zz); r(0, 1) = 2 * (xy - wz);     r(0, 2) = 2 * (xz + wy);
    r(1, 0) = 2 * (xy + wz);     r(1, 1) = 1 - 2 * (xx + zz); r(1, 2) = 2 * (yz - wx);
    r(2, 0) = 2 * (xz - wy);     r(2, 1) = 2 * (yz + wx);     r(2, 2) = 1 - 2 * (xx + yy);
    return r;
  }

  static Quat from_mat3(const Mat3& m) {
    // Shepperd's method, branch on the largest diagonal term.
    Quat q;
    const float tr = m(0, 0) + m(1, 1) + m(2, 2);
    if (tr > 0) {
      float s = std::sqrt(tr + 1.0f) * 2;
      q.w = 0.25f * s;
      q.x = (m(2, 1) - m(1, 2)) / s;
      q.y = (m(0, 2) - m(2, 0)) / s;
      q.z = (m(1, 0) - m(0, 1)) / s;
    } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
      float s = std::sqrt(1.0f + m(0, 0) - m(1, 1) - m(2, 2)) * 2;
      q.w = (m(2, 1) - m(1, 2)) / s;
      q.x = 0.25f * s;
      q.y = (m(0, 1) + m(1, 0)) / s;
      q.z = (m(0, 2) + m(2, 0)) / s;
    } else if (m(1, 1) > m(2, 2)) {
      float s = std::sqrt(1.0f + m(1, 1) - m(0, 0) - m(2, 2)) * 2;
      q.w = (m(0, 2) - m(2, 0)) / s;
      q.x = (m(0, 1) + m(1, 0)) / s;
      q.y = 0.25f * s;
      q.z = (m(1, 2) + m(2, 1)) / s;
    } else {
      float s = std::sqrt(1.0f + m(2, 2) - m(0, 0) - m(1, 1)) * 2;
      q.w = (m(1, 0) - m(0, 1)) / s;
      q.x = (m(0, 2) + m(2, 0)) / s;
      q.y = (m(1, 2) + m(2, 1)) / s;
      q.z = 0.25f * s;
    }
    return q.normalized();
  }
};

inline float dot(const Quat& a, const Quat& b) {
  return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
}

// Shortest-arc spherical interpolation; falls back to nlerp for nearly
// parallel inputs.
inline Quat slerp(const Quat& a, Quat b, float t) {
  float d = dot(a, b);
  if (d < 0) {
    b = {-b.w, -b.x, -b.y, -b.z};
    d = -d;
  }
  if (d > 0.9995f) {
    Quat r{a.w + t * (b.w - a.w), a.x + t * (b.x - a.x),
           a.y + t * (b.y - a.y), a.z + t * (b.z - a.z)};
    return r.normalized();
  }
  const float theta = std::acos(d);
  const float s = std::sin(theta);
  const float wa = std::sin((1 - t) * theta) / s;
  const float wb = std::sin(t * theta) / s;
  return Quat{wa * a.w + wb * b.w, wa * a.x + wb * b.x,
              wa * a.y + wb * b.y, wa * a.z + wb * b.z}.normalized();
}

}  // namespace splat
