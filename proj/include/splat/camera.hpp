#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "splat/error.hpp"
#include "splat/geometry.hpp"

namespace splat {

// Pinhole camera. Extrinsics are world-to-camera: x_cam = R * x_world + t,
// camera looks along +z. Pixel (ix,iy) has continuous center (ix+0.5, iy+0.5);
// projection yields continuous pixel coordinates u = fx*X/Z + cx.
struct Camera {
  float fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 0, height = 0;
  Mat3 rotation;   // world-to-camera
  Vec3 translation;
  float near_clip = 0.05f, far_clip = 50.0f;

  void validate() const {
    if (width < 8 || height < 8) throw ContractError("camera: resolution must be >= 8");
    if (!(near_clip > 0 && near_clip < far_clip))
      throw ContractError("camera: require 0 < near < far");
    const Mat3 rtr = rotation.transposed() * rotation;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const float want = i == j ? 1.0f : 0.0f;
        if (std::fabs(rtr(i, j) - want) > 1e-5f)
          throw ContractError("camera: rotation is not orthonormal");
      }
  }

  Vec3 to_camera(const Vec3& p_world) const { return rotation * p_world + translation; }
  Vec3 to_world(const Vec3& p_cam) const {
    return rotation.transposed() * (p_cam - translation);
  }
  Vec3 center() const { return rotation.transposed() * (-translation); }

  // Continuous pixel coordinates of a camera-space point (caller checks z).
  void project(const Vec3& p_cam, float& u, float& v) const {
    u = fx * p_cam.x / p_cam.z + cx;
    v = fy * p_cam.y / p_cam.z + cy;
  }

  // Lifts continuous pixel coordinates at camera depth z.
  Vec3 unproject(float u, float v, float z) const {
    return {(u - cx) / fx * z, (v - cy) / fy * z, z};
  }

  // World-space direction of the ray through pixel center (ix,iy).
  Vec3 ray_dir_world(int ix, int iy) const {
    const Vec3 d_cam{(static_cast<float>(ix) + 0.5f - cx) / fx,
                     (static_cast<float>(iy) + 0.5f - cy) / fy, 1.0f};
    return normalized(rotation.transposed() * d_cam);
  }

  // Same view at 1/s resolution (intrinsics and size divided by s).
  Camera scaled_down(int s) const {
    if (width % s != 0 || height % s != 0)
      throw ContractError("camera: resolution not divisible by scale");
    Camera c = *this;
    c.fx /= static_cast<float>(s);
    c.fy /= static_cast<float>(s);
    c.cx /= static_cast<float>(s);
    c.cy /= static_cast<float>(s);
    c.width /= s;
    c.height /= s;
    return c;
  }

  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, float fx,
                        float fy, int width, int height, float near_clip = 0.05f,
                        float far_clip = 50.0f) {
    const Vec3 fwd = normalized(target - eye);      // camera +z
    const Vec3 right = normalized(cross(fwd, up));  // camera +x
    const Vec3 down = cross(fwd, right);            // camera +y (y grows downward)
    Camera c;
    c.fx = fx;
    c.fy = fy;
    c.cx = 0.5f * static_cast<float>(width);
    c.cy = 0.5f * static_cast<float>(height);
    c.width = width;
    c.height = height;
    c.near_clip = near_clip;
    c.far_clip = far_clip;
    for (int j = 0; j < 3; ++j) {
      c.rotation(0, j) = (j == 0 ? right.x : j == 1 ? right.y : right.z);
      c.rotation(1, j) = (j == 0 ? down.x : j == 1 ? down.y : down.z);
      c.rotation(2, j) = (j == 0 ? fwd.x : j == 1 ? fwd.y : fwd.z);
    }
    c.translation = c.rotation * (-eye);
    c.validate();
    return c;
  }
};

// Ordered keyframes sharing intrinsics/resolution; queryable at fractional
// time t in [0,1] with keyframe k at t = k/(K-1).
struct CameraPath {
  std::vector<Camera> keyframes;
  float sampling_rate = 1.0f;  // keyframes per time unit, informational

  void validate() const {
    if (keyframes.size() < 2) throw ContractError("camera path: need >= 2 keyframes");
    const Camera& a = keyframes.front();
    for (const Camera& c : keyframes) {
      c.validate();
      if (c.width != a.width || c.height != a.height || c.fx != a.fx || c.fy != a.fy ||
          c.cx != a.cx || c.cy != a.cy)
        throw ContractError("camera path: keyframes must share intrinsics and resolution");
    }
  }
};

// Pose interpolation: translation lerped, rotation slerped on the shortest
// arc, intrinsics copied from the path.
inline Camera camera_at(const CameraPath& path, float t) {
  if (t < 0.0f || t > 1.0f) throw RangeError("camera_at: t must be in [0,1]");
  path.validate();
  const int segs = static_cast<int>(path.keyframes.size()) - 1;
  const float s = t * static_cast<float>(segs);
  int i = static_cast<int>(std::floor(s));
  if (i >= segs) i = segs - 1;
  const float u = s - static_cast<float>(i);
  const Camera& a = path.keyframes[static_cast<std::size_t>(i)];
  const Camera& b = path.keyframes[static_cast<std::size_t>(i) + 1];
  Camera c = a;
  if (u == 0.0f) return a;
  if (u == 1.0f) return b;
  c.translation = a.translation + (b.translation - a.translation) * u;
  const Quat qa = Quat::from_mat3(a.rotation);
  const Quat qb = Quat::from_mat3(b.rotation);
  c.rotation = slerp(qa, qb, u).to_mat3();
  return c;
}

// Text path file: free-form comments with '#', then per keyframe a block
//
//   keyframe
//   intrinsics: fx fy cx cy
//   size: W H
//   clip: near far
//   matrix:
//   <4 rows of the 4x4 world-to-camera matrix>
//
inline CameraPath load_camera_path(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("camera path: cannot open " + path);
  CameraPath cp;
  std::string line;
  Camera cur;
  int matrix_rows_left = -1;
  bool in_block = false;
  auto finish = [&]() {
    if (in_block) {
      if (matrix_rows_left != 0)
        throw FormatError("camera path: keyframe block missing matrix rows");
      cur.validate();
      cp.keyframes.push_back(cur);
    }
    in_block = false;
  };
  while (std::getline(f, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string tok;
    if (!(ss >> tok)) continue;
    if (matrix_rows_left > 0) {
      std::istringstream row(line);
      float m[4];
      if (!(row >> m[0] >> m[1] >> m[2] >> m[3]))
        throw FormatError("camera path: bad matrix row");
      const int r = 4 - matrix_rows_left;
      if (r < 3) {
        for (int j = 0; j < 3; ++j) cur.rotation(r, j) = m[j];
        if (r == 0) cur.translation.x = m[3];
        if (r == 1) cur.translation.y = m[3];
        if (r == 2) cur.translation.z = m[3];
      }
      --matrix_rows_left;
      continue;
    }
    if (tok == "keyframe") {
      finish();
      in_block = true;
      cur = Camera{};
      matrix_rows_left = -1;
    } else if (tok == "intrinsics:") {
      if (!(ss >> cur.fx >> cur.fy >> cur.cx >> cur.cy))
        throw FormatError("camera path: bad intrinsics line");
    } else if (tok == "size:") {
      if (!(ss >> cur.width >> cur.height))
        throw FormatError("camera path: bad size line");
    } else if (tok == "clip:") {
      if (!(ss >> cur.near_clip >> cur.far_clip))
        throw FormatError("camera path: bad clip line");
    } else if (tok == "matrix:") {
      matrix_rows_left = 4;
    } else if (tok == "rate:") {
      if (!(ss >> cp.sampling_rate)) throw FormatError("camera path: bad rate line");
    } else {
      throw FormatError("camera path: unknown token '" + tok + "'");
    }
  }
  finish();
  cp.validate();
  return cp;
}

inline void save_camera_path(const std::string& path, const CameraPath& cp) {
  std::ofstream f(path);
  if (!f) throw FormatError("camera path: cannot open for writing " + path);
  f.precision(9);  // float round trip
  f << "# camera path, one keyframe per block\n";
  f << "rate: " << cp.sampling_rate << "\n";
  for (const Camera& c : cp.keyframes) {
    f << "keyframe\n";
    f << "intrinsics: " << c.fx << " " << c.fy << " " << c.cx << " " << c.cy << "\n";
    f << "size: " << c.width << " " << c.height << "\n";
    f << "clip: " << c.near_clip << " " << c.far_clip << "\n";
    f << "matrix:\n";
    for (int r = 0; r < 3; ++r) {
      const float t = r == 0 ? c.translation.x : r == 1 ? c.translation.y : c.translation.z;
      f << c.rotation(r, 0) << " " << c.rotation(r, 1) << " " << c.rotation(r, 2) << " "
        << t << "\n";
    }
    f << "0 0 0 1\n";
  }
}

}  // namespace splat
