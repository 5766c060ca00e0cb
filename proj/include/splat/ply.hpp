#pragma once

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "splat/error.hpp"
#include "splat/scene.hpp"

namespace splat {

// Binary little-endian PLY in the de-facto 3DGS vertex layout: positions,
// f_dc_0..2 plus channel-major f_rest, opacity as a logit, log scales and a
// (w,x,y,z) rotation. Unknown float properties (e.g. nx,ny,nz) are skipped.

namespace detail {
struct PlyHeader {
  int vertex_count = 0;
  std::vector<std::string> properties;  // in file order, all float32
  std::size_t header_bytes = 0;
};

inline PlyHeader parse_ply_header(std::istream& is) {
  PlyHeader h;
  std::string line;
  if (!std::getline(is, line) || line.substr(0, 3) != "ply")
    throw FormatError("ply: missing magic line");
  bool fmt_seen = false;
  bool in_vertex = false;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "comment") continue;
    if (tok == "format") {
      std::string kind;
      ss >> kind;
      if (kind == "ascii")
        throw FormatError("ply: ascii format is unsupported, need binary_little_endian");
      if (kind != "binary_little_endian")
        throw FormatError("ply: unsupported format '" + kind + "'");
      fmt_seen = true;
    } else if (tok == "element") {
      std::string name;
      int count = 0;
      ss >> name >> count;
      in_vertex = (name == "vertex");
      if (in_vertex) h.vertex_count = count;
      else if (count > 0)
        throw FormatError("ply: unsupported non-vertex element '" + name + "'");
    } else if (tok == "property") {
      if (!in_vertex) continue;
      std::string type, name;
      ss >> type >> name;
      if (type == "list") throw FormatError("ply: list properties unsupported");
      if (type != "float" && type != "float32")
        throw FormatError("ply: property '" + name + "' must be float32");
      h.properties.push_back(name);
    } else if (tok == "end_header") {
      if (!fmt_seen) throw FormatError("ply: missing format line");
      return h;
    }
  }
  throw FormatError("ply: missing end_header");
}
}  // namespace detail

inline GaussianScene load_ply(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("ply: cannot open " + path);
  const detail::PlyHeader h = detail::parse_ply_header(f);

  std::map<std::string, int> index;
  for (int i = 0; i < static_cast<int>(h.properties.size()); ++i)
    index[h.properties[i]] = i;
  auto require = [&](const std::string& name) {
    auto it = index.find(name);
    if (it == index.end())
      throw FormatError("ply: missing required property '" + name + "'");
    return it->second;
  };

  const int ix = require("x"), iy = require("y"), iz = require("z");
  const int idc0 = require("f_dc_0"), idc1 = require("f_dc_1"), idc2 = require("f_dc_2");
  const int iop = require("opacity");
  const int is0 = require("scale_0"), is1 = require("scale_1"), is2 = require("scale_2");
  const int ir0 = require("rot_0"), ir1 = require("rot_1"), ir2 = require("rot_2"),
            ir3 = require("rot_3");

  int rest_count = 0;
  while (index.count("f_rest_" + std::to_string(rest_count))) ++rest_count;
  if (rest_count % 3 != 0)
    throw FormatError("ply: f_rest property count must be a multiple of 3");
  const int basis = 1 + rest_count / 3;
  GaussianScene s;
  s.sh_basis = basis;
  (void)sh_degree_from_basis(basis);  // validates B in {1,4,9,16}
  std::vector<int> irest(static_cast<std::size_t>(rest_count));
  for (int k = 0; k < rest_count; ++k) irest[k] = require("f_rest_" + std::to_string(k));

  const int stride = static_cast<int>(h.properties.size());
  s.count = h.vertex_count;
  s.centers.resize(s.count);
  s.rotations.resize(s.count);
  s.log_scales.resize(s.count);
  s.opacity_logits.resize(s.count);
  s.sh.resize(static_cast<std::size_t>(s.count) * 3 * basis);

  std::vector<float> row(static_cast<std::size_t>(stride));
  for (int v = 0; v < s.count; ++v) {
    f.read(reinterpret_cast<char*>(row.data()),
           static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!f) throw FormatError("ply: truncated vertex data at vertex " + std::to_string(v));
    for (float x : row)
      if (!std::isfinite(x))
        throw DataError("ply: non-finite value at vertex " + std::to_string(v));
    s.centers[v] = {row[ix], row[iy], row[iz]};
    s.opacity_logits[v] = row[iop];
    s.log_scales[v] = {row[is0], row[is1], row[is2]};
    s.rotations[v] = Quat{row[ir0], row[ir1], row[ir2], row[ir3]};
    float* co = s.sh_of(v);
    co[0 * basis] = row[idc0];
    co[1 * basis] = row[idc1];
    co[2 * basis] = row[idc2];
    for (int c = 0; c < 3; ++c)
      for (int b = 1; b < basis; ++b)
        co[c * basis + b] = row[irest[c * (basis - 1) + (b - 1)]];
  }
  s.renormalize_rotations();
  s.validate();
  return s;
}

inline void save_ply(const GaussianScene& s, const std::string& path) {
  s.validate();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("ply: cannot open for writing " + path);
  const int basis = s.sh_basis;
  std::ostringstream hdr;
  hdr << "ply\nformat binary_little_endian 1.0\n";
  hdr << "element vertex " << s.count << "\n";
  auto prop = [&](const std::string& n) { hdr << "property float " << n << "\n"; };
  prop("x"); prop("y"); prop("z");
  prop("f_dc_0"); prop("f_dc_1"); prop("f_dc_2");
  for (int k = 0; k < 3 * (basis - 1); ++k) prop("f_rest_" + std::to_string(k));
  prop("opacity");
  prop("scale_0"); prop("scale_1"); prop("scale_2");
  prop("rot_0"); prop("rot_1"); prop("rot_2"); prop("rot_3");
  hdr << "end_header\n";
  f << hdr.str();

  std::vector<float> row;
  for (int v = 0; v < s.count; ++v) {
    row.clear();
    row.push_back(s.centers[v].x);
    row.push_back(s.centers[v].y);
    row.push_back(s.centers[v].z);
    const float* co = s.sh_of(v);
    row.push_back(co[0 * basis]);
    row.push_back(co[1 * basis]);
    row.push_back(co[2 * basis]);
    for (int c = 0; c < 3; ++c)
      for (int b = 1; b < basis; ++b) row.push_back(co[c * basis + b]);
    row.push_back(s.opacity_logits[v]);
    row.push_back(s.log_scales[v].x);
    row.push_back(s.log_scales[v].y);
    row.push_back(s.log_scales[v].z);
    row.push_back(s.rotations[v].w);
    row.push_back(s.rotations[v].x);
    row.push_back(s.rotations[v].y);
    row.push_back(s.rotations[v].z);
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!f) throw FormatError("ply: write failed " + path);
}

}  // namespace splat
