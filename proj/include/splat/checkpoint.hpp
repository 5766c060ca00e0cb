#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "splat/error.hpp"
#include "splat/ft32.hpp"
#include "splat/optim.hpp"

namespace splat {

// Named-tensor container for model weights and optimizer state. Entries are
// ordered, so save(load(x)) is byte-identical. No timestamps on purpose.
//
// Layout: "SPCK", u32 version, u32 meta count (key/value strings, each
// u32-length-prefixed), u32 tensor count (u32-length-prefixed name + FT32
// blob each).
struct ModelCheckpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<std::pair<std::string, DTensor>> tensors;

  const DTensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }

  const std::string* find_meta(const std::string& key) const {
    for (const auto& [k, v] : metadata)
      if (k == key) return &v;
    return nullptr;
  }

  void set_meta(const std::string& key, const std::string& value) {
    for (auto& [k, v] : metadata)
      if (k == key) {
        v = value;
        return;
      }
    metadata.emplace_back(key, value);
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("checkpoint: cannot open for writing " + path);
    f.write("SPCK", 4);
    detail::write_u32(f, kVersion);
    detail::write_u32(f, static_cast<std::uint32_t>(metadata.size()));
    auto wstr = [&](const std::string& s) {
      detail::write_u32(f, static_cast<std::uint32_t>(s.size()));
      f.write(s.data(), static_cast<std::streamsize>(s.size()));
    };
    for (const auto& [k, v] : metadata) {
      wstr(k);
      wstr(v);
    }
    detail::write_u32(f, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [n, t] : tensors) {
      wstr(n);
      ft32_write(f, t);
    }
    if (!f) throw FormatError("checkpoint: write failed " + path);
  }

  static ModelCheckpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("checkpoint: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "SPCK", 4) != 0)
      throw FormatError("checkpoint: bad magic");
    const std::uint32_t version = detail::read_u32(f);
    if (version != kVersion)
      throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    ModelCheckpoint ck;
    auto rstr = [&]() {
      const std::uint32_t n = detail::read_u32(f);
      std::string s(n, '\0');
      f.read(s.data(), n);
      if (!f) throw FormatError("checkpoint: truncated string");
      return s;
    };
    const std::uint32_t n_meta = detail::read_u32(f);
    for (std::uint32_t i = 0; i < n_meta; ++i) {
      std::string k = rstr();
      std::string v = rstr();
      ck.metadata.emplace_back(std::move(k), std::move(v));
    }
    const std::uint32_t n_tensors = detail::read_u32(f);
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
      std::string n = rstr();
      ck.tensors.emplace_back(std::move(n), ft32_read(f));
    }
    return ck;
  }
};

// Serializes parameters (values + Adam moments + step counts) in declaration
// order.
inline ModelCheckpoint checkpoint_from_params(const std::vector<Parameter*>& params) {
  ModelCheckpoint ck;
  for (const Parameter* p : params) {
    ck.tensors.emplace_back(p->name, p->value.detached());
    ck.tensors.emplace_back(p->name + ".adam_m",
                            DTensor::from({static_cast<int>(p->adam_m.size())}, p->adam_m));
    ck.tensors.emplace_back(p->name + ".adam_v",
                            DTensor::from({static_cast<int>(p->adam_v.size())}, p->adam_v));
    ck.set_meta("step." + p->name, std::to_string(p->step_count));
  }
  return ck;
}

// Loads values (and moments, when present) into the parameters. Every tensor
// in the checkpoint must correspond to a known parameter; unknown names are
// rejected with the offending key.
inline void load_params(const ModelCheckpoint& ck, const std::vector<Parameter*>& params) {
  auto param_for = [&](const std::string& key) -> Parameter* {
    for (Parameter* p : params) {
      if (key == p->name || key == p->name + ".adam_m" || key == p->name + ".adam_v")
        return p;
    }
    return nullptr;
  };
  for (const auto& [name, t] : ck.tensors)
    if (!param_for(name))
      throw FormatError("checkpoint: unknown parameter '" + name + "'");
  for (Parameter* p : params) {
    const DTensor* v = ck.find(p->name);
    if (!v) throw FormatError("checkpoint: missing parameter '" + p->name + "'");
    if (v->shape() != p->value.shape())
      throw FormatError("checkpoint: shape mismatch for '" + p->name + "'");
    std::copy(v->data(), v->data() + v->numel(), p->value.data());
    if (const DTensor* m = ck.find(p->name + ".adam_m")) {
      if (m->numel() != p->adam_m.size())
        throw FormatError("checkpoint: moment size mismatch for '" + p->name + "'");
      std::copy(m->data(), m->data() + m->numel(), p->adam_m.begin());
    }
    if (const DTensor* m = ck.find(p->name + ".adam_v")) {
      if (m->numel() != p->adam_v.size())
        throw FormatError("checkpoint: moment size mismatch for '" + p->name + "'");
      std::copy(m->data(), m->data() + m->numel(), p->adam_v.begin());
    }
    if (const std::string* s = ck.find_meta("step." + p->name))
      p->step_count = std::stol(*s);
  }
}

}  // namespace splat
