#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "splat/tensor.hpp"

namespace splat {

// Named trainable tensor plus its Adam moment buffers. Names must be unique
// within a model; checkpoints are keyed by them.
struct Parameter {
  std::string name;
  DTensor value;
  std::vector<float> adam_m;
  std::vector<float> adam_v;
  long step_count = 0;

  Parameter() = default;
  Parameter(std::string n, DTensor v) : name(std::move(n)), value(std::move(v)) {
    value.set_requires_grad(true);
    adam_m.assign(value.numel(), 0.0f);
    adam_v.assign(value.numel(), 0.0f);
  }
};

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Standard Adam with bias correction. Consumes and zeroes the gradients.
// With a zero gradient the moments stay zero and the value is untouched,
// though the step count still advances.
inline void adam_step(const std::vector<Parameter*>& params, const AdamConfig& cfg = {}) {
  for (Parameter* p : params) {
    if (!p->value.has_grad())
      throw StateError("adam_step: parameter '" + p->name + "' has no gradient");
  }
  for (Parameter* p : params) {
    p->step_count += 1;
    const float bc1 = 1.0f - std::pow(cfg.beta1, static_cast<float>(p->step_count));
    const float bc2 = 1.0f - std::pow(cfg.beta2, static_cast<float>(p->step_count));
    auto& g = p->value.grad();
    float* v = p->value.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      p->adam_m[i] = cfg.beta1 * p->adam_m[i] + (1.0f - cfg.beta1) * g[i];
      p->adam_v[i] = cfg.beta2 * p->adam_v[i] + (1.0f - cfg.beta2) * g[i] * g[i];
      const float mhat = p->adam_m[i] / bc1;
      const float vhat = p->adam_v[i] / bc2;
      v[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    p->value.zero_grad();
  }
}

}  // namespace splat
