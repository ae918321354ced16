#pragma once

#include "paerpr/autodiff.hpp"

#include <cmath>
#include <unordered_map>
#include <vector>

namespace paerpr::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  long step = 0;
  // first/second moment per parameter, keyed by identity
  std::unordered_map<const Parameter*, std::pair<Tensor, Tensor>> moments;

  explicit AdamState(AdamConfig c = {}) : cfg(c) {}
};

/// Bias-corrected Adam update. Parameters land on the float32 grid after every
/// step so checkpoints round-trip bit-exactly; moments stay in full precision.
inline void adam_step(const std::vector<Parameter*>& params, AdamState& st) {
  st.step += 1;
  double bc1 = 1.0 - std::pow(st.cfg.beta1, static_cast<double>(st.step));
  double bc2 = 1.0 - std::pow(st.cfg.beta2, static_cast<double>(st.step));
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    auto it = st.moments.find(p);
    if (it == st.moments.end())
      it = st.moments.emplace(p, std::make_pair(Tensor::zeros(p->value.shape),
                                                Tensor::zeros(p->value.shape))).first;
    Tensor& m = it->second.first;
    Tensor& v = it->second.second;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      double g = p->grad[i];
      m[i] = st.cfg.beta1 * m[i] + (1.0 - st.cfg.beta1) * g;
      v[i] = st.cfg.beta2 * v[i] + (1.0 - st.cfg.beta2) * g * g;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p->value[i] -= st.cfg.lr * mhat / (std::sqrt(vhat) + st.cfg.eps);
    }
    quantize_f32(p->value);
  }
}

}  // namespace paerpr::nn
