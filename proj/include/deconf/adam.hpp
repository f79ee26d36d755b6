#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "deconf/common.hpp"
#include "deconf/layers.hpp"

namespace deconf::numkit {

// Bias-corrected Adam over a fixed list of named tensors. Moment buffers are
// allocated on the first step and must keep matching the parameter shapes.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long step = 0;
  std::vector<Vector> m;
  std::vector<Vector> v;
};

inline void adam_step(const std::vector<TensorRef>& params,
                      const std::vector<TensorRef>& grads, AdamState& state) {
  if (params.size() != grads.size()) {
    throw DimensionError("adam_step: param/grad tensor count mismatch");
  }
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t t = 0; t < params.size(); ++t) {
      state.m[t].assign(params[t].size(), 0.0);
      state.v[t].assign(params[t].size(), 0.0);
    }
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != grads[t].size() ||
        state.m[t].size() != params[t].size()) {
      throw DimensionError("adam_step: shape mismatch for tensor " +
                           params[t].name);
    }
    for (std::size_t i = 0; i < grads[t].size(); ++i) {
      if (!std::isfinite(grads[t].data[i])) {
        throw TrainingError("non-finite gradient in tensor " + grads[t].name);
      }
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    double* p = params[t].data;
    const double* g = grads[t].data;
    Vector& m = state.m[t];
    Vector& v = state.v[t];
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

}  // namespace deconf::numkit
