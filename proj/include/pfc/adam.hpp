#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "pfc/errors.hpp"

namespace pfc {

/// Bias-corrected Adam state for one parameter group. Moment buffers take
/// the parameter shape on the first step.
struct AdamState {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  std::int64_t step = 0;
  std::vector<float> m, v;
};

inline void adam_step(float* params, const float* grads, std::size_t n,
                      AdamState& st) {
  if (st.m.empty()) {
    st.m.assign(n, 0.0f);
    st.v.assign(n, 0.0f);
  } else if (st.m.size() != n) {
    throw ShapeError("adam_step: moment buffers do not match parameters");
  }
  ++st.step;
  const float c1 = 1.0f - std::pow(st.beta1, static_cast<float>(st.step));
  const float c2 = 1.0f - std::pow(st.beta2, static_cast<float>(st.step));
  for (std::size_t i = 0; i < n; ++i) {
    const float g = grads[i];
    st.m[i] = st.beta1 * st.m[i] + (1.0f - st.beta1) * g;
    st.v[i] = st.beta2 * st.v[i] + (1.0f - st.beta2) * g * g;
    const float m_hat = st.m[i] / c1;
    const float v_hat = st.v[i] / c2;
    params[i] -= st.lr * m_hat / (std::sqrt(v_hat) + st.eps);
  }
}

inline void adam_step(std::vector<float>& params,
                      const std::vector<float>& grads, AdamState& st) {
  if (params.size() != grads.size())
    throw ShapeError("adam_step: parameter/gradient size mismatch");
  adam_step(params.data(), grads.data(), params.size(), st);
}

/// Adam over an enumerable list of parameter groups. The enumerator must
/// visit groups in a fixed order; moment buffers are matched by position.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(float lr) { proto_.lr = lr; }

  /// enumerate(visit) must call visit(params, grads, count) once per group.
  template <typename EnumerateFn>
  void step(EnumerateFn&& enumerate) {
    std::size_t idx = 0;
    enumerate([&](float* p, const float* g, std::size_t n) {
      if (idx == states_.size()) {
        states_.push_back(proto_);
      }
      adam_step(p, g, n, states_[idx]);
      ++idx;
    });
  }

  float lr() const { return proto_.lr; }

 private:
  AdamState proto_;
  std::vector<AdamState> states_;
};

}  // namespace pfc
