#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "pfc/tensor.hpp"

namespace pfc {

/// Per-pixel scene scale: image pixels spanned by one meter of real-world
/// height. Maps produced by the row-linear fit have constant rows; loaded
/// maps are taken as-is.
struct PerspectiveMap {
  Grid2 grid;
};

/// The four learnable scalars of one PFC block: (alpha, beta) shape the
/// sigmoid normalization, (gamma, theta) the linear rate mapping. Every
/// block owns an independent set, all initialized to (1, 1, 1.5, 1).
struct RateParams {
  float alpha = 1.0f;
  float beta = 1.0f;
  float gamma = 1.5f;
  float theta = 1.0f;
  float d_alpha = 0.0f;
  float d_beta = 0.0f;
  float d_gamma = 0.0f;
  float d_theta = 0.0f;

  void zero_grads() { d_alpha = d_beta = d_gamma = d_theta = 0.0f; }
};

/// One manually labeled pedestrian: image row of the head and the observed
/// height in pixels.
struct LabeledHeight {
  float y_h = 0.0f;
  float h_px = 0.0f;
};

/// Fit the row-linear perspective model from labeled person heights.
/// Each sample contributes s = h / H_person; a least-squares line s(y) fills
/// every output row with its fitted value. Rows where the fit is <= 0 are
/// clamped to 1e-3 (count reported through clamped_rows when non-null).
inline PerspectiveMap fit_perspective_map(const std::vector<LabeledHeight>& labeled,
                                          std::int64_t out_h, std::int64_t out_w,
                                          float h_person = 1.75f,
                                          std::int64_t* clamped_rows = nullptr) {
  if (labeled.size() < 2)
    throw DomainError("fit_perspective_map: need at least 2 labeled samples");
  bool distinct = false;
  for (std::size_t i = 1; i < labeled.size(); ++i)
    if (labeled[i].y_h != labeled[0].y_h) distinct = true;
  if (!distinct)
    throw DomainError("fit_perspective_map: samples must span distinct rows");
  for (const auto& s : labeled)
    if (!(s.h_px > 0.0f))
      throw DomainError("fit_perspective_map: observed heights must be > 0");

  // Normal equations for s = a*y + b in double; inputs are tiny.
  double sy = 0.0, ss = 0.0, syy = 0.0, sys = 0.0;
  const double n = static_cast<double>(labeled.size());
  for (const auto& smp : labeled) {
    const double y = smp.y_h;
    const double s = smp.h_px / static_cast<double>(h_person);
    sy += y;
    ss += s;
    syy += y * y;
    sys += y * s;
  }
  const double denom = n * syy - sy * sy;
  const double a = (n * sys - sy * ss) / denom;
  const double b = (ss - a * sy) / n;

  PerspectiveMap map{Grid2(out_h, out_w)};
  std::int64_t clamped = 0;
  for (std::int64_t i = 0; i < out_h; ++i) {
    double v = a * static_cast<double>(i) + b;
    if (v <= 0.0) {
      v = 1e-3;
      ++clamped;
    }
    for (std::int64_t j = 0; j < out_w; ++j)
      map.grid.at(i, j) = static_cast<float>(v);
  }
  if (clamped_rows) *clamped_rows = clamped;
  return map;
}

/// Overflow-safe logistic used by normalize_zeta:
/// zeta(s) = 1 / (1 + exp(-alpha * (s - beta))), always in (0, 1).
/// Saturated values are clamped to the nearest float32 neighbors of 0 and 1
/// so the open-interval contract survives underflow.
inline float zeta_scalar(float s, float alpha, float beta) {
  const float t = alpha * (s - beta);
  float v;
  if (t >= 0.0f) {
    v = 1.0f / (1.0f + std::exp(-t));
  } else {
    const float e = std::exp(t);
    v = e / (1.0f + e);
  }
  constexpr float lo = std::numeric_limits<float>::min();
  constexpr float hi = 1.0f - std::numeric_limits<float>::epsilon() / 2.0f;
  return std::min(std::max(v, lo), hi);
}

inline Grid2 normalize_zeta(const Grid2& s, const RateParams& p) {
  Grid2 out(s.h, s.w);
  for (std::int64_t i = 0; i < s.numel(); ++i)
    out.data[i] = zeta_scalar(s.data[i], p.alpha, p.beta);
  return out;
}

/// r = max(gamma * s_tilde + theta, 0), elementwise.
inline Grid2 rate_map(const Grid2& s_tilde, const RateParams& p) {
  Grid2 out(s_tilde.h, s_tilde.w);
  for (std::int64_t i = 0; i < s_tilde.numel(); ++i)
    out.data[i] = std::max(p.gamma * s_tilde.data[i] + p.theta, 0.0f);
  return out;
}

/// Chain rule for the composite r = max(gamma * zeta(s) + theta, 0).
/// Accumulates into p's gradient slots and returns dL/ds. Positions where
/// the clamp is active (gamma*s_tilde + theta <= 0) contribute nothing.
inline Grid2 rate_backward(const Grid2& s, RateParams& p, const Grid2& dL_dr) {
  if (!s.same_shape(dL_dr))
    throw ShapeError("rate_backward: grid shape mismatch");
  Grid2 dL_ds(s.h, s.w);
  double da = 0.0, db = 0.0, dg = 0.0, dt = 0.0;
  for (std::int64_t i = 0; i < s.numel(); ++i) {
    const float st = zeta_scalar(s.data[i], p.alpha, p.beta);
    if (p.gamma * st + p.theta <= 0.0f) continue;
    const float dr = dL_dr.data[i];
    dt += dr;
    dg += static_cast<double>(dr) * st;
    const float ds_tilde = dr * p.gamma;
    const float sig = st * (1.0f - st);
    da += static_cast<double>(ds_tilde) * (s.data[i] - p.beta) * sig;
    db += static_cast<double>(ds_tilde) * (-p.alpha) * sig;
    dL_ds.data[i] = ds_tilde * p.alpha * sig;
  }
  p.d_alpha += static_cast<float>(da);
  p.d_beta += static_cast<float>(db);
  p.d_gamma += static_cast<float>(dg);
  p.d_theta += static_cast<float>(dt);
  return dL_ds;
}

/// Ablation mode: replace the map by its spatial mean, so receptive-field
/// allocation varies per image instead of per pixel.
inline PerspectiveMap mean_perspective(const PerspectiveMap& s) {
  const float m = static_cast<float>(reduce(s.grid, Reduce::kMean));
  return PerspectiveMap{Grid2(s.grid.h, s.grid.w, m)};
}

}  // namespace pfc
