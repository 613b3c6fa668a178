#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "pfc/errors.hpp"
#include "pfc/rng.hpp"

namespace pfc {

/// Dense N x C x H x W float32 tensor, row-major in (n, c, h, w) order.
/// Containers are immutable once an operation has produced them; operations
/// may parallelize over independent output elements but accumulate each
/// element sequentially, so results never depend on the thread count.
struct Tensor4 {
  std::int64_t n = 0, c = 0, h = 0, w = 0;
  std::vector<float> data;

  Tensor4() = default;
  Tensor4(std::int64_t n_, std::int64_t c_, std::int64_t h_, std::int64_t w_,
          float fill = 0.0f)
      : n(n_), c(c_), h(h_), w(w_) {
    check_dims(n, c, h, w);
    data.assign(static_cast<std::size_t>(numel()), fill);
  }

  static Tensor4 zeros(std::int64_t n, std::int64_t c, std::int64_t h,
                       std::int64_t w) {
    return Tensor4(n, c, h, w, 0.0f);
  }

  static Tensor4 filled(std::int64_t n, std::int64_t c, std::int64_t h,
                        std::int64_t w, float v) {
    return Tensor4(n, c, h, w, v);
  }

  static Tensor4 gaussian(std::int64_t n, std::int64_t c, std::int64_t h,
                          std::int64_t w, float mean, float stddev, Rng& rng) {
    Tensor4 t(n, c, h, w);
    for (auto& v : t.data) v = rng.normal(mean, stddev);
    return t;
  }

  std::int64_t numel() const { return n * c * h * w; }

  float& at(std::int64_t in, std::int64_t ic, std::int64_t ih,
            std::int64_t iw) {
    return data[static_cast<std::size_t>(((in * c + ic) * h + ih) * w + iw)];
  }
  float at(std::int64_t in, std::int64_t ic, std::int64_t ih,
           std::int64_t iw) const {
    return data[static_cast<std::size_t>(((in * c + ic) * h + ih) * w + iw)];
  }

  const float* plane(std::int64_t in, std::int64_t ic) const {
    return data.data() + static_cast<std::size_t>((in * c + ic) * h * w);
  }
  float* plane(std::int64_t in, std::int64_t ic) {
    return data.data() + static_cast<std::size_t>((in * c + ic) * h * w);
  }

  /// Reinterpret the flat buffer under a new shape with the same element
  /// count. Round-tripping through any shape is the identity on data.
  Tensor4 reshaped(std::int64_t n2, std::int64_t c2, std::int64_t h2,
                   std::int64_t w2) const {
    check_dims(n2, c2, h2, w2);
    if (n2 * c2 * h2 * w2 != numel())
      throw ShapeError("reshape: element count mismatch");
    Tensor4 t;
    t.n = n2;
    t.c = c2;
    t.h = h2;
    t.w = w2;
    t.data = data;
    return t;
  }

  static void check_dims(std::int64_t n, std::int64_t c, std::int64_t h,
                         std::int64_t w) {
    if (n < 1 || c < 1 || h < 1 || w < 1)
      throw ShapeError("tensor dimensions must all be >= 1");
  }
};

/// Dense H x W float32 grid, row-major.
struct Grid2 {
  std::int64_t h = 0, w = 0;
  std::vector<float> data;

  Grid2() = default;
  Grid2(std::int64_t h_, std::int64_t w_, float fill = 0.0f) : h(h_), w(w_) {
    if (h < 1 || w < 1) throw ShapeError("grid dimensions must be >= 1");
    data.assign(static_cast<std::size_t>(h * w), fill);
  }

  std::int64_t numel() const { return h * w; }

  float& at(std::int64_t i, std::int64_t j) {
    return data[static_cast<std::size_t>(i * w + j)];
  }
  float at(std::int64_t i, std::int64_t j) const {
    return data[static_cast<std::size_t>(i * w + j)];
  }

  bool same_shape(const Grid2& o) const { return h == o.h && w == o.w; }
};

enum class Resample { kAveragePool, kBilinear, kSumPool };
enum class Reduce { kSum, kMax, kMean };

/// Clamped-border bilinear read used by resampling (not by the fractional
/// convolution, which zero-pads).
inline float grid_bilinear_clamped(const Grid2& g, double y, double x) {
  y = std::min(std::max(y, 0.0), static_cast<double>(g.h - 1));
  x = std::min(std::max(x, 0.0), static_cast<double>(g.w - 1));
  const std::int64_t i0 = static_cast<std::int64_t>(std::floor(y));
  const std::int64_t j0 = static_cast<std::int64_t>(std::floor(x));
  const std::int64_t i1 = std::min(i0 + 1, g.h - 1);
  const std::int64_t j1 = std::min(j0 + 1, g.w - 1);
  const float fi = static_cast<float>(y - static_cast<double>(i0));
  const float fj = static_cast<float>(x - static_cast<double>(j0));
  const float top = (1.0f - fj) * g.at(i0, j0) + fj * g.at(i0, j1);
  const float bot = (1.0f - fj) * g.at(i1, j0) + fj * g.at(i1, j1);
  return (1.0f - fi) * top + fi * bot;
}

/// Resample a grid. Average/sum pooling require exact integer reduction
/// factors and preserve the mean/total respectively; bilinear handles any
/// output size, mapping output pixel centers onto input coordinates with
/// border clamping.
inline Grid2 resample_grid(const Grid2& g, std::int64_t out_h,
                           std::int64_t out_w, Resample mode) {
  if (out_h < 1 || out_w < 1) throw ShapeError("resample: output dims >= 1");
  Grid2 out(out_h, out_w);
  if (mode == Resample::kAveragePool || mode == Resample::kSumPool) {
    if (g.h % out_h != 0 || g.w % out_w != 0)
      throw ShapeError("resample: incompatible pooling factor");
    const std::int64_t fh = g.h / out_h;
    const std::int64_t fw = g.w / out_w;
    const float inv = 1.0f / static_cast<float>(fh * fw);
    for (std::int64_t i = 0; i < out_h; ++i) {
      for (std::int64_t j = 0; j < out_w; ++j) {
        float acc = 0.0f;
        for (std::int64_t di = 0; di < fh; ++di)
          for (std::int64_t dj = 0; dj < fw; ++dj)
            acc += g.at(i * fh + di, j * fw + dj);
        out.at(i, j) = mode == Resample::kAveragePool ? acc * inv : acc;
      }
    }
  } else {
    const double sy = static_cast<double>(g.h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(g.w) / static_cast<double>(out_w);
    for (std::int64_t i = 0; i < out_h; ++i) {
      const double y = (static_cast<double>(i) + 0.5) * sy - 0.5;
      for (std::int64_t j = 0; j < out_w; ++j) {
        const double x = (static_cast<double>(j) + 0.5) * sx - 0.5;
        out.at(i, j) = grid_bilinear_clamped(g, y, x);
      }
    }
  }
  return out;
}

namespace detail {

inline double reduce_span(const float* p, std::int64_t count, Reduce op) {
  if (op == Reduce::kMax) {
    double m = p[0];
    for (std::int64_t i = 1; i < count; ++i)
      m = std::max(m, static_cast<double>(p[i]));
    return m;
  }
  double acc = 0.0;
  for (std::int64_t i = 0; i < count; ++i) acc += static_cast<double>(p[i]);
  return op == Reduce::kMean ? acc / static_cast<double>(count) : acc;
}

}  // namespace detail

/// Sequential reduction in flat (n, c, h, w) index order; deterministic for
/// any thread configuration because it never parallelizes.
inline double reduce(const Tensor4& t, Reduce op) {
  return detail::reduce_span(t.data.data(), t.numel(), op);
}

inline double reduce(const Grid2& g, Reduce op) {
  return detail::reduce_span(g.data.data(), g.numel(), op);
}

}  // namespace pfc
