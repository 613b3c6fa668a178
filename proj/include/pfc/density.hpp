#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pfc/perspective.hpp"
#include "pfc/tensor.hpp"

namespace pfc {

/// Point head annotations in input-image coordinates, (x = column, y = row).
struct HeadAnnotations {
  std::vector<std::array<float, 2>> points;
  std::string image_id;
};

/// Nonnegative target grid whose total equals the number of stamped heads.
struct DensityMap {
  Grid2 grid;
};

/// Reject annotations outside [0, w) x [0, h).
inline void validate_annotations(const HeadAnnotations& heads, std::int64_t h,
                                 std::int64_t w) {
  for (const auto& p : heads.points) {
    if (!(p[0] >= 0.0f) || !(p[0] < static_cast<float>(w)) ||
        !(p[1] >= 0.0f) || !(p[1] < static_cast<float>(h)))
      throw DataError("head annotation outside image bounds");
  }
}

namespace detail {

// 15x15 Gaussian stamp, sigma 4, unnormalized; every stamp is renormalized
// over its clipped window so each head contributes exactly one count.
constexpr std::int64_t kStampSize = 15;
constexpr std::int64_t kStampHalf = kStampSize / 2;

inline const std::array<float, kStampSize * kStampSize>& density_stamp() {
  static const auto stamp = [] {
    std::array<float, kStampSize * kStampSize> s{};
    const float inv = 1.0f / (2.0f * 4.0f * 4.0f);
    for (std::int64_t u = -kStampHalf; u <= kStampHalf; ++u)
      for (std::int64_t v = -kStampHalf; v <= kStampHalf; ++v)
        s[(u + kStampHalf) * kStampSize + (v + kStampHalf)] =
            std::exp(-static_cast<float>(u * u + v * v) * inv);
    return s;
  }();
  return stamp;
}

}  // namespace detail

/// Build the ground-truth density map: every head stamps a 15x15, sigma-4
/// Gaussian centered at its nearest pixel, clipped to the image and
/// renormalized per head so the map total equals the head count.
inline DensityMap make_density(const HeadAnnotations& heads, std::int64_t h,
                               std::int64_t w) {
  validate_annotations(heads, h, w);
  DensityMap out{Grid2(h, w)};
  const auto& stamp = detail::density_stamp();
  for (const auto& p : heads.points) {
    std::int64_t cx = static_cast<std::int64_t>(std::lround(p[0]));
    std::int64_t cy = static_cast<std::int64_t>(std::lround(p[1]));
    cx = std::min(std::max<std::int64_t>(cx, 0), w - 1);
    cy = std::min(std::max<std::int64_t>(cy, 0), h - 1);
    const std::int64_t u0 = std::max<std::int64_t>(-detail::kStampHalf, -cy);
    const std::int64_t u1 = std::min(detail::kStampHalf, h - 1 - cy);
    const std::int64_t v0 = std::max<std::int64_t>(-detail::kStampHalf, -cx);
    const std::int64_t v1 = std::min(detail::kStampHalf, w - 1 - cx);
    float total = 0.0f;
    for (std::int64_t u = u0; u <= u1; ++u)
      for (std::int64_t v = v0; v <= v1; ++v)
        total += stamp[(u + detail::kStampHalf) * detail::kStampSize +
                       (v + detail::kStampHalf)];
    const float inv_total = 1.0f / total;
    for (std::int64_t u = u0; u <= u1; ++u)
      for (std::int64_t v = v0; v <= v1; ++v)
        out.grid.at(cy + u, cx + v) +=
            stamp[(u + detail::kStampHalf) * detail::kStampSize +
                  (v + detail::kStampHalf)] *
            inv_total;
  }
  return out;
}

/// One generated scene: rendered image, its head points, and a row-linear
/// perspective map consistent with the rendered blob sizes.
struct SyntheticScene {
  Tensor4 image;  // 1 x 3 x H x W, values in [0, 1]
  HeadAnnotations heads;
  PerspectiveMap persp;
  std::uint64_t seed = 0;
};

namespace detail {

inline void render_disc(Tensor4& img, float cy, float cx, float radius,
                        const std::array<float, 3>& color) {
  const std::int64_t H = img.h, W = img.w;
  const std::int64_t i0 = std::max<std::int64_t>(
      0, static_cast<std::int64_t>(std::floor(cy - radius)));
  const std::int64_t i1 = std::min<std::int64_t>(
      H - 1, static_cast<std::int64_t>(std::ceil(cy + radius)));
  const std::int64_t j0 = std::max<std::int64_t>(
      0, static_cast<std::int64_t>(std::floor(cx - radius)));
  const std::int64_t j1 = std::min<std::int64_t>(
      W - 1, static_cast<std::int64_t>(std::ceil(cx + radius)));
  const float r2 = radius * radius;
  for (std::int64_t i = i0; i <= i1; ++i) {
    for (std::int64_t j = j0; j <= j1; ++j) {
      const float dy = static_cast<float>(i) - cy;
      const float dx = static_cast<float>(j) - cx;
      if (dy * dy + dx * dx > r2) continue;
      for (std::int64_t c = 0; c < 3; ++c)
        img.at(0, c, i, j) = color[static_cast<std::size_t>(c)];
    }
  }
}

}  // namespace detail

/// Pixels of blob radius per unit of perspective value.
constexpr float kHeadRadiusPerPersp = 1.5f;

/// Generate deterministic toy scenes: a row-linear perspective map with
/// random positive slope/intercept, heads spaced out row by row, and filled
/// discs whose radii scale with the perspective value at their row.
inline std::vector<SyntheticScene> synth_dataset(std::int64_t n_scenes,
                                                 std::int64_t image_h,
                                                 std::int64_t image_w,
                                                 std::int64_t heads_min,
                                                 std::int64_t heads_max,
                                                 std::uint64_t seed) {
  if (n_scenes < 1) throw UsageError("synth_dataset: n_scenes must be >= 1");
  if (heads_min < 0 || heads_max < heads_min)
    throw UsageError("synth_dataset: bad density range");
  if (heads_max > image_h * image_w / 16)
    throw DomainError("synth_dataset: density range infeasible for shape");

  Rng rng(seed);
  std::vector<SyntheticScene> scenes;
  scenes.reserve(static_cast<std::size_t>(n_scenes));
  for (std::int64_t idx = 0; idx < n_scenes; ++idx) {
    SyntheticScene sc;
    sc.seed = seed;

    // Perspective grows toward the bottom of the image. The value range is
    // chosen so the rate pipeline at its standard initialization maps the
    // scene to dilation rates averaging about 2 and spanning a real spread,
    // instead of saturating the sigmoid.
    const float s_top = rng.uniform(0.4f, 1.0f);
    const float s_bot = rng.uniform(2.5f, 4.5f);
    sc.persp.grid = Grid2(image_h, image_w);
    for (std::int64_t i = 0; i < image_h; ++i) {
      const float s = s_top + (s_bot - s_top) * static_cast<float>(i) /
                                  static_cast<float>(image_h - 1);
      for (std::int64_t j = 0; j < image_w; ++j) sc.persp.grid.at(i, j) = s;
    }

    sc.image = Tensor4(1, 3, image_h, image_w);
    for (auto& v : sc.image.data) v = 0.08f + 0.06f * rng.next_float();

    const std::int64_t n_heads = rng.uniform_int(heads_min, heads_max);
    sc.heads.image_id = "scene_" + std::to_string(idx);
    for (std::int64_t hidx = 0; hidx < n_heads; ++hidx) {
      float y = 0.0f, x = 0.0f, radius = 0.0f;
      for (int attempt = 0; attempt < 16; ++attempt) {
        y = rng.uniform(0.0f, static_cast<float>(image_h) - 1e-3f);
        x = rng.uniform(0.0f, static_cast<float>(image_w) - 1e-3f);
        radius = kHeadRadiusPerPersp *
                 sc.persp.grid.at(static_cast<std::int64_t>(y), 0);
        bool ok = true;
        for (const auto& q : sc.heads.points) {
          const float dy = q[1] - y, dx = q[0] - x;
          if (std::abs(dy) < radius && dx * dx + dy * dy < 4.0f * radius * radius) {
            ok = false;  // too close to a head in the same row band
            break;
          }
        }
        if (ok) break;
      }
      sc.heads.points.push_back({x, y});
      const float shade = rng.uniform(0.55f, 0.95f);
      detail::render_disc(sc.image, y, x, radius,
                          {shade, shade * 0.9f, shade * 0.8f});
    }
    scenes.push_back(std::move(sc));
  }
  return scenes;
}

}  // namespace pfc
