#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "pfc/parallel.hpp"
#include "pfc/tensor.hpp"

namespace pfc {

/// K x K filter bank with per-output-channel bias. K must be odd so the tap
/// offsets enumerate the integers in [-K/2, K/2] on each axis.
struct ConvWeights {
  std::int64_t cout = 0, cin = 0, k = 0;
  std::vector<float> kernel;  // cout * cin * k * k, row-major
  std::vector<float> bias;    // cout

  ConvWeights() = default;
  ConvWeights(std::int64_t cout_, std::int64_t cin_, std::int64_t k_)
      : cout(cout_), cin(cin_), k(k_) {
    if (cout < 1 || cin < 1 || k < 1 || k % 2 == 0)
      throw ShapeError("conv weights: channels >= 1 and odd kernel required");
    kernel.assign(static_cast<std::size_t>(cout * cin * k * k), 0.0f);
    bias.assign(static_cast<std::size_t>(cout), 0.0f);
  }

  static ConvWeights gaussian(std::int64_t cout, std::int64_t cin,
                              std::int64_t k, float mean, float stddev,
                              Rng& rng) {
    ConvWeights w(cout, cin, k);
    for (auto& v : w.kernel) v = rng.normal(mean, stddev);
    return w;
  }

  float& at(std::int64_t co, std::int64_t ci, std::int64_t a, std::int64_t b) {
    return kernel[static_cast<std::size_t>(((co * cin + ci) * k + a) * k + b)];
  }
  float at(std::int64_t co, std::int64_t ci, std::int64_t a,
           std::int64_t b) const {
    return kernel[static_cast<std::size_t>(((co * cin + ci) * k + a) * k + b)];
  }

  std::int64_t taps() const { return cin * k * k; }

  ConvWeights like_zeros() const { return ConvWeights(cout, cin, k); }
};

/// Fractional sampling location (row, col). May lie outside the grid;
/// out-of-bounds neighbors contribute zero.
struct SamplePoint {
  float i_hat = 0.0f;
  float j_hat = 0.0f;
};

struct FdconvGrads {
  Tensor4 d_input;
  ConvWeights d_weights;
  Grid2 d_rate;
};

namespace detail {

/// One axis of the bilinear kernel at a fractional coordinate: base index,
/// the two hat weights, and the derivative factors of each hat w.r.t. the
/// coordinate. At exact grid lines (frac == 0) the derivative convention is
/// 0 on both hats.
struct AxisTaps {
  std::int64_t q0 = 0;
  float w0 = 0.0f, w1 = 0.0f;
  float d0 = 0.0f, d1 = 0.0f;
};

inline AxisTaps axis_taps(float coord) {
  AxisTaps t;
  const float fl = std::floor(coord);
  t.q0 = static_cast<std::int64_t>(fl);
  const float f = coord - fl;
  t.w0 = 1.0f - f;
  t.w1 = f;
  if (f != 0.0f) {
    t.d0 = -1.0f;
    t.d1 = 1.0f;
  }
  return t;
}

inline float sample_plane(const float* p, std::int64_t H, std::int64_t W,
                          const AxisTaps& r, const AxisTaps& c) {
  const bool r0 = r.q0 >= 0 && r.q0 < H;
  const bool r1 = r.q0 + 1 >= 0 && r.q0 + 1 < H;
  const bool c0 = c.q0 >= 0 && c.q0 < W;
  const bool c1 = c.q0 + 1 >= 0 && c.q0 + 1 < W;
  float acc = 0.0f;
  if (r0) {
    const float* row = p + r.q0 * W;
    float v = 0.0f;
    if (c0) v += c.w0 * row[c.q0];
    if (c1) v += c.w1 * row[c.q0 + 1];
    acc += r.w0 * v;
  }
  if (r1) {
    const float* row = p + (r.q0 + 1) * W;
    float v = 0.0f;
    if (c0) v += c.w0 * row[c.q0];
    if (c1) v += c.w1 * row[c.q0 + 1];
    acc += r.w1 * v;
  }
  return acc;
}

/// Spatial gradient of the sampled value w.r.t. (i_hat, j_hat) under the
/// hat-function subgradient convention (zero exactly on grid lines).
inline void sample_plane_grad(const float* p, std::int64_t H, std::int64_t W,
                              const AxisTaps& r, const AxisTaps& c,
                              float* d_di, float* d_dj) {
  const bool r0 = r.q0 >= 0 && r.q0 < H;
  const bool r1 = r.q0 + 1 >= 0 && r.q0 + 1 < H;
  const bool c0 = c.q0 >= 0 && c.q0 < W;
  const bool c1 = c.q0 + 1 >= 0 && c.q0 + 1 < W;
  float row0 = 0.0f, row1 = 0.0f, col0 = 0.0f, col1 = 0.0f;
  if (r0) {
    const float* row = p + r.q0 * W;
    if (c0) {
      row0 += c.w0 * row[c.q0];
      col0 += r.w0 * row[c.q0];
    }
    if (c1) {
      row0 += c.w1 * row[c.q0 + 1];
      col1 += r.w0 * row[c.q0 + 1];
    }
  }
  if (r1) {
    const float* row = p + (r.q0 + 1) * W;
    if (c0) {
      row1 += c.w0 * row[c.q0];
      col0 += r.w1 * row[c.q0];
    }
    if (c1) {
      row1 += c.w1 * row[c.q0 + 1];
      col1 += r.w1 * row[c.q0 + 1];
    }
  }
  *d_di = r.d0 != 0.0f ? row1 - row0 : 0.0f;
  *d_dj = c.d0 != 0.0f ? col1 - col0 : 0.0f;
}

inline float dot_unrolled(const float* a, const float* b, std::int64_t n) {
  float s0 = 0.0f, s1 = 0.0f, s2 = 0.0f, s3 = 0.0f;
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline void check_rate_map(const Grid2& rate) {
  for (const float r : rate.data) {
    if (!(r >= 0.0f) || !std::isfinite(r))
      throw DomainError("dilation rate map must be finite and >= 0");
  }
}

}  // namespace detail

/// Bilinear read of x(n, c, .) at a fractional location with zero padding:
/// sum over the four neighbors q of G(q, p_hat) * x(q), where G is the
/// product of 1-D hat kernels max(0, 1 - |m - n|).
inline float bilinear_sample(const Tensor4& x, std::int64_t n, std::int64_t c,
                             SamplePoint p_hat) {
  if (n < 0 || n >= x.n || c < 0 || c >= x.c)
    throw ShapeError("bilinear_sample: index out of range");
  if (!std::isfinite(p_hat.i_hat) || !std::isfinite(p_hat.j_hat))
    throw DomainError("bilinear_sample: non-finite coordinate");
  const auto r = detail::axis_taps(p_hat.i_hat);
  const auto cc = detail::axis_taps(p_hat.j_hat);
  return detail::sample_plane(x.plane(n, c), x.h, x.w, r, cc);
}

struct BilinearSampleGrads {
  float d_di = 0.0f;
  float d_dj = 0.0f;
  /// In-bounds neighbors with nonzero kernel weight: ((qi, qj), G(q, p_hat)).
  std::array<std::pair<std::array<std::int64_t, 2>, float>, 4> d_dx{};
  int n_dx = 0;
};

inline BilinearSampleGrads bilinear_sample_grads(const Tensor4& x,
                                                 std::int64_t n,
                                                 std::int64_t c,
                                                 SamplePoint p_hat) {
  if (n < 0 || n >= x.n || c < 0 || c >= x.c)
    throw ShapeError("bilinear_sample_grads: index out of range");
  if (!std::isfinite(p_hat.i_hat) || !std::isfinite(p_hat.j_hat))
    throw DomainError("bilinear_sample_grads: non-finite coordinate");
  const auto r = detail::axis_taps(p_hat.i_hat);
  const auto cc = detail::axis_taps(p_hat.j_hat);
  BilinearSampleGrads g;
  detail::sample_plane_grad(x.plane(n, c), x.h, x.w, r, cc, &g.d_di, &g.d_dj);
  const std::array<std::int64_t, 2> qi{r.q0, r.q0 + 1};
  const std::array<std::int64_t, 2> qj{cc.q0, cc.q0 + 1};
  const std::array<float, 2> wi{r.w0, r.w1};
  const std::array<float, 2> wj{cc.w0, cc.w1};
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      const float coeff = wi[a] * wj[b];
      if (coeff == 0.0f) continue;
      if (qi[a] < 0 || qi[a] >= x.h || qj[b] < 0 || qj[b] >= x.w) continue;
      g.d_dx[g.n_dx++] = {{qi[a], qj[b]}, coeff};
    }
  }
  return g;
}

/// Fractional-dilation convolution. Each output position p reads K*K taps at
/// p + p_k * r(p) via bilinear interpolation (one rate per position, shared
/// across channels and taps) and accumulates them with the filter weights.
/// Zero padding: out-of-bounds neighbors contribute nothing.
inline Tensor4 fdconv_forward(const Tensor4& x, const ConvWeights& w,
                              const Grid2& rate, std::int64_t stride = 1) {
  if (stride != 1) throw DomainError("fdconv: only stride 1 is supported");
  if (w.cin != x.c) throw ShapeError("fdconv: input channel mismatch");
  if (rate.h != x.h || rate.w != x.w)
    throw ShapeError("fdconv: rate map must match output spatial shape");
  detail::check_rate_map(rate);

  const std::int64_t K = w.k, k0 = K / 2, len = w.taps();
  const std::int64_t H = x.h, W = x.w;
  Tensor4 y(x.n, w.cout, H, W);

  for (std::int64_t n = 0; n < x.n; ++n) {
    parallel_chunks(H, [&, n](std::int64_t row_b, std::int64_t row_e) {
      std::vector<float> buf(static_cast<std::size_t>(len));
      std::vector<detail::AxisTaps> rows(static_cast<std::size_t>(K));
      std::vector<detail::AxisTaps> cols(static_cast<std::size_t>(K));
      for (std::int64_t i = row_b; i < row_e; ++i) {
        for (std::int64_t j = 0; j < W; ++j) {
          const float r = rate.at(i, j);
          for (std::int64_t a = 0; a < K; ++a) {
            rows[a] = detail::axis_taps(static_cast<float>(i) +
                                        static_cast<float>(a - k0) * r);
            cols[a] = detail::axis_taps(static_cast<float>(j) +
                                        static_cast<float>(a - k0) * r);
          }
          for (std::int64_t ci = 0; ci < x.c; ++ci) {
            const float* pl = x.plane(n, ci);
            float* dst = buf.data() + ci * K * K;
            for (std::int64_t a = 0; a < K; ++a)
              for (std::int64_t b = 0; b < K; ++b)
                dst[a * K + b] = detail::sample_plane(pl, H, W, rows[a], cols[b]);
          }
          for (std::int64_t co = 0; co < w.cout; ++co) {
            const float* kr = w.kernel.data() + co * len;
            y.at(n, co, i, j) =
                w.bias[co] + detail::dot_unrolled(kr, buf.data(), len);
          }
        }
      }
    });
  }
  return y;
}

/// Backward pass of fdconv_forward. Produces the filter/bias gradients, the
/// input gradient (scattered through the bilinear kernel), and the rate-map
/// gradient: per position, the sampling-location derivative of each tap
/// projected onto its offset vector p_k and weighted by the filter.
/// Sequential by construction so results never depend on the thread count.
inline FdconvGrads fdconv_backward(const Tensor4& x, const ConvWeights& w,
                                   const Grid2& rate, const Tensor4& dL_dy) {
  if (w.cin != x.c) throw ShapeError("fdconv_backward: channel mismatch");
  if (rate.h != x.h || rate.w != x.w)
    throw ShapeError("fdconv_backward: rate map shape mismatch");
  if (dL_dy.n != x.n || dL_dy.c != w.cout || dL_dy.h != x.h || dL_dy.w != x.w)
    throw ShapeError("fdconv_backward: dL_dy shape mismatch");
  detail::check_rate_map(rate);

  const std::int64_t K = w.k, k0 = K / 2, kk = K * K, len = w.taps();
  const std::int64_t H = x.h, W = x.w;

  FdconvGrads g{Tensor4::zeros(x.n, x.c, H, W), w.like_zeros(), Grid2(H, W)};

  std::vector<float> xs(static_cast<std::size_t>(len));   // sampled taps
  std::vector<float> gi(static_cast<std::size_t>(len));   // d sample / d i_hat
  std::vector<float> gj(static_cast<std::size_t>(len));   // d sample / d j_hat
  std::vector<float> s(static_cast<std::size_t>(len));    // sum_co dy * w
  std::vector<float> dyv(static_cast<std::size_t>(w.cout));
  std::vector<detail::AxisTaps> rows(static_cast<std::size_t>(K));
  std::vector<detail::AxisTaps> cols(static_cast<std::size_t>(K));

  for (std::int64_t n = 0; n < x.n; ++n) {
    for (std::int64_t i = 0; i < H; ++i) {
      for (std::int64_t j = 0; j < W; ++j) {
        const float r = rate.at(i, j);
        for (std::int64_t a = 0; a < K; ++a) {
          rows[a] = detail::axis_taps(static_cast<float>(i) +
                                      static_cast<float>(a - k0) * r);
          cols[a] = detail::axis_taps(static_cast<float>(j) +
                                      static_cast<float>(a - k0) * r);
        }
        for (std::int64_t ci = 0; ci < x.c; ++ci) {
          const float* pl = x.plane(n, ci);
          const std::int64_t base = ci * kk;
          for (std::int64_t a = 0; a < K; ++a) {
            for (std::int64_t b = 0; b < K; ++b) {
              const std::int64_t t = base + a * K + b;
              xs[t] = detail::sample_plane(pl, H, W, rows[a], cols[b]);
              detail::sample_plane_grad(pl, H, W, rows[a], cols[b], &gi[t],
                                        &gj[t]);
            }
          }
        }
        for (std::int64_t co = 0; co < w.cout; ++co)
          dyv[co] = dL_dy.at(n, co, i, j);
        std::fill(s.begin(), s.end(), 0.0f);
        for (std::int64_t co = 0; co < w.cout; ++co) {
          const float dy = dyv[co];
          g.d_weights.bias[co] += dy;
          float* dw = g.d_weights.kernel.data() + co * len;
          const float* kr = w.kernel.data() + co * len;
          for (std::int64_t t = 0; t < len; ++t) {
            dw[t] += dy * xs[t];
            s[t] += dy * kr[t];
          }
        }
        float dr = 0.0f;
        float* dxp = nullptr;
        for (std::int64_t ci = 0; ci < x.c; ++ci) {
          dxp = g.d_input.plane(n, ci);
          const std::int64_t base = ci * kk;
          for (std::int64_t a = 0; a < K; ++a) {
            const auto& rt = rows[a];
            const bool r0 = rt.q0 >= 0 && rt.q0 < H;
            const bool r1 = rt.q0 + 1 >= 0 && rt.q0 + 1 < H;
            for (std::int64_t b = 0; b < K; ++b) {
              const auto& ct = cols[b];
              const std::int64_t t = base + a * K + b;
              const float sv = s[t];
              if (sv != 0.0f) {
                const bool c0 = ct.q0 >= 0 && ct.q0 < W;
                const bool c1 = ct.q0 + 1 >= 0 && ct.q0 + 1 < W;
                if (r0) {
                  float* rp = dxp + rt.q0 * W;
                  if (c0) rp[ct.q0] += sv * rt.w0 * ct.w0;
                  if (c1) rp[ct.q0 + 1] += sv * rt.w0 * ct.w1;
                }
                if (r1) {
                  float* rp = dxp + (rt.q0 + 1) * W;
                  if (c0) rp[ct.q0] += sv * rt.w1 * ct.w0;
                  if (c1) rp[ct.q0 + 1] += sv * rt.w1 * ct.w1;
                }
              }
              dr += sv * (static_cast<float>(a - k0) * gi[t] +
                          static_cast<float>(b - k0) * gj[t]);
            }
          }
        }
        g.d_rate.at(i, j) += dr;
      }
    }
  }
  return g;
}

/// Plain integer-rate dilated convolution with zero padding; the direct
/// nested-loop reference the fractional op is checked against.
inline Tensor4 dilated_conv_ref(const Tensor4& x, const ConvWeights& w,
                                std::int64_t r) {
  if (r < 1) throw DomainError("dilated_conv_ref: rate must be >= 1");
  if (w.cin != x.c) throw ShapeError("dilated_conv_ref: channel mismatch");
  const std::int64_t K = w.k, k0 = K / 2;
  Tensor4 y(x.n, w.cout, x.h, x.w);
  for (std::int64_t n = 0; n < x.n; ++n) {
    parallel_chunks(x.h, [&, n](std::int64_t row_b, std::int64_t row_e) {
      for (std::int64_t i = row_b; i < row_e; ++i) {
        for (std::int64_t j = 0; j < x.w; ++j) {
          for (std::int64_t co = 0; co < w.cout; ++co) {
            float acc = w.bias[co];
            for (std::int64_t ci = 0; ci < x.c; ++ci) {
              for (std::int64_t a = 0; a < K; ++a) {
                const std::int64_t ii = i + (a - k0) * r;
                if (ii < 0 || ii >= x.h) continue;
                for (std::int64_t b = 0; b < K; ++b) {
                  const std::int64_t jj = j + (b - k0) * r;
                  if (jj < 0 || jj >= x.w) continue;
                  acc += w.at(co, ci, a, b) * x.at(n, ci, ii, jj);
                }
              }
            }
            y.at(n, co, i, j) = acc;
          }
        }
      }
    });
  }
  return y;
}

/// Spatially variant Gaussian smoothing (the prior method's first stage,
/// kept forward-only as a benchmark baseline). The window at each position
/// is renormalized over its in-bounds taps so constants are preserved
/// everywhere; sigma below 1e-3 degenerates to the identity.
inline Tensor4 pgc_smooth_forward(const Tensor4& x, const Grid2& sigma,
                                  std::int64_t kernel_size) {
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw DomainError("pgc_smooth_forward: kernel size must be odd");
  if (sigma.h != x.h || sigma.w != x.w)
    throw ShapeError("pgc_smooth_forward: sigma map shape mismatch");
  for (const float sv : sigma.data)
    if (!(sv >= 0.0f) || !std::isfinite(sv))
      throw DomainError("pgc_smooth_forward: sigma must be finite and >= 0");

  constexpr float kSigmaMin = 1e-3f;
  const std::int64_t half = kernel_size / 2;
  Tensor4 y(x.n, x.c, x.h, x.w);
  for (std::int64_t n = 0; n < x.n; ++n) {
    parallel_chunks(x.h, [&, n](std::int64_t row_b, std::int64_t row_e) {
      std::vector<float> win(static_cast<std::size_t>(kernel_size * kernel_size));
      for (std::int64_t i = row_b; i < row_e; ++i) {
        for (std::int64_t j = 0; j < x.w; ++j) {
          const float sv = sigma.at(i, j);
          if (sv < kSigmaMin) {
            for (std::int64_t c = 0; c < x.c; ++c)
              y.at(n, c, i, j) = x.at(n, c, i, j);
            continue;
          }
          const float inv2s2 = 1.0f / (2.0f * sv * sv);
          float norm = 0.0f;
          for (std::int64_t u = -half; u <= half; ++u) {
            for (std::int64_t v = -half; v <= half; ++v) {
              const std::int64_t ii = i + u, jj = j + v;
              float wv = 0.0f;
              if (ii >= 0 && ii < x.h && jj >= 0 && jj < x.w) {
                wv = std::exp(-static_cast<float>(u * u + v * v) * inv2s2);
                norm += wv;
              }
              win[(u + half) * kernel_size + (v + half)] = wv;
            }
          }
          const float inv_norm = 1.0f / norm;
          for (std::int64_t c = 0; c < x.c; ++c) {
            const float* pl = x.plane(n, c);
            float acc = 0.0f;
            for (std::int64_t u = -half; u <= half; ++u) {
              const std::int64_t ii = i + u;
              if (ii < 0 || ii >= x.h) continue;
              const float* row = pl + ii * x.w;
              for (std::int64_t v = -half; v <= half; ++v) {
                const std::int64_t jj = j + v;
                if (jj < 0 || jj >= x.w) continue;
                acc += win[(u + half) * kernel_size + (v + half)] * row[jj];
              }
            }
            y.at(n, c, i, j) = acc * inv_norm;
          }
        }
      }
    });
  }
  return y;
}

}  // namespace pfc
