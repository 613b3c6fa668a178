#pragma once

#include <cstdint>
#include <vector>

#include "pfc/fdconv.hpp"
#include "pfc/tensor.hpp"

namespace pfc {

// Plain layer primitives used by the perspective estimator and the counting
// network. All backward passes run sequentially in a fixed order.

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t k,
                                 std::int64_t stride, std::int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

inline Tensor4 conv2d_forward(const Tensor4& x, const ConvWeights& w,
                              std::int64_t stride, std::int64_t pad) {
  if (w.cin != x.c) throw ShapeError("conv2d: input channel mismatch");
  const std::int64_t K = w.k;
  const std::int64_t oh = conv_out_dim(x.h, K, stride, pad);
  const std::int64_t ow = conv_out_dim(x.w, K, stride, pad);
  if (oh < 1 || ow < 1) throw ShapeError("conv2d: output would be empty");
  Tensor4 y(x.n, w.cout, oh, ow);
  for (std::int64_t n = 0; n < x.n; ++n) {
    for (std::int64_t co = 0; co < w.cout; ++co) {
      for (std::int64_t i = 0; i < oh; ++i) {
        for (std::int64_t j = 0; j < ow; ++j) {
          float acc = w.bias[co];
          for (std::int64_t ci = 0; ci < x.c; ++ci) {
            const float* pl = x.plane(n, ci);
            for (std::int64_t a = 0; a < K; ++a) {
              const std::int64_t ii = i * stride - pad + a;
              if (ii < 0 || ii >= x.h) continue;
              for (std::int64_t b = 0; b < K; ++b) {
                const std::int64_t jj = j * stride - pad + b;
                if (jj < 0 || jj >= x.w) continue;
                acc += w.at(co, ci, a, b) * pl[ii * x.w + jj];
              }
            }
          }
          y.at(n, co, i, j) = acc;
        }
      }
    }
  }
  return y;
}

/// Scatter-style backward for conv2d_forward. Accumulates weight/bias grads
/// into gw and returns dL/dx.
inline Tensor4 conv2d_backward(const Tensor4& x, const ConvWeights& w,
                               std::int64_t stride, std::int64_t pad,
                               const Tensor4& dy, ConvWeights& gw) {
  if (dy.c != w.cout || dy.n != x.n)
    throw ShapeError("conv2d_backward: dy shape mismatch");
  const std::int64_t K = w.k;
  Tensor4 dx = Tensor4::zeros(x.n, x.c, x.h, x.w);
  for (std::int64_t n = 0; n < x.n; ++n) {
    for (std::int64_t co = 0; co < w.cout; ++co) {
      for (std::int64_t i = 0; i < dy.h; ++i) {
        for (std::int64_t j = 0; j < dy.w; ++j) {
          const float g = dy.at(n, co, i, j);
          if (g == 0.0f) continue;
          gw.bias[co] += g;
          for (std::int64_t ci = 0; ci < x.c; ++ci) {
            const float* pl = x.plane(n, ci);
            float* dpl = dx.plane(n, ci);
            for (std::int64_t a = 0; a < K; ++a) {
              const std::int64_t ii = i * stride - pad + a;
              if (ii < 0 || ii >= x.h) continue;
              for (std::int64_t b = 0; b < K; ++b) {
                const std::int64_t jj = j * stride - pad + b;
                if (jj < 0 || jj >= x.w) continue;
                gw.at(co, ci, a, b) += g * pl[ii * x.w + jj];
                dpl[ii * x.w + jj] += g * w.at(co, ci, a, b);
              }
            }
          }
        }
      }
    }
  }
  return dx;
}

/// Transposed convolution with kernel 3, stride 2, padding 1, output padding
/// 1: each stage exactly doubles the spatial dims. Weights use the same
/// (cout, cin, k, k) layout as conv2d.
inline Tensor4 convT2d_forward(const Tensor4& x, const ConvWeights& w) {
  if (w.cin != x.c) throw ShapeError("convT2d: input channel mismatch");
  const std::int64_t K = w.k, oh = x.h * 2, ow = x.w * 2;
  Tensor4 y(x.n, w.cout, oh, ow);
  for (std::int64_t n = 0; n < x.n; ++n) {
    for (std::int64_t co = 0; co < w.cout; ++co) {
      float* out = y.plane(n, co);
      for (std::int64_t i = 0; i < oh * ow; ++i) out[i] = w.bias[co];
      for (std::int64_t ci = 0; ci < x.c; ++ci) {
        const float* pl = x.plane(n, ci);
        for (std::int64_t i = 0; i < x.h; ++i) {
          for (std::int64_t j = 0; j < x.w; ++j) {
            const float v = pl[i * x.w + j];
            if (v == 0.0f) continue;
            for (std::int64_t a = 0; a < K; ++a) {
              const std::int64_t oi = i * 2 - 1 + a;
              if (oi < 0 || oi >= oh) continue;
              for (std::int64_t b = 0; b < K; ++b) {
                const std::int64_t oj = j * 2 - 1 + b;
                if (oj < 0 || oj >= ow) continue;
                out[oi * ow + oj] += v * w.at(co, ci, a, b);
              }
            }
          }
        }
      }
    }
  }
  return y;
}

inline Tensor4 convT2d_backward(const Tensor4& x, const ConvWeights& w,
                                const Tensor4& dy, ConvWeights& gw) {
  if (dy.c != w.cout || dy.h != x.h * 2 || dy.w != x.w * 2)
    throw ShapeError("convT2d_backward: dy shape mismatch");
  const std::int64_t K = w.k, oh = dy.h, ow = dy.w;
  Tensor4 dx = Tensor4::zeros(x.n, x.c, x.h, x.w);
  for (std::int64_t n = 0; n < x.n; ++n) {
    for (std::int64_t co = 0; co < w.cout; ++co) {
      const float* dpl = dy.plane(n, co);
      for (std::int64_t i = 0; i < oh * ow; ++i) gw.bias[co] += dpl[i];
      for (std::int64_t ci = 0; ci < x.c; ++ci) {
        const float* pl = x.plane(n, ci);
        float* dxp = dx.plane(n, ci);
        for (std::int64_t i = 0; i < x.h; ++i) {
          for (std::int64_t j = 0; j < x.w; ++j) {
            const float v = pl[i * x.w + j];
            float acc = 0.0f;
            for (std::int64_t a = 0; a < K; ++a) {
              const std::int64_t oi = i * 2 - 1 + a;
              if (oi < 0 || oi >= oh) continue;
              for (std::int64_t b = 0; b < K; ++b) {
                const std::int64_t oj = j * 2 - 1 + b;
                if (oj < 0 || oj >= ow) continue;
                const float g = dpl[oi * ow + oj];
                gw.at(co, ci, a, b) += v * g;
                acc += g * w.at(co, ci, a, b);
              }
            }
            dxp[i * x.w + j] += acc;
          }
        }
      }
    }
  }
  return dx;
}

inline Tensor4 relu_forward(const Tensor4& x) {
  Tensor4 y = x;
  for (auto& v : y.data) v = v > 0.0f ? v : 0.0f;
  return y;
}

inline Tensor4 relu_backward(const Tensor4& pre, const Tensor4& dy) {
  Tensor4 dx = dy;
  for (std::size_t i = 0; i < dx.data.size(); ++i)
    if (pre.data[i] <= 0.0f) dx.data[i] = 0.0f;
  return dx;
}

inline Tensor4 leaky_relu_forward(const Tensor4& x, float slope) {
  Tensor4 y = x;
  for (auto& v : y.data) v = v > 0.0f ? v : slope * v;
  return y;
}

inline Tensor4 leaky_relu_backward(const Tensor4& pre, const Tensor4& dy,
                                   float slope) {
  Tensor4 dx = dy;
  for (std::size_t i = 0; i < dx.data.size(); ++i)
    if (pre.data[i] <= 0.0f) dx.data[i] *= slope;
  return dx;
}

/// 2x2 max pooling, stride 2. Ties break on the first maximum in scan order;
/// argmax records the flat input index per output element for the backward
/// pass.
inline Tensor4 maxpool2_forward(const Tensor4& x,
                                std::vector<std::int64_t>* argmax) {
  if (x.h % 2 != 0 || x.w % 2 != 0)
    throw ShapeError("maxpool2: spatial dims must be even");
  const std::int64_t oh = x.h / 2, ow = x.w / 2;
  Tensor4 y(x.n, x.c, oh, ow);
  if (argmax) argmax->assign(static_cast<std::size_t>(y.numel()), 0);
  std::int64_t out_idx = 0;
  for (std::int64_t n = 0; n < x.n; ++n) {
    for (std::int64_t c = 0; c < x.c; ++c) {
      const float* pl = x.plane(n, c);
      for (std::int64_t i = 0; i < oh; ++i) {
        for (std::int64_t j = 0; j < ow; ++j, ++out_idx) {
          float best = pl[(2 * i) * x.w + 2 * j];
          std::int64_t best_at = (2 * i) * x.w + 2 * j;
          for (int di = 0; di < 2; ++di) {
            for (int dj = 0; dj < 2; ++dj) {
              const std::int64_t at = (2 * i + di) * x.w + (2 * j + dj);
              if (pl[at] > best) {
                best = pl[at];
                best_at = at;
              }
            }
          }
          y.at(n, c, i, j) = best;
          if (argmax)
            (*argmax)[out_idx] = (n * x.c + c) * x.h * x.w + best_at;
        }
      }
    }
  }
  return y;
}

inline Tensor4 maxpool2_backward(std::int64_t in_n, std::int64_t in_c,
                                 std::int64_t in_h, std::int64_t in_w,
                                 const std::vector<std::int64_t>& argmax,
                                 const Tensor4& dy) {
  Tensor4 dx = Tensor4::zeros(in_n, in_c, in_h, in_w);
  for (std::size_t i = 0; i < dy.data.size(); ++i)
    dx.data[argmax[i]] += dy.data[i];
  return dx;
}

/// Bilinear upsampling by an integer factor, pixel-center mapping with
/// border clamping (the same convention as resample_grid's bilinear mode).
inline Tensor4 upsample_bilinear_forward(const Tensor4& x,
                                         std::int64_t factor) {
  const std::int64_t oh = x.h * factor, ow = x.w * factor;
  const double sy = 1.0 / static_cast<double>(factor);
  Tensor4 y(x.n, x.c, oh, ow);
  for (std::int64_t n = 0; n < x.n; ++n) {
    for (std::int64_t c = 0; c < x.c; ++c) {
      const float* pl = x.plane(n, c);
      float* out = y.plane(n, c);
      for (std::int64_t i = 0; i < oh; ++i) {
        double yy = (static_cast<double>(i) + 0.5) * sy - 0.5;
        yy = std::min(std::max(yy, 0.0), static_cast<double>(x.h - 1));
        const std::int64_t i0 = static_cast<std::int64_t>(std::floor(yy));
        const std::int64_t i1 = std::min(i0 + 1, x.h - 1);
        const float fi = static_cast<float>(yy - static_cast<double>(i0));
        for (std::int64_t j = 0; j < ow; ++j) {
          double xx = (static_cast<double>(j) + 0.5) * sy - 0.5;
          xx = std::min(std::max(xx, 0.0), static_cast<double>(x.w - 1));
          const std::int64_t j0 = static_cast<std::int64_t>(std::floor(xx));
          const std::int64_t j1 = std::min(j0 + 1, x.w - 1);
          const float fj = static_cast<float>(xx - static_cast<double>(j0));
          const float top =
              (1.0f - fj) * pl[i0 * x.w + j0] + fj * pl[i0 * x.w + j1];
          const float bot =
              (1.0f - fj) * pl[i1 * x.w + j0] + fj * pl[i1 * x.w + j1];
          out[i * ow + j] = (1.0f - fi) * top + fi * bot;
        }
      }
    }
  }
  return y;
}

inline Tensor4 upsample_bilinear_backward(std::int64_t in_h, std::int64_t in_w,
                                          std::int64_t factor,
                                          const Tensor4& dy) {
  const double sy = 1.0 / static_cast<double>(factor);
  Tensor4 dx = Tensor4::zeros(dy.n, dy.c, in_h, in_w);
  for (std::int64_t n = 0; n < dy.n; ++n) {
    for (std::int64_t c = 0; c < dy.c; ++c) {
      const float* g = dy.plane(n, c);
      float* out = dx.plane(n, c);
      for (std::int64_t i = 0; i < dy.h; ++i) {
        double yy = (static_cast<double>(i) + 0.5) * sy - 0.5;
        yy = std::min(std::max(yy, 0.0), static_cast<double>(in_h - 1));
        const std::int64_t i0 = static_cast<std::int64_t>(std::floor(yy));
        const std::int64_t i1 = std::min(i0 + 1, in_h - 1);
        const float fi = static_cast<float>(yy - static_cast<double>(i0));
        for (std::int64_t j = 0; j < dy.w; ++j) {
          double xx = (static_cast<double>(j) + 0.5) * sy - 0.5;
          xx = std::min(std::max(xx, 0.0), static_cast<double>(in_w - 1));
          const std::int64_t j0 = static_cast<std::int64_t>(std::floor(xx));
          const std::int64_t j1 = std::min(j0 + 1, in_w - 1);
          const float fj = static_cast<float>(xx - static_cast<double>(j0));
          const float gv = g[i * dy.w + j];
          out[i0 * in_w + j0] += (1.0f - fi) * (1.0f - fj) * gv;
          out[i0 * in_w + j1] += (1.0f - fi) * fj * gv;
          out[i1 * in_w + j0] += fi * (1.0f - fj) * gv;
          out[i1 * in_w + j1] += fi * fj * gv;
        }
      }
    }
  }
  return dx;
}

/// Per-channel average pooling by integer factors (image downsampling).
inline Tensor4 avgpool2d(const Tensor4& x, std::int64_t factor) {
  if (x.h % factor != 0 || x.w % factor != 0)
    throw ShapeError("avgpool2d: incompatible factor");
  const std::int64_t oh = x.h / factor, ow = x.w / factor;
  const float inv = 1.0f / static_cast<float>(factor * factor);
  Tensor4 y(x.n, x.c, oh, ow);
  for (std::int64_t n = 0; n < x.n; ++n) {
    for (std::int64_t c = 0; c < x.c; ++c) {
      const float* pl = x.plane(n, c);
      for (std::int64_t i = 0; i < oh; ++i) {
        for (std::int64_t j = 0; j < ow; ++j) {
          float acc = 0.0f;
          for (std::int64_t di = 0; di < factor; ++di)
            for (std::int64_t dj = 0; dj < factor; ++dj)
              acc += pl[(i * factor + di) * x.w + (j * factor + dj)];
          y.at(n, c, i, j) = acc * inv;
        }
      }
    }
  }
  return y;
}

/// Backward of average pooling over a Grid2: spread each coarse gradient
/// uniformly across its source block.
inline Grid2 avgpool_grid_backward(const Grid2& dy, std::int64_t in_h,
                                   std::int64_t in_w) {
  if (in_h % dy.h != 0 || in_w % dy.w != 0)
    throw ShapeError("avgpool_grid_backward: incompatible factor");
  const std::int64_t fh = in_h / dy.h, fw = in_w / dy.w;
  const float inv = 1.0f / static_cast<float>(fh * fw);
  Grid2 dx(in_h, in_w);
  for (std::int64_t i = 0; i < in_h; ++i)
    for (std::int64_t j = 0; j < in_w; ++j)
      dx.at(i, j) = dy.at(i / fh, j / fw) * inv;
  return dx;
}

}  // namespace pfc
