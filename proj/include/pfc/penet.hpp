#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "pfc/nn.hpp"
#include "pfc/tensor.hpp"

namespace pfc {

/// Training phase of the perspective estimator. The decoder learns only in
/// phase 1; later phases keep it frozen.
enum class PENetPhase : int {
  kPhase1 = 1,
  kPhase2 = 2,
  kPhase3Supervised = 3,
  kPhase3Weak = 4,
};

enum class PENetEncoder { kPerspective, kImage };

/// Width configuration of the auto-encoder. width_mult 1 reproduces the
/// 32..1024 encoder channel ladder; fractional multipliers scale every stage
/// (minimum one channel). Six stride-2 encoder stages and six doubling
/// decoder stages, so inputs must be divisible by 64.
struct PENetConfig {
  double width_mult = 1.0;

  std::array<std::int64_t, 6> stage_channels() const {
    std::array<std::int64_t, 6> base{32, 64, 128, 256, 512, 1024};
    for (auto& c : base)
      c = std::max<std::int64_t>(
          1, static_cast<std::int64_t>(std::llround(c * width_mult)));
    return base;
  }
};

struct PENetState {
  PENetConfig config;
  PENetPhase phase = PENetPhase::kPhase1;
  std::vector<ConvWeights> encoder_s;  // perspective-map encoder, 1 input ch
  std::vector<ConvWeights> encoder_i;  // image encoder, 3 input channels
  std::vector<ConvWeights> decoder;    // transposed convs, last outputs 1 ch

  static PENetState init(const PENetConfig& cfg, Rng& rng) {
    PENetState st;
    st.config = cfg;
    const auto ch = cfg.stage_channels();
    std::int64_t prev = 1;
    for (int l = 0; l < 6; ++l) {
      st.encoder_s.push_back(
          ConvWeights::gaussian(ch[l], prev, 3, 0.0f, 0.01f, rng));
      prev = ch[l];
    }
    prev = 3;
    for (int l = 0; l < 6; ++l) {
      st.encoder_i.push_back(
          ConvWeights::gaussian(ch[l], prev, 3, 0.0f, 0.01f, rng));
      prev = ch[l];
    }
    for (int l = 5; l >= 1; --l) {
      st.decoder.push_back(
          ConvWeights::gaussian(ch[l - 1], ch[l], 3, 0.0f, 0.01f, rng));
    }
    st.decoder.push_back(ConvWeights::gaussian(1, ch[0], 3, 0.0f, 0.01f, rng));
    return st;
  }
};

/// Gradients shaped like the state's weights.
struct PENetGrads {
  std::vector<ConvWeights> encoder_s, encoder_i, decoder;

  static PENetGrads like(const PENetState& st) {
    PENetGrads g;
    for (const auto& w : st.encoder_s) g.encoder_s.push_back(w.like_zeros());
    for (const auto& w : st.encoder_i) g.encoder_i.push_back(w.like_zeros());
    for (const auto& w : st.decoder) g.decoder.push_back(w.like_zeros());
    return g;
  }
  void zero() {
    const auto clear = [](std::vector<ConvWeights>& ws) {
      for (auto& w : ws) {
        std::fill(w.kernel.begin(), w.kernel.end(), 0.0f);
        std::fill(w.bias.begin(), w.bias.end(), 0.0f);
      }
    };
    clear(encoder_s);
    clear(encoder_i);
    clear(decoder);
  }
};

struct PENetCache {
  PENetEncoder which = PENetEncoder::kPerspective;
  Tensor4 input;
  std::vector<Tensor4> enc_pre;
  std::vector<Tensor4> enc_act;
  std::vector<Tensor4> dec_pre;
  std::vector<Tensor4> dec_act;
};

constexpr float kPENetLeakySlope = 0.2f;

/// Run the auto-encoder: the chosen stride-2 encoder (leaky ReLU 0.2), then
/// the shared doubling decoder (plain ReLU, nonnegative output). Returns an
/// N x 1 x H x W tensor.
inline Tensor4 penet_forward(const Tensor4& input, PENetEncoder which,
                             const PENetState& st, PENetCache* cache = nullptr) {
  if (input.h % 64 != 0 || input.w % 64 != 0)
    throw ShapeError("penet: input spatial dims must be divisible by 64");
  const std::int64_t want_c = which == PENetEncoder::kPerspective ? 1 : 3;
  if (input.c != want_c)
    throw ShapeError("penet: input channels do not match the chosen encoder");

  const auto& enc =
      which == PENetEncoder::kPerspective ? st.encoder_s : st.encoder_i;
  if (cache) {
    *cache = PENetCache{};
    cache->which = which;
    cache->input = input;
  }
  Tensor4 cur = input;
  for (const auto& w : enc) {
    Tensor4 pre = conv2d_forward(cur, w, 2, 1);
    Tensor4 act = leaky_relu_forward(pre, kPENetLeakySlope);
    if (cache) {
      cache->enc_pre.push_back(std::move(pre));
      cache->enc_act.push_back(act);
    }
    cur = std::move(act);
  }
  for (const auto& w : st.decoder) {
    Tensor4 pre = convT2d_forward(cur, w);
    Tensor4 act = relu_forward(pre);
    if (cache) {
      cache->dec_pre.push_back(std::move(pre));
      cache->dec_act.push_back(act);
    }
    cur = std::move(act);
  }
  return cur;
}

/// Backward through decoder and the encoder recorded in the cache. Decoder
/// gradients are zeroed when frozen (phases 2 and 3), but the signal still
/// propagates through it into the encoder.
inline void penet_backward(const PENetState& st, const PENetCache& cache,
                           const Tensor4& dL_dout, PENetGrads& grads,
                           bool freeze_decoder) {
  Tensor4 d = dL_dout;
  for (int l = 5; l >= 0; --l) {
    d = relu_backward(cache.dec_pre[l], d);
    const Tensor4& in =
        l == 0 ? cache.enc_act.back() : cache.dec_act[l - 1];
    if (freeze_decoder) {
      ConvWeights discard = st.decoder[l].like_zeros();
      d = convT2d_backward(in, st.decoder[l], d, discard);
    } else {
      d = convT2d_backward(in, st.decoder[l], d, grads.decoder[l]);
    }
  }
  auto& enc_grads = cache.which == PENetEncoder::kPerspective
                        ? grads.encoder_s
                        : grads.encoder_i;
  const auto& enc = cache.which == PENetEncoder::kPerspective ? st.encoder_s
                                                              : st.encoder_i;
  for (int l = 5; l >= 0; --l) {
    d = leaky_relu_backward(cache.enc_pre[l], d, kPENetLeakySlope);
    const Tensor4& in = l == 0 ? cache.input : cache.enc_act[l - 1];
    d = conv2d_backward(in, enc[l], 2, 1, d, enc_grads[l]);
  }
}

/// (1 / 2N) * sum of squared differences; N is the batch size.
inline double loss_s2s(const Grid2& pred, const Grid2& target,
                       std::int64_t batch) {
  if (!pred.same_shape(target)) throw ShapeError("loss_s2s: shape mismatch");
  double acc = 0.0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - target.data[i];
    acc += d * d;
  }
  return acc / (2.0 * static_cast<double>(batch));
}

/// Identical functional form to loss_s2s; a distinct entry point because it
/// gates which encoder receives gradients (image-to-map phases).
inline double loss_i2s(const Grid2& pred_from_image, const Grid2& target,
                       std::int64_t batch) {
  return loss_s2s(pred_from_image, target, batch);
}

inline double loss_s2s(const Tensor4& pred, const Tensor4& target,
                       std::int64_t batch) {
  if (pred.numel() != target.numel()) throw ShapeError("loss_s2s: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - target.data[i];
    acc += d * d;
  }
  return acc / (2.0 * static_cast<double>(batch));
}

/// dL/dpred of loss_s2s.
inline Tensor4 loss_s2s_grad(const Tensor4& pred, const Tensor4& target,
                             std::int64_t batch) {
  Tensor4 g = pred;
  const float inv = 1.0f / static_cast<float>(batch);
  for (std::size_t i = 0; i < g.data.size(); ++i)
    g.data[i] = (pred.data[i] - target.data[i]) * inv;
  return g;
}

/// Peak signal-to-noise ratio in dB, capped at 99 (the zero-MSE sentinel).
inline double psnr(const Grid2& pred, const Grid2& target, double peak) {
  if (!pred.same_shape(target)) throw ShapeError("psnr: shape mismatch");
  if (!(peak > 0.0)) throw DomainError("psnr: peak must be > 0");
  double mse = 0.0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - target.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(pred.numel());
  if (mse == 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(peak * peak / mse));
}

}  // namespace pfc
