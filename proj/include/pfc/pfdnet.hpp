#pragma once

#include <cstdint>
#include <vector>

#include "pfc/fdconv.hpp"
#include "pfc/nn.hpp"
#include "pfc/penet.hpp"
#include "pfc/perspective.hpp"
#include "pfc/tensor.hpp"

namespace pfc {

enum class PerspSource { kGroundTruth, kPenet, kMeanAblation };

/// Toy-scale counting network: a stride-8 plain-conv backbone, a stack of
/// PFC blocks driven by one shared perspective map (each block owns its four
/// rate scalars), x4 bilinear upsampling and a 1x1 density head, so the
/// prediction sits at half the input resolution.
struct PfdnetConfig {
  std::vector<std::int64_t> backbone_channels{16, 32, 64};
  std::vector<std::int64_t> pfc_channels{64, 64, 64, 32, 32, 16};
  std::int64_t kernel = 3;
  std::int64_t upsample_factor = 4;
  PerspSource persp_source = PerspSource::kGroundTruth;
  double penet_width_mult = 1.0 / 8.0;

  std::int64_t feature_stride() const { return 8; }

  void validate() const {
    if (backbone_channels.size() != 3)
      throw UsageError("pfdnet: backbone must have 3 stages");
    if (pfc_channels.empty() || pfc_channels.size() > 6)
      throw UsageError("pfdnet: need between 1 and 6 PFC blocks");
    if (kernel % 2 == 0) throw UsageError("pfdnet: kernel must be odd");
    if (upsample_factor != 4)
      throw UsageError("pfdnet: upsample factor is fixed at 4");
  }
};

struct PfdnetState {
  PfdnetConfig config;
  std::vector<ConvWeights> backbone;
  std::vector<ConvWeights> pfc;
  std::vector<RateParams> rate_params;
  ConvWeights head;
  PENetState penet;  // populated when persp_source == kPenet

  /// Weights use fan-in-scaled Gaussians. The reference recipe pairs a
  /// pretrained backbone with batch-norm after every dilated conv; this
  /// norm-free desk-scale stack needs the scaled init to keep activations
  /// alive through nine layers, otherwise predictions collapse onto the
  /// biases and the rate maps stop mattering.
  static PfdnetState init(const PfdnetConfig& cfg, Rng& rng) {
    cfg.validate();
    PfdnetState st;
    st.config = cfg;
    const auto he_std = [](std::int64_t k, std::int64_t cin) {
      return std::sqrt(2.0f / static_cast<float>(k * k * cin));
    };
    std::int64_t prev = 3;
    for (std::int64_t c : cfg.backbone_channels) {
      st.backbone.push_back(
          ConvWeights::gaussian(c, prev, 3, 0.0f, he_std(3, prev), rng));
      prev = c;
    }
    for (std::int64_t c : cfg.pfc_channels) {
      st.pfc.push_back(ConvWeights::gaussian(
          c, prev, cfg.kernel, 0.0f, he_std(cfg.kernel, prev), rng));
      st.rate_params.emplace_back();
      prev = c;
    }
    st.head = ConvWeights::gaussian(1, prev, 1, 0.0f, he_std(1, prev), rng);
    if (cfg.persp_source == PerspSource::kPenet) {
      PENetConfig pc;
      pc.width_mult = cfg.penet_width_mult;
      st.penet = PENetState::init(pc, rng);
      st.penet.phase = PENetPhase::kPhase3Weak;
    }
    return st;
  }

  void zero_rate_grads() {
    for (auto& p : rate_params) p.zero_grads();
  }
};

struct PfdnetGrads {
  std::vector<ConvWeights> backbone, pfc;
  ConvWeights head;
  PENetGrads penet;
  Grid2 d_persp_feat;  // dL/ds at feature resolution (all blocks summed)

  static PfdnetGrads like(const PfdnetState& st) {
    PfdnetGrads g;
    for (const auto& w : st.backbone) g.backbone.push_back(w.like_zeros());
    for (const auto& w : st.pfc) g.pfc.push_back(w.like_zeros());
    g.head = st.head.like_zeros();
    if (st.config.persp_source == PerspSource::kPenet)
      g.penet = PENetGrads::like(st.penet);
    return g;
  }
  void zero() {
    const auto clear = [](std::vector<ConvWeights>& ws) {
      for (auto& w : ws) {
        std::fill(w.kernel.begin(), w.kernel.end(), 0.0f);
        std::fill(w.bias.begin(), w.bias.end(), 0.0f);
      }
    };
    clear(backbone);
    clear(pfc);
    std::fill(head.kernel.begin(), head.kernel.end(), 0.0f);
    std::fill(head.bias.begin(), head.bias.end(), 0.0f);
    penet.zero();
    if (d_persp_feat.numel() > 0)
      std::fill(d_persp_feat.data.begin(), d_persp_feat.data.end(), 0.0f);
  }
};

struct PfdnetCache {
  bool valid = false;
  Tensor4 image;
  std::vector<Tensor4> bb_pre, bb_act, bb_pooled;
  std::vector<std::vector<std::int64_t>> bb_argmax;
  Grid2 s_feat;
  std::vector<Grid2> rates;
  std::vector<Tensor4> pfc_in, pfc_pre;
  Tensor4 up_out;
  Tensor4 head_pre;
  Tensor4 density;
  PENetCache penet_cache;
  std::int64_t persp_h = 0, persp_w = 0;  // penet output resolution
};

struct PfdnetOutput {
  std::vector<Grid2> density;    // one per batch item, H/2 x W/2
  std::vector<Grid2> rate_maps;  // one per PFC block (shared across items)
};

inline Grid2 tensor_plane_to_grid(const Tensor4& t, std::int64_t n,
                                  std::int64_t c) {
  Grid2 g(t.h, t.w);
  const float* p = t.plane(n, c);
  std::copy(p, p + t.h * t.w, g.data.begin());
  return g;
}

inline PfdnetOutput pfdnet_forward(const Tensor4& image,
                                   const PerspectiveMap* persp,
                                   const PfdnetState& st, PfdnetCache& cache) {
  const PfdnetConfig& cfg = st.config;
  if (image.c != 3) throw ShapeError("pfdnet: expected a 3-channel image");
  if (image.h % 8 != 0 || image.w % 8 != 0)
    throw ShapeError("pfdnet: image dims must be divisible by 8");

  cache = PfdnetCache{};
  cache.image = image;

  // ---- backbone: 3 x (conv3x3 + ReLU + maxpool2) -> stride 8
  Tensor4 cur = image;
  for (std::size_t s = 0; s < st.backbone.size(); ++s) {
    Tensor4 pre = conv2d_forward(cur, st.backbone[s], 1, 1);
    Tensor4 act = relu_forward(pre);
    std::vector<std::int64_t> argmax;
    Tensor4 pooled = maxpool2_forward(act, &argmax);
    cache.bb_pre.push_back(std::move(pre));
    cache.bb_act.push_back(std::move(act));
    cache.bb_argmax.push_back(std::move(argmax));
    cache.bb_pooled.push_back(pooled);
    cur = std::move(pooled);
  }
  const std::int64_t fh = cur.h, fw = cur.w;

  // ---- perspective at feature resolution
  Grid2 s_full;
  if (cfg.persp_source == PerspSource::kPenet) {
    if (image.h % 64 != 0 || image.w % 64 != 0)
      throw ShapeError("pfdnet: penet mode needs dims divisible by 64");
    if (image.n != 1)
      throw UsageError("pfdnet: penet mode processes one image per call");
    Tensor4 est = penet_forward(image, PENetEncoder::kImage, st.penet,
                                &cache.penet_cache);
    cache.persp_h = est.h;
    cache.persp_w = est.w;
    s_full = tensor_plane_to_grid(est, 0, 0);
  } else {
    if (!persp)
      throw UsageError("pfdnet: perspective map required for this source");
    if (persp->grid.h != image.h || persp->grid.w != image.w)
      throw ShapeError("pfdnet: perspective map must match the image size");
    s_full = cfg.persp_source == PerspSource::kMeanAblation
                 ? mean_perspective(*persp).grid
                 : persp->grid;
  }
  cache.s_feat = resample_grid(s_full, fh, fw, Resample::kAveragePool);

  // ---- PFC stack
  PfdnetOutput out;
  for (std::size_t b = 0; b < st.pfc.size(); ++b) {
    Grid2 s_tilde = normalize_zeta(cache.s_feat, st.rate_params[b]);
    Grid2 r = rate_map(s_tilde, st.rate_params[b]);
    cache.pfc_in.push_back(cur);
    Tensor4 pre = fdconv_forward(cur, st.pfc[b], r);
    cache.rates.push_back(r);
    out.rate_maps.push_back(std::move(r));
    cur = relu_forward(pre);
    cache.pfc_pre.push_back(std::move(pre));
  }

  // ---- upsample + 1x1 head
  cache.up_out = upsample_bilinear_forward(cur, cfg.upsample_factor);
  cache.pfc_in.push_back(cur);  // input of the upsample stage
  cache.head_pre = conv2d_forward(cache.up_out, st.head, 1, 0);
  cache.density = relu_forward(cache.head_pre);
  cache.valid = true;

  for (std::int64_t n = 0; n < image.n; ++n)
    out.density.push_back(tensor_plane_to_grid(cache.density, n, 0));
  return out;
}

/// Backward through the whole network. Rate-scalar gradients accumulate into
/// st.rate_params; weight gradients into `grads`. In penet mode the signal
/// reaches the image encoder with the decoder frozen, and d_persp_feat holds
/// the perspective gradient at feature resolution.
inline void pfdnet_backward(PfdnetState& st, const PfdnetCache& cache,
                            const std::vector<Grid2>& dL_ddensity,
                            PfdnetGrads& grads) {
  if (!cache.valid) throw UsageError("pfdnet_backward: stale forward cache");
  const PfdnetConfig& cfg = st.config;
  if (static_cast<std::int64_t>(dL_ddensity.size()) != cache.density.n)
    throw ShapeError("pfdnet_backward: batch size mismatch");

  Tensor4 d_density(cache.density.n, 1, cache.density.h, cache.density.w);
  for (std::int64_t n = 0; n < cache.density.n; ++n) {
    if (dL_ddensity[n].h != cache.density.h ||
        dL_ddensity[n].w != cache.density.w)
      throw ShapeError("pfdnet_backward: density gradient shape mismatch");
    std::copy(dL_ddensity[n].data.begin(), dL_ddensity[n].data.end(),
              d_density.plane(n, 0));
  }

  Tensor4 d = relu_backward(cache.head_pre, d_density);
  d = conv2d_backward(cache.up_out, st.head, 1, 0, d, grads.head);
  const Tensor4& up_in = cache.pfc_in.back();
  d = upsample_bilinear_backward(up_in.h, up_in.w, cfg.upsample_factor, d);

  Grid2 d_s_feat(cache.s_feat.h, cache.s_feat.w);
  for (std::int64_t b = static_cast<std::int64_t>(st.pfc.size()) - 1; b >= 0;
       --b) {
    d = relu_backward(cache.pfc_pre[b], d);
    FdconvGrads fg =
        fdconv_backward(cache.pfc_in[b], st.pfc[b], cache.rates[b], d);
    for (std::size_t i = 0; i < fg.d_weights.kernel.size(); ++i)
      grads.pfc[b].kernel[i] += fg.d_weights.kernel[i];
    for (std::size_t i = 0; i < fg.d_weights.bias.size(); ++i)
      grads.pfc[b].bias[i] += fg.d_weights.bias[i];
    Grid2 ds = rate_backward(cache.s_feat, st.rate_params[b], fg.d_rate);
    for (std::int64_t i = 0; i < d_s_feat.numel(); ++i)
      d_s_feat.data[i] += ds.data[i];
    d = std::move(fg.d_input);
  }

  for (std::int64_t s = static_cast<std::int64_t>(st.backbone.size()) - 1;
       s >= 0; --s) {
    const Tensor4& act = cache.bb_act[s];
    d = maxpool2_backward(act.n, act.c, act.h, act.w, cache.bb_argmax[s], d);
    d = relu_backward(cache.bb_pre[s], d);
    const Tensor4& in = s == 0 ? cache.image : cache.bb_pooled[s - 1];
    d = conv2d_backward(in, st.backbone[s], 1, 1, d, grads.backbone[s]);
  }

  if (grads.d_persp_feat.numel() == 0) {
    grads.d_persp_feat = d_s_feat;
  } else {
    for (std::int64_t i = 0; i < d_s_feat.numel(); ++i)
      grads.d_persp_feat.data[i] += d_s_feat.data[i];
  }

  if (cfg.persp_source == PerspSource::kPenet) {
    Grid2 d_full = avgpool_grid_backward(d_s_feat, cache.persp_h, cache.persp_w);
    Tensor4 d_est(1, 1, cache.persp_h, cache.persp_w);
    std::copy(d_full.data.begin(), d_full.data.end(), d_est.plane(0, 0));
    penet_backward(st.penet, cache.penet_cache, d_est, grads.penet,
                   /*freeze_decoder=*/true);
  }
}

/// Predicted count: the integral of the density map.
inline double predict_count(const Grid2& density_pred) {
  for (const float v : density_pred.data)
    if (v < 0.0f)
      throw DomainError("predict_count: density must be nonnegative");
  return reduce(density_pred, Reduce::kSum);
}

}  // namespace pfc
