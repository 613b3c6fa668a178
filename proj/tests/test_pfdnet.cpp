#include "pfc/pfdnet.hpp"

#include <gtest/gtest.h>

#include <algorithm>

#include "pfc/density.hpp"
#include "testing_util.hpp"

using namespace pfc;
using pfctest::central_diff;
using pfctest::random_tensor;

namespace {

PfdnetConfig tiny_config(PerspSource source = PerspSource::kGroundTruth) {
  PfdnetConfig cfg;
  cfg.backbone_channels = {4, 4, 4};
  cfg.pfc_channels = {4, 4, 4, 4, 4, 4};
  cfg.persp_source = source;
  cfg.penet_width_mult = 1.0 / 16.0;
  return cfg;
}

PerspectiveMap row_linear_persp(std::int64_t h, std::int64_t w, float s_top,
                                float s_bot) {
  PerspectiveMap m{Grid2(h, w)};
  for (std::int64_t i = 0; i < h; ++i) {
    const float s =
        s_top + (s_bot - s_top) * static_cast<float>(i) / static_cast<float>(h - 1);
    for (std::int64_t j = 0; j < w; ++j) m.grid.at(i, j) = s;
  }
  return m;
}

void scale_weights(PfdnetState& st, float k) {
  for (auto& w : st.backbone)
    for (auto& v : w.kernel) v *= k;
  for (auto& w : st.pfc)
    for (auto& v : w.kernel) v *= k;
  for (auto& v : st.head.kernel) v *= k;
}

double density_sum(const std::vector<Grid2>& density) {
  double acc = 0.0;
  for (const auto& g : density) acc += reduce(g, Reduce::kSum);
  return acc;
}

}  // namespace

TEST(Pfdnet, ZeroImageZeroHeadGivesZeroDensity) {
  Rng rng(1);
  PfdnetState st = PfdnetState::init(tiny_config(), rng);
  std::fill(st.head.kernel.begin(), st.head.kernel.end(), 0.0f);
  Tensor4 image = Tensor4::zeros(1, 3, 32, 32);
  PerspectiveMap persp = row_linear_persp(32, 32, 4.0f, 30.0f);
  PfdnetCache cache;
  PfdnetOutput out = pfdnet_forward(image, &persp, st, cache);
  ASSERT_EQ(out.density.size(), 1u);
  for (float v : out.density[0].data) ASSERT_EQ(v, 0.0f);
  EXPECT_EQ(predict_count(out.density[0]), 0.0);
}

TEST(Pfdnet, HalfResolutionContractWithDefaultConfig) {
  Rng rng(2);
  PfdnetState st = PfdnetState::init(PfdnetConfig{}, rng);
  Tensor4 image = random_tensor(1, 3, 256, 256, rng, 0.0f, 1.0f);
  PerspectiveMap persp = row_linear_persp(256, 256, 4.0f, 40.0f);
  PfdnetCache cache;
  PfdnetOutput out = pfdnet_forward(image, &persp, st, cache);
  ASSERT_EQ(out.density.size(), 1u);
  EXPECT_EQ(out.density[0].h, 128);
  EXPECT_EQ(out.density[0].w, 128);
  ASSERT_EQ(out.rate_maps.size(), 6u);
  for (const auto& r : out.rate_maps) {
    EXPECT_EQ(r.h, 32);
    EXPECT_EQ(r.w, 32);
  }
  for (float v : out.density[0].data) ASSERT_GE(v, 0.0f);
}

TEST(Pfdnet, MeanAblationGivesConstantRateMaps) {
  Rng rng(3);
  PfdnetState st =
      PfdnetState::init(tiny_config(PerspSource::kMeanAblation), rng);
  Tensor4 image = random_tensor(1, 3, 64, 64, rng, 0.0f, 1.0f);
  PerspectiveMap persp = row_linear_persp(64, 64, 3.0f, 45.0f);
  PfdnetCache cache;
  PfdnetOutput out = pfdnet_forward(image, &persp, st, cache);
  for (const auto& r : out.rate_maps) {
    const float first = r.data[0];
    for (float v : r.data) ASSERT_EQ(v, first);
  }
}

TEST(Pfdnet, MeanAblationInvariantToPerspectivePermutation) {
  Rng rng(4);
  PfdnetState st =
      PfdnetState::init(tiny_config(PerspSource::kMeanAblation), rng);
  Tensor4 image = random_tensor(1, 3, 64, 64, rng, 0.0f, 1.0f);
  PerspectiveMap persp = row_linear_persp(64, 64, 3.0f, 45.0f);

  PfdnetCache cache;
  PfdnetOutput a = pfdnet_forward(image, &persp, st, cache);

  // shuffle the perspective pixels; only the mean should matter
  PerspectiveMap shuffled = persp;
  for (std::size_t i = shuffled.grid.data.size(); i > 1; --i) {
    const std::size_t j =
        static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(shuffled.grid.data[i - 1], shuffled.grid.data[j]);
  }
  PfdnetOutput b = pfdnet_forward(image, &shuffled, st, cache);
  for (std::size_t k = 0; k < a.rate_maps.size(); ++k)
    ASSERT_EQ(a.rate_maps[k].data, b.rate_maps[k].data);
}

TEST(Pfdnet, RateMapsMatchPerspectivePipeline) {
  Rng rng(5);
  PfdnetState st = PfdnetState::init(tiny_config(), rng);
  // make the per-block params distinct
  for (std::size_t b = 0; b < st.rate_params.size(); ++b) {
    st.rate_params[b].alpha = 0.5f + 0.2f * static_cast<float>(b);
    st.rate_params[b].beta = 10.0f + static_cast<float>(b);
    st.rate_params[b].gamma = 1.0f + 0.1f * static_cast<float>(b);
    st.rate_params[b].theta = 0.5f;
  }
  Tensor4 image = random_tensor(1, 3, 64, 48, rng, 0.0f, 1.0f);
  PerspectiveMap persp = row_linear_persp(64, 48, 5.0f, 35.0f);
  PfdnetCache cache;
  PfdnetOutput out = pfdnet_forward(image, &persp, st, cache);

  Grid2 s_feat = resample_grid(persp.grid, 8, 6, Resample::kAveragePool);
  for (std::size_t b = 0; b < st.rate_params.size(); ++b) {
    Grid2 want = rate_map(normalize_zeta(s_feat, st.rate_params[b]),
                          st.rate_params[b]);
    ASSERT_EQ(want.h, out.rate_maps[b].h);
    for (std::int64_t i = 0; i < want.numel(); ++i)
      ASSERT_NEAR(out.rate_maps[b].data[i], want.data[i], 1e-6f);
  }
}

TEST(Pfdnet, MissingPerspectiveRejected) {
  Rng rng(6);
  PfdnetState st = PfdnetState::init(tiny_config(), rng);
  Tensor4 image = random_tensor(1, 3, 32, 32, rng);
  PfdnetCache cache;
  EXPECT_THROW(pfdnet_forward(image, nullptr, st, cache), UsageError);
}

TEST(Pfdnet, StaleCacheRejected) {
  Rng rng(7);
  PfdnetState st = PfdnetState::init(tiny_config(), rng);
  PfdnetCache cache;  // never filled by a forward pass
  PfdnetGrads grads = PfdnetGrads::like(st);
  EXPECT_THROW(pfdnet_backward(st, cache, {}, grads), UsageError);
}

TEST(Pfdnet, ZeroUpstreamGivesZeroGrads) {
  Rng rng(8);
  PfdnetState st = PfdnetState::init(tiny_config(), rng);
  Tensor4 image = random_tensor(1, 3, 32, 32, rng, 0.0f, 1.0f);
  PerspectiveMap persp = row_linear_persp(32, 32, 4.0f, 30.0f);
  PfdnetCache cache;
  PfdnetOutput out = pfdnet_forward(image, &persp, st, cache);

  std::vector<Grid2> dzero{Grid2(out.density[0].h, out.density[0].w, 0.0f)};
  PfdnetGrads grads = PfdnetGrads::like(st);
  st.zero_rate_grads();
  pfdnet_backward(st, cache, dzero, grads);
  for (const auto& w : grads.backbone)
    for (float v : w.kernel) ASSERT_EQ(v, 0.0f);
  for (const auto& w : grads.pfc)
    for (float v : w.kernel) ASSERT_EQ(v, 0.0f);
  for (float v : grads.head.kernel) ASSERT_EQ(v, 0.0f);
  for (const auto& p : st.rate_params) {
    ASSERT_EQ(p.d_alpha, 0.0f);
    ASSERT_EQ(p.d_theta, 0.0f);
  }
}

TEST(Pfdnet, GradientsMatchFiniteDifferences) {
  Rng rng(9);
  PfdnetConfig cfg = tiny_config();
  PfdnetState st = PfdnetState::init(cfg, rng);
  // smooth-region fixture: positive weights and inputs keep activations off
  // the ReLU / max-pool kinks where finite differences stop being a referee
  for (auto& w : st.backbone) pfctest::positive_rescale(w, rng);
  for (auto& w : st.pfc) pfctest::positive_rescale(w, rng);
  pfctest::positive_rescale(st.head, rng);
  // keep every rate in (1.05, 1.35): away from the bilinear integer lattice
  // and from the clamp boundary
  for (auto& p : st.rate_params) {
    p.alpha = 0.4f;
    p.beta = 18.0f;
    p.gamma = 0.3f;
    p.theta = 1.05f;
  }
  Tensor4 image = random_tensor(1, 3, 32, 32, rng, 0.1f, 1.0f);
  PerspectiveMap persp = row_linear_persp(32, 32, 6.0f, 40.0f);

  PfdnetCache cache;
  PfdnetOutput out = pfdnet_forward(image, &persp, st, cache);

  // L = total predicted density
  std::vector<Grid2> dL{Grid2(out.density[0].h, out.density[0].w, 1.0f)};
  PfdnetGrads grads = PfdnetGrads::like(st);
  st.zero_rate_grads();
  pfdnet_backward(st, cache, dL, grads);

  PfdnetCache scratch;
  const auto loss = [&] {
    return density_sum(pfdnet_forward(image, &persp, st, scratch).density);
  };

  const double step = 1e-3;
  Rng pick(10);
  std::vector<double> analytic, fd;
  const auto sample = [&](std::vector<float>& params,
                          const std::vector<float>& grad_vec, int count) {
    for (int s = 0; s < count; ++s) {
      const std::size_t i = static_cast<std::size_t>(pick.uniform_int(
          0, static_cast<std::int64_t>(params.size()) - 1));
      analytic.push_back(grad_vec[i]);
      fd.push_back(central_diff(&params[i], step, loss));
    }
  };
  for (std::size_t l = 0; l < st.backbone.size(); ++l) {
    sample(st.backbone[l].kernel, grads.backbone[l].kernel, 5);
    sample(st.backbone[l].bias, grads.backbone[l].bias, 2);
  }
  for (std::size_t b = 0; b < st.pfc.size(); ++b) {
    sample(st.pfc[b].kernel, grads.pfc[b].kernel, 5);
    sample(st.pfc[b].bias, grads.pfc[b].bias, 1);
  }
  sample(st.head.kernel, grads.head.kernel, 4);
  sample(st.head.bias, grads.head.bias, 1);
  for (auto& p : st.rate_params) {
    analytic.push_back(p.d_alpha);
    fd.push_back(central_diff(&p.alpha, step, loss));
    analytic.push_back(p.d_beta);
    fd.push_back(central_diff(&p.beta, step, loss));
    analytic.push_back(p.d_gamma);
    fd.push_back(central_diff(&p.gamma, step, loss));
    analytic.push_back(p.d_theta);
    fd.push_back(central_diff(&p.theta, step, loss));
  }

  double scale = 1e-6;
  for (double g : analytic) scale = std::max(scale, std::abs(g));
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom =
        std::max({std::abs(analytic[i]), std::abs(fd[i]), 1e-3 * scale});
    ASSERT_LT(std::abs(analytic[i] - fd[i]) / denom, 3e-2)
        << "param " << i << " analytic " << analytic[i] << " fd " << fd[i];
  }
}

TEST(Pfdnet, PenetModeFreezesDecoderAndReachesImageEncoder) {
  Rng rng(11);
  PfdnetState st = PfdnetState::init(tiny_config(PerspSource::kPenet), rng);
  scale_weights(st, 2.0f);
  // give the embedded estimator healthy activations so its output ReLU is
  // alive and gradient actually flows through the rate pipeline
  for (auto& w : st.penet.encoder_i) pfctest::he_rescale(w, rng);
  for (auto& w : st.penet.decoder) pfctest::he_rescale(w, rng);
  st.penet.decoder.back().bias[0] = 0.3f;
  // positive head weights keep the density ReLU alive wherever features are
  std::fill(st.head.kernel.begin(), st.head.kernel.end(), 0.5f);
  Tensor4 image = random_tensor(1, 3, 64, 64, rng, 0.1f, 1.0f);

  PfdnetCache cache;
  PfdnetOutput out = pfdnet_forward(image, nullptr, st, cache);
  ASSERT_EQ(out.density.size(), 1u);

  std::vector<Grid2> dL{Grid2(out.density[0].h, out.density[0].w, 1.0f)};
  PfdnetGrads grads = PfdnetGrads::like(st);
  st.zero_rate_grads();
  pfdnet_backward(st, cache, dL, grads);

  for (const auto& w : grads.penet.decoder) {
    for (float v : w.kernel) ASSERT_EQ(v, 0.0f);
    for (float v : w.bias) ASSERT_EQ(v, 0.0f);
  }
  double img_norm = 0.0;
  for (const auto& w : grads.penet.encoder_i)
    for (float v : w.kernel) img_norm += std::abs(v);
  EXPECT_GT(img_norm, 0.0);
}

TEST(Pfdnet, SingleStepDecreasesLoss) {
  Rng rng(12);
  PfdnetState st = PfdnetState::init(tiny_config(), rng);
  scale_weights(st, 2.0f);
  Tensor4 image = random_tensor(1, 3, 32, 32, rng, 0.1f, 1.0f);
  PerspectiveMap persp = row_linear_persp(32, 32, 5.0f, 30.0f);
  Grid2 target(16, 16, 0.0f);
  target.at(8, 8) = 1.0f;
  target.at(3, 12) = 1.0f;

  PfdnetCache cache;
  PfdnetOutput out = pfdnet_forward(image, &persp, st, cache);
  const auto loss_of = [&](const Grid2& pred) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
      const double d = static_cast<double>(pred.data[i]) - target.data[i];
      acc += d * d;
    }
    return acc / 2.0;
  };
  const double loss0 = loss_of(out.density[0]);

  Grid2 dL(16, 16);
  for (std::int64_t i = 0; i < dL.numel(); ++i)
    dL.data[i] = out.density[0].data[i] - target.data[i];
  PfdnetGrads grads = PfdnetGrads::like(st);
  st.zero_rate_grads();
  pfdnet_backward(st, cache, {dL}, grads);

  // plain gradient-descent line search: some small step must reduce the loss
  bool improved = false;
  for (double lr : {1e-2, 1e-3, 1e-4, 1e-5, 1e-6}) {
    PfdnetState trial = st;
    const auto apply = [&](std::vector<float>& p, const std::vector<float>& g) {
      for (std::size_t i = 0; i < p.size(); ++i)
        p[i] -= static_cast<float>(lr) * g[i];
    };
    for (std::size_t l = 0; l < trial.backbone.size(); ++l) {
      apply(trial.backbone[l].kernel, grads.backbone[l].kernel);
      apply(trial.backbone[l].bias, grads.backbone[l].bias);
    }
    for (std::size_t b = 0; b < trial.pfc.size(); ++b) {
      apply(trial.pfc[b].kernel, grads.pfc[b].kernel);
      apply(trial.pfc[b].bias, grads.pfc[b].bias);
      trial.rate_params[b].alpha -= static_cast<float>(lr) * st.rate_params[b].d_alpha;
      trial.rate_params[b].beta -= static_cast<float>(lr) * st.rate_params[b].d_beta;
      trial.rate_params[b].gamma -= static_cast<float>(lr) * st.rate_params[b].d_gamma;
      trial.rate_params[b].theta -= static_cast<float>(lr) * st.rate_params[b].d_theta;
    }
    apply(trial.head.kernel, grads.head.kernel);
    apply(trial.head.bias, grads.head.bias);

    PfdnetCache c2;
    PfdnetOutput out2 = pfdnet_forward(image, &persp, trial, c2);
    if (loss_of(out2.density[0]) < loss0) {
      improved = true;
      break;
    }
  }
  EXPECT_TRUE(improved);
}

TEST(PredictCount, SumsAndValidates) {
  Grid2 d(10, 10, 0.0f);
  EXPECT_EQ(predict_count(d), 0.0);
  Grid2 u(100, 100, 0.01f);
  EXPECT_NEAR(predict_count(u), 100.0, 1e-2);
  Grid2 bad(4, 4, 0.5f);
  bad.at(1, 1) = -0.1f;
  EXPECT_THROW(predict_count(bad), DomainError);
}

TEST(PredictCount, DensityPipelineConservesCount) {
  // seven heads stamped at full resolution, predicted "identity" pipeline:
  // the density target sum-pooled to half resolution keeps the count
  HeadAnnotations heads;
  for (int i = 0; i < 7; ++i)
    heads.points.push_back({8.0f + 6.0f * static_cast<float>(i), 30.0f});
  DensityMap d = make_density(heads, 64, 64);
  Grid2 half = resample_grid(d.grid, 32, 32, Resample::kSumPool);
  EXPECT_NEAR(reduce(half, Reduce::kSum), 7.0, 1e-3);
}
