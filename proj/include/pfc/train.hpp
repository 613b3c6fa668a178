#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pfc/adam.hpp"
#include "pfc/config.hpp"
#include "pfc/density.hpp"
#include "pfc/io.hpp"
#include "pfc/metrics.hpp"
#include "pfc/penet.hpp"
#include "pfc/pfdnet.hpp"

namespace pfc {

// ---------------------------------------------------------------------------
// Scene datasets on disk: scene_NNNN.ppm / .persp.f32m / .heads.csv

inline std::string scene_base(std::int64_t idx) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%04lld", static_cast<long long>(idx));
  return buf;
}

inline void save_scenes(const std::string& dir,
                        const std::vector<SyntheticScene>& scenes) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const std::string base =
        dir + "/" + scene_base(static_cast<std::int64_t>(i));
    write_ppm(base + ".ppm", scenes[i].image);
    write_f32m(base + ".persp.f32m", scenes[i].persp.grid);
    write_annotations_csv(base + ".heads.csv", scenes[i].heads);
  }
}

inline std::vector<SyntheticScene> load_scenes(const std::string& dir) {
  std::vector<std::string> bases;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() > 4 && name.substr(name.size() - 4) == ".ppm")
      bases.push_back(name.substr(0, name.size() - 4));
  }
  std::sort(bases.begin(), bases.end());
  if (bases.empty()) throw UsageError("no scenes (*.ppm) found in " + dir);
  std::vector<SyntheticScene> scenes;
  for (const auto& base : bases) {
    SyntheticScene sc;
    sc.image = read_ppm(dir + "/" + base + ".ppm");
    sc.persp.grid = read_f32m(dir + "/" + base + ".persp.f32m");
    sc.heads = read_annotations_csv(dir + "/" + base + ".heads.csv");
    sc.heads.image_id = base;
    if (sc.persp.grid.h != sc.image.h || sc.persp.grid.w != sc.image.w)
      throw DataError("scene " + base + ": perspective map size mismatch");
    validate_annotations(sc.heads, sc.image.h, sc.image.w);
    scenes.push_back(std::move(sc));
  }
  return scenes;
}

// ---------------------------------------------------------------------------
// Checkpoint packing

inline void checkpoint_add_conv(Checkpoint& ck, const std::string& prefix,
                                const ConvWeights& w) {
  ck.add(prefix + ".kernel",
         {static_cast<std::uint32_t>(w.cout), static_cast<std::uint32_t>(w.cin),
          static_cast<std::uint32_t>(w.k), static_cast<std::uint32_t>(w.k)},
         w.kernel);
  ck.add(prefix + ".bias", {static_cast<std::uint32_t>(w.cout)}, w.bias);
}

inline ConvWeights checkpoint_get_conv(const Checkpoint& ck,
                                       const std::string& prefix) {
  const NamedTensor& k = ck.require(prefix + ".kernel");
  if (k.dims.size() != 4)
    throw DataError("checkpoint: bad kernel rank for " + prefix);
  ConvWeights w(k.dims[0], k.dims[1], k.dims[2]);
  w.kernel = k.values;
  w.bias = ck.require(prefix + ".bias").values;
  if (w.bias.size() != static_cast<std::size_t>(w.cout))
    throw DataError("checkpoint: bad bias size for " + prefix);
  return w;
}

inline std::vector<float> rng_state_floats(const Rng& rng) {
  const auto st = rng.state();
  std::vector<float> out(8);
  std::memcpy(out.data(), st.data(), sizeof(st));
  return out;
}

inline void checkpoint_add_config(Checkpoint& ck, const RunConfig& cfg) {
  const std::string text = cfg.resolved_text();
  std::vector<float> chars(text.size());
  for (std::size_t i = 0; i < text.size(); ++i)
    chars[i] = static_cast<float>(static_cast<unsigned char>(text[i]));
  ck.add("__config__", {static_cast<std::uint32_t>(chars.size())}, chars);
}

inline Checkpoint penet_to_checkpoint(const PENetState& st) {
  Checkpoint ck;
  for (std::size_t l = 0; l < st.encoder_s.size(); ++l)
    checkpoint_add_conv(ck, "enc_s." + std::to_string(l), st.encoder_s[l]);
  for (std::size_t l = 0; l < st.encoder_i.size(); ++l)
    checkpoint_add_conv(ck, "enc_i." + std::to_string(l), st.encoder_i[l]);
  for (std::size_t l = 0; l < st.decoder.size(); ++l)
    checkpoint_add_conv(ck, "dec." + std::to_string(l), st.decoder[l]);
  ck.add_scalar("__phase__", static_cast<float>(static_cast<int>(st.phase)));
  ck.add_scalar("__width_mult__", static_cast<float>(st.config.width_mult));
  return ck;
}

inline PENetState penet_from_checkpoint(const Checkpoint& ck) {
  PENetState st;
  st.config.width_mult = ck.require("__width_mult__").values[0];
  st.phase = static_cast<PENetPhase>(
      static_cast<int>(ck.require("__phase__").values[0]));
  for (int l = 0; l < 6; ++l) {
    st.encoder_s.push_back(
        checkpoint_get_conv(ck, "enc_s." + std::to_string(l)));
    st.encoder_i.push_back(
        checkpoint_get_conv(ck, "enc_i." + std::to_string(l)));
    st.decoder.push_back(checkpoint_get_conv(ck, "dec." + std::to_string(l)));
  }
  return st;
}

inline Checkpoint pfdnet_to_checkpoint(const PfdnetState& st) {
  Checkpoint ck;
  for (std::size_t l = 0; l < st.backbone.size(); ++l)
    checkpoint_add_conv(ck, "backbone." + std::to_string(l), st.backbone[l]);
  for (std::size_t b = 0; b < st.pfc.size(); ++b) {
    checkpoint_add_conv(ck, "pfc." + std::to_string(b), st.pfc[b]);
    const RateParams& p = st.rate_params[b];
    ck.add("pfc." + std::to_string(b) + ".rate", {4},
           {p.alpha, p.beta, p.gamma, p.theta});
  }
  checkpoint_add_conv(ck, "head", st.head);
  if (st.config.persp_source == PerspSource::kPenet) {
    for (std::size_t l = 0; l < st.penet.encoder_i.size(); ++l)
      checkpoint_add_conv(ck, "penet.enc_i." + std::to_string(l),
                          st.penet.encoder_i[l]);
    for (std::size_t l = 0; l < st.penet.decoder.size(); ++l)
      checkpoint_add_conv(ck, "penet.dec." + std::to_string(l),
                          st.penet.decoder[l]);
    ck.add_scalar("penet.__width_mult__",
                  static_cast<float>(st.penet.config.width_mult));
  }
  ck.add_scalar("__n_pfc__", static_cast<float>(st.pfc.size()));
  ck.add_scalar("__persp_source__",
                static_cast<float>(static_cast<int>(st.config.persp_source)));
  return ck;
}

inline PfdnetState pfdnet_from_checkpoint(const Checkpoint& ck) {
  PfdnetState st;
  const int n_pfc = static_cast<int>(ck.require("__n_pfc__").values[0]);
  st.config.persp_source = static_cast<PerspSource>(
      static_cast<int>(ck.require("__persp_source__").values[0]));
  st.config.backbone_channels.clear();
  for (int l = 0; l < 3; ++l) {
    st.backbone.push_back(
        checkpoint_get_conv(ck, "backbone." + std::to_string(l)));
    st.config.backbone_channels.push_back(st.backbone.back().cout);
  }
  st.config.pfc_channels.clear();
  for (int b = 0; b < n_pfc; ++b) {
    st.pfc.push_back(checkpoint_get_conv(ck, "pfc." + std::to_string(b)));
    st.config.pfc_channels.push_back(st.pfc.back().cout);
    const auto& r = ck.require("pfc." + std::to_string(b) + ".rate").values;
    RateParams p;
    p.alpha = r[0];
    p.beta = r[1];
    p.gamma = r[2];
    p.theta = r[3];
    st.rate_params.push_back(p);
  }
  st.config.kernel = st.pfc.front().k;
  st.head = checkpoint_get_conv(ck, "head");
  if (st.config.persp_source == PerspSource::kPenet) {
    st.penet.config.width_mult =
        ck.require("penet.__width_mult__").values[0];
    st.penet.phase = PENetPhase::kPhase3Weak;
    for (int l = 0; l < 6; ++l) {
      st.penet.encoder_i.push_back(
          checkpoint_get_conv(ck, "penet.enc_i." + std::to_string(l)));
      st.penet.decoder.push_back(
          checkpoint_get_conv(ck, "penet.dec." + std::to_string(l)));
    }
    // the perspective encoder is not part of phase 3; keep empty weights of
    // matching shapes so the struct stays well formed
    Rng dummy(0);
    PENetState fresh = PENetState::init(st.penet.config, dummy);
    st.penet.encoder_s = fresh.encoder_s;
    st.config.penet_width_mult = st.penet.config.width_mult;
  }
  return st;
}

// ---------------------------------------------------------------------------
// Directory lock: no two runs may share a checkpoint directory.

class DirLock {
 public:
  explicit DirLock(const std::string& dir) : path_(dir + "/.lock") {
    std::filesystem::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw UsageError("output directory is locked by another run: " + dir);
  }
  ~DirLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      ::unlink(path_.c_str());
    }
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::string path_;
  int fd_ = -1;
};

// ---------------------------------------------------------------------------
// PENet training (phases 1 and 2)

struct PenetTrainResult {
  double final_psnr = 0.0;
  double final_loss = 0.0;
  std::int64_t epochs_run = 0;
  std::string checkpoint_path;
};

namespace detail {

inline Grid2 grid_downsample8(const Grid2& g) {
  return resample_grid(g, g.h / 8, g.w / 8, Resample::kAveragePool);
}

inline Tensor4 grid_to_tensor(const Grid2& g) {
  Tensor4 t(1, 1, g.h, g.w);
  std::copy(g.data.begin(), g.data.end(), t.data.begin());
  return t;
}

}  // namespace detail

/// Train the perspective estimator. Phase 1 reconstructs perspective maps
/// (map encoder + decoder); phase 2 predicts them from images with the
/// decoder transplanted from a phase-1 checkpoint and frozen. Scene inputs
/// are downsampled to 1/8 resolution first.
inline PenetTrainResult train_penet(const std::vector<SyntheticScene>& scenes,
                                    const RunConfig& cfg,
                                    const std::string& out_dir) {
  if (cfg.phase != 1 && cfg.phase != 2)
    throw UsageError("train-penet: phase must be 1 or 2");
  if (scenes.empty()) throw UsageError("train-penet: empty dataset");
  if (scenes[0].image.h % (8 * 64) != 0 || scenes[0].image.w % (8 * 64) != 0)
    throw UsageError(
        "train-penet: scene dims must be divisible by 512 so the 1/8-scale "
        "inputs are divisible by 64");

  DirLock lock(out_dir);
  Rng rng(cfg.seed);

  PENetState st;
  if (cfg.phase == 1) {
    PENetConfig pc;
    pc.width_mult = cfg.width_mult;
    st = PENetState::init(pc, rng);
    st.phase = PENetPhase::kPhase1;
  } else {
    if (cfg.checkpoint.empty())
      throw UsageError("train-penet: phase 2 needs --checkpoint from phase 1");
    st = penet_from_checkpoint(read_checkpoint(cfg.checkpoint));
    if (static_cast<int>(st.phase) < 1)
      throw UsageError("train-penet: bad checkpoint phase");
    st.phase = PENetPhase::kPhase2;
  }
  const bool freeze_decoder = cfg.phase == 2;
  const PENetEncoder enc = cfg.phase == 1 ? PENetEncoder::kPerspective
                                          : PENetEncoder::kImage;

  // 1/8-resolution training pairs
  std::vector<Tensor4> inputs;
  std::vector<Tensor4> targets;
  float peak = 0.0f;
  for (const auto& sc : scenes) {
    Grid2 p8 = detail::grid_downsample8(sc.persp.grid);
    for (float v : p8.data) peak = std::max(peak, v);
    targets.push_back(detail::grid_to_tensor(p8));
    inputs.push_back(cfg.phase == 1 ? detail::grid_to_tensor(p8)
                                    : avgpool2d(sc.image, 8));
  }

  AdamOptimizer opt(static_cast<float>(cfg.lr));
  PENetGrads grads = PENetGrads::like(st);
  const auto optimizer_pass = [&] {
    opt.step([&](auto&& visit) {
      const auto group = [&](std::vector<ConvWeights>& ws,
                             std::vector<ConvWeights>& gs) {
        for (std::size_t l = 0; l < ws.size(); ++l) {
          visit(ws[l].kernel.data(), gs[l].kernel.data(), ws[l].kernel.size());
          visit(ws[l].bias.data(), gs[l].bias.data(), ws[l].bias.size());
        }
      };
      if (cfg.phase == 1) {
        group(st.encoder_s, grads.encoder_s);
        group(st.decoder, grads.decoder);
      } else {
        group(st.encoder_i, grads.encoder_i);
      }
    });
  };

  std::ofstream log(out_dir + "/train_log.csv");
  log << "epoch,loss,psnr\n";

  PenetTrainResult res;
  std::vector<std::size_t> order(scenes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // deterministic shuffle
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      const std::int64_t bsz = static_cast<std::int64_t>(end - start);
      grads.zero();
      for (std::size_t s = start; s < end; ++s) {
        const std::size_t idx = order[s];
        PENetCache cache;
        Tensor4 pred = penet_forward(inputs[idx], enc, st, &cache);
        epoch_loss += loss_s2s(pred, targets[idx], bsz);
        Tensor4 dL = loss_s2s_grad(pred, targets[idx], bsz);
        penet_backward(st, cache, dL, grads, freeze_decoder);
      }
      optimizer_pass();
    }

    // epoch PSNR over the whole set (aggregate MSE against the peak value)
    double mse = 0.0;
    std::int64_t count = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      Tensor4 pred = penet_forward(inputs[i], enc, st);
      for (std::size_t k = 0; k < pred.data.size(); ++k) {
        const double d =
            static_cast<double>(pred.data[k]) - targets[i].data[k];
        mse += d * d;
      }
      count += pred.numel();
    }
    mse /= static_cast<double>(count);
    const double psnr_db =
        mse == 0.0 ? 99.0
                   : std::min(99.0, 10.0 * std::log10(static_cast<double>(peak) *
                                                      peak / mse));
    char row[96];
    std::snprintf(row, sizeof(row), "%lld,%.8g,%.4f\n",
                  static_cast<long long>(epoch), epoch_loss, psnr_db);
    log << row;
    res.final_psnr = psnr_db;
    res.final_loss = epoch_loss;
    res.epochs_run = epoch;
    if (cfg.psnr_stop > 0.0 && psnr_db >= cfg.psnr_stop) break;
  }

  Checkpoint ck = penet_to_checkpoint(st);
  ck.add("__rng_state__", {8}, rng_state_floats(rng));
  checkpoint_add_config(ck, cfg);
  res.checkpoint_path =
      out_dir + "/penet_phase" + std::to_string(cfg.phase) + ".pfdc";
  write_checkpoint(res.checkpoint_path, ck);
  std::ofstream(out_dir + "/config.txt") << cfg.resolved_text();
  return res;
}

// ---------------------------------------------------------------------------
// PFDNet training (phase 3 when the estimator is embedded)

struct PfdnetTrainResult {
  double mae_first = 0.0;
  double mae_final = 0.0;
  double loss_first = 0.0;
  double loss_final = 0.0;
  std::string checkpoint_path;
};

inline PerspSource persp_source_from_name(const std::string& name) {
  if (name == "gt") return PerspSource::kGroundTruth;
  if (name == "penet") return PerspSource::kPenet;
  if (name == "mean") return PerspSource::kMeanAblation;
  throw UsageError("unknown persp source '" + name + "' (gt|penet|mean)");
}

namespace detail {

inline Tensor4 flip_image(const Tensor4& img) {
  Tensor4 out = img;
  for (std::int64_t n = 0; n < img.n; ++n)
    for (std::int64_t c = 0; c < img.c; ++c)
      for (std::int64_t i = 0; i < img.h; ++i)
        for (std::int64_t j = 0; j < img.w; ++j)
          out.at(n, c, i, j) = img.at(n, c, i, img.w - 1 - j);
  return out;
}

inline Grid2 flip_grid(const Grid2& g) {
  Grid2 out(g.h, g.w);
  for (std::int64_t i = 0; i < g.h; ++i)
    for (std::int64_t j = 0; j < g.w; ++j)
      out.at(i, j) = g.at(i, g.w - 1 - j);
  return out;
}

}  // namespace detail

/// Train the counting network on synthetic scenes. Ground-truth and
/// mean-ablation modes read perspective from the dataset; penet mode embeds
/// a pre-trained estimator (frozen decoder) and, when lambda_persp > 0, adds
/// the supervised image-to-map loss on top of the density objective.
/// Horizontal flips are applied with probability 1/2, consistently across
/// image, perspective map, and density target.
inline PfdnetTrainResult train_pfdnet(const std::vector<SyntheticScene>& scenes,
                                      const RunConfig& cfg,
                                      const std::string& out_dir) {
  if (scenes.empty()) throw UsageError("train: empty dataset");
  DirLock lock(out_dir);
  Rng rng(cfg.seed);

  PfdnetConfig net_cfg;
  net_cfg.persp_source = persp_source_from_name(cfg.persp_source);

  PfdnetState st;
  if (net_cfg.persp_source == PerspSource::kPenet) {
    if (cfg.penet_checkpoint.empty())
      throw UsageError("train: penet mode needs --penet-checkpoint");
    PENetState penet = penet_from_checkpoint(read_checkpoint(cfg.penet_checkpoint));
    if (static_cast<int>(penet.phase) < 2)
      throw UsageError("train: penet checkpoint must come from phase 2");
    net_cfg.penet_width_mult = penet.config.width_mult;
    st = PfdnetState::init(net_cfg, rng);
    penet.phase = cfg.lambda_persp > 0.0 ? PENetPhase::kPhase3Supervised
                                         : PENetPhase::kPhase3Weak;
    st.penet = std::move(penet);
  } else {
    st = PfdnetState::init(net_cfg, rng);
  }

  // density targets at half the input resolution, count preserved
  std::vector<Grid2> targets;
  std::vector<double> gt_counts;
  for (const auto& sc : scenes) {
    DensityMap d = make_density(sc.heads, sc.image.h, sc.image.w);
    targets.push_back(
        resample_grid(d.grid, sc.image.h / 2, sc.image.w / 2,
                      Resample::kSumPool));
    gt_counts.push_back(static_cast<double>(sc.heads.points.size()));
  }

  AdamOptimizer opt(static_cast<float>(cfg.lr));
  PfdnetGrads grads = PfdnetGrads::like(st);

  const auto optimizer_pass = [&] {
    opt.step([&](auto&& visit) {
      for (std::size_t l = 0; l < st.backbone.size(); ++l) {
        visit(st.backbone[l].kernel.data(), grads.backbone[l].kernel.data(),
              st.backbone[l].kernel.size());
        visit(st.backbone[l].bias.data(), grads.backbone[l].bias.data(),
              st.backbone[l].bias.size());
      }
      for (std::size_t b = 0; b < st.pfc.size(); ++b) {
        visit(st.pfc[b].kernel.data(), grads.pfc[b].kernel.data(),
              st.pfc[b].kernel.size());
        visit(st.pfc[b].bias.data(), grads.pfc[b].bias.data(),
              st.pfc[b].bias.size());
        RateParams& p = st.rate_params[b];
        visit(&p.alpha, &p.d_alpha, 1);
        visit(&p.beta, &p.d_beta, 1);
        visit(&p.gamma, &p.d_gamma, 1);
        visit(&p.theta, &p.d_theta, 1);
      }
      visit(st.head.kernel.data(), grads.head.kernel.data(),
            st.head.kernel.size());
      visit(st.head.bias.data(), grads.head.bias.data(), st.head.bias.size());
      if (st.config.persp_source == PerspSource::kPenet) {
        for (std::size_t l = 0; l < st.penet.encoder_i.size(); ++l) {
          visit(st.penet.encoder_i[l].kernel.data(),
                grads.penet.encoder_i[l].kernel.data(),
                st.penet.encoder_i[l].kernel.size());
          visit(st.penet.encoder_i[l].bias.data(),
                grads.penet.encoder_i[l].bias.data(),
                st.penet.encoder_i[l].bias.size());
        }
      }
    });
  };

  const auto full_set_mae = [&]() -> double {
    std::vector<double> preds;
    PfdnetCache cache;
    for (const auto& sc : scenes) {
      const PerspectiveMap* persp =
          st.config.persp_source == PerspSource::kPenet ? nullptr : &sc.persp;
      PfdnetOutput out = pfdnet_forward(sc.image, persp, st, cache);
      preds.push_back(predict_count(out.density[0]));
    }
    return mae_rmse(preds, gt_counts).first;
  };

  std::ofstream log(out_dir + "/train_log.csv");
  log << "step,loss,mae\n";

  PfdnetTrainResult res;
  for (std::int64_t it = 1; it <= cfg.iters; ++it) {
    grads.zero();
    st.zero_rate_grads();
    double batch_loss = 0.0;
    double batch_abs_err = 0.0;
    for (std::int64_t b = 0; b < cfg.batch; ++b) {
      const std::size_t idx = static_cast<std::size_t>(rng.uniform_int(
          0, static_cast<std::int64_t>(scenes.size()) - 1));
      const bool flip = rng.next_float() < 0.5f;
      const SyntheticScene& sc = scenes[idx];
      Tensor4 image = flip ? detail::flip_image(sc.image) : sc.image;
      PerspectiveMap persp{flip ? detail::flip_grid(sc.persp.grid)
                                : sc.persp.grid};
      Grid2 target = flip ? detail::flip_grid(targets[idx]) : targets[idx];

      PfdnetCache cache;
      const PerspectiveMap* persp_arg =
          st.config.persp_source == PerspSource::kPenet ? nullptr : &persp;
      PfdnetOutput out = pfdnet_forward(image, persp_arg, st, cache);
      const Grid2& pred = out.density[0];

      double term = 0.0;
      Grid2 dL(pred.h, pred.w);
      for (std::int64_t i = 0; i < pred.numel(); ++i) {
        const double diff =
            static_cast<double>(pred.data[i]) - target.data[i];
        term += diff * diff;
        dL.data[i] =
            static_cast<float>(diff / static_cast<double>(cfg.batch));
      }
      batch_loss += term / (2.0 * static_cast<double>(cfg.batch));
      batch_abs_err +=
          std::abs(predict_count(pred) - gt_counts[idx]);

      pfdnet_backward(st, cache, {dL}, grads);

      // supervised phase 3: image-to-map loss on the estimator output
      if (st.config.persp_source == PerspSource::kPenet &&
          cfg.lambda_persp > 0.0) {
        const Tensor4& est = cache.penet_cache.dec_act.back();
        Tensor4 persp_t = detail::grid_to_tensor(persp.grid);
        batch_loss += cfg.lambda_persp *
                      loss_s2s(est, persp_t, cfg.batch);
        Tensor4 dI2s = loss_s2s_grad(est, persp_t, cfg.batch);
        for (auto& v : dI2s.data) v *= static_cast<float>(cfg.lambda_persp);
        penet_backward(st.penet, cache.penet_cache, dI2s, grads.penet,
                       /*freeze_decoder=*/true);
      }
    }
    optimizer_pass();

    char row[96];
    std::snprintf(row, sizeof(row), "%lld,%.8g,%.6f\n",
                  static_cast<long long>(it), batch_loss,
                  batch_abs_err / static_cast<double>(cfg.batch));
    log << row;
    if (it == 1) {
      res.loss_first = batch_loss;
      res.mae_first = full_set_mae();
    }
    if (it == cfg.iters) res.loss_final = batch_loss;
  }
  res.mae_final = full_set_mae();

  Checkpoint ck = pfdnet_to_checkpoint(st);
  ck.add("__rng_state__", {8}, rng_state_floats(rng));
  checkpoint_add_config(ck, cfg);
  res.checkpoint_path = out_dir + "/pfdnet.pfdc";
  write_checkpoint(res.checkpoint_path, ck);
  std::ofstream(out_dir + "/config.txt") << cfg.resolved_text();
  return res;
}

// ---------------------------------------------------------------------------
// Directory evaluation: paired density maps by file name.

struct EvalResult {
  double mae = 0.0, rmse = 0.0;
  double game_mean[4] = {0.0, 0.0, 0.0, 0.0};
  std::int64_t pairs = 0;
};

inline EvalResult eval_density_dirs(const std::string& pred_dir,
                                    const std::string& gt_dir) {
  const auto list_maps = [](const std::string& dir) {
    std::vector<std::string> names;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      const std::string name = e.path().filename().string();
      if (name.size() > 5 && name.substr(name.size() - 5) == ".f32m")
        names.push_back(name);
    }
    std::sort(names.begin(), names.end());
    return names;
  };
  const auto pred_names = list_maps(pred_dir);
  const auto gt_names = list_maps(gt_dir);
  if (pred_names.empty() || pred_names != gt_names)
    throw UsageError("eval: prediction and ground-truth maps do not pair up");

  std::vector<double> pred_counts, gt_counts;
  EvalResult res;
  for (const auto& name : pred_names) {
    Grid2 p = read_f32m(pred_dir + "/" + name);
    Grid2 g = read_f32m(gt_dir + "/" + name);
    pred_counts.push_back(reduce(p, Reduce::kSum));
    gt_counts.push_back(reduce(g, Reduce::kSum));
    for (int level = 0; level <= 3; ++level)
      res.game_mean[level] += game(p, g, level);
  }
  res.pairs = static_cast<std::int64_t>(pred_names.size());
  for (double& v : res.game_mean) v /= static_cast<double>(res.pairs);
  const auto [mae, rmse] = mae_rmse(pred_counts, gt_counts);
  res.mae = mae;
  res.rmse = rmse;
  return res;
}

}  // namespace pfc
