// pfc: perspective-guided fractional-dilation convolution toolkit CLI.
//
// Exit codes: 0 success, 2 usage, 3 data/format, 4 numerical failure.

#include <CLI11.hpp>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "pfc/bench.hpp"
#include "pfc/config.hpp"
#include "pfc/gradcheck.hpp"
#include "pfc/io.hpp"
#include "pfc/parallel.hpp"
#include "pfc/train.hpp"

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::pair<std::int64_t, std::int64_t> parse_shape_hw(const std::string& s) {
  const auto parts = split(s, 'x');
  if (parts.size() != 2)
    throw pfc::UsageError("expected HxW shape, got '" + s + "'");
  return {std::stoll(parts[0]), std::stoll(parts[1])};
}

/// Binds CLI flags to RunConfig keys; flags override the config file.
struct FlagBinder {
  CLI::App* cmd;
  pfc::RunConfig* cfg;
  std::string config_path;
  std::deque<std::string> storage;
  std::vector<std::pair<CLI::Option*, std::pair<std::string, std::string*>>>
      binds;

  FlagBinder(CLI::App* c, pfc::RunConfig* r) : cmd(c), cfg(r) {
    cmd->add_option("--config", config_path,
                    "key=value config file (flags override it)");
  }
  void bind(const std::string& flag, const std::string& key,
            const std::string& desc) {
    storage.emplace_back();
    auto* opt = cmd->add_option(flag, storage.back(), desc);
    binds.push_back({opt, {key, &storage.back()}});
  }
  void apply(const std::string& command) {
    if (!config_path.empty()) cfg->load_file(config_path);
    cfg->command = command;
    for (auto& [opt, kv] : binds)
      if (opt->count() > 0) cfg->set(kv.first, *kv.second);
  }
};

void write_config_beside(const std::string& out_path,
                         const pfc::RunConfig& cfg) {
  std::ofstream(out_path) << cfg.resolved_text();
}

int run(int argc, char** argv) {
  CLI::App app{"perspective-guided fractional-dilation convolution toolkit"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads,
                 "worker threads for forward kernels (results do not depend "
                 "on this)");

  pfc::RunConfig cfg;

  // ---- gradcheck
  auto* c_gradcheck =
      app.add_subcommand("gradcheck", "finite-difference gradient suites");
  FlagBinder b_gradcheck(c_gradcheck, &cfg);
  b_gradcheck.bind("--seed", "seed", "RNG seed");

  // ---- bench
  auto* c_bench = app.add_subcommand("bench", "operator micro-benchmarks");
  FlagBinder b_bench(c_bench, &cfg);
  b_bench.bind("--seed", "seed", "RNG seed");
  b_bench.bind("--repeats", "bench_repeats", "timed repetitions (>= 5)");
  std::string bench_op_name = "fdconv";
  std::string bench_shape = "1,256,96,128";
  std::string bench_rates = "1";
  std::string bench_sigmas = "0.75";
  std::string bench_kernels = "3";
  std::string bench_out;
  c_bench->add_option("--op", bench_op_name, "fdconv | dilated_ref | pgc");
  c_bench->add_option("--shape", bench_shape, "n,c,h,w");
  c_bench->add_option("--rates", bench_rates, "comma list of dilation rates");
  c_bench->add_option("--sigmas", bench_sigmas, "comma list of pgc sigmas");
  c_bench->add_option("--kernel-sizes", bench_kernels,
                      "comma list of odd kernel sizes");
  c_bench->add_option("--out", bench_out, "also write the CSV here");

  // ---- make-density
  auto* c_density =
      app.add_subcommand("make-density", "head annotations -> density map");
  FlagBinder b_density(c_density, &cfg);
  std::string density_heads, density_shape = "64x64", density_out;
  c_density->add_option("--heads", density_heads, "annotation CSV (x,y)")
      ->required();
  c_density->add_option("--shape", density_shape, "HxW of the density map");
  c_density->add_option("--out", density_out, "output .f32m path")->required();

  // ---- synth
  auto* c_synth =
      app.add_subcommand("synth", "generate a synthetic scene dataset");
  FlagBinder b_synth(c_synth, &cfg);
  b_synth.bind("--seed", "seed", "RNG seed");
  b_synth.bind("--scenes", "scenes", "number of scenes");
  std::string synth_shape, synth_heads;
  c_synth->add_option("--shape", synth_shape, "HxW image size");
  c_synth->add_option("--heads", synth_heads, "min,max heads per scene");
  b_synth.bind("--out", "out_dir", "output dataset directory");

  // ---- fit-persp
  auto* c_fit = app.add_subcommand(
      "fit-persp", "fit a row-linear perspective map from labeled heights");
  std::string fit_heights, fit_shape = "128x128", fit_out;
  double fit_h_person = 1.75;
  c_fit->add_option("--heights", fit_heights, "labeled-heights CSV (y_h,h_px)")
      ->required();
  c_fit->add_option("--shape", fit_shape, "HxW of the output map");
  c_fit->add_option("--h-person", fit_h_person, "person height in meters");
  c_fit->add_option("--out", fit_out, "output .f32m path")->required();

  // ---- train-penet
  auto* c_penet = app.add_subcommand(
      "train-penet", "train the perspective estimator (phase 1 or 2)");
  FlagBinder b_penet(c_penet, &cfg);
  b_penet.bind("--seed", "seed", "RNG seed");
  b_penet.bind("--phase", "phase", "1 (map->map) or 2 (image->map)");
  b_penet.bind("--data", "data_dir", "scene dataset directory");
  b_penet.bind("--out", "out_dir", "output directory");
  b_penet.bind("--epochs", "epochs", "epoch budget");
  b_penet.bind("--batch", "batch", "batch size");
  b_penet.bind("--width-mult", "width_mult", "channel width multiplier");
  b_penet.bind("--lr", "lr", "Adam learning rate");
  b_penet.bind("--psnr-stop", "psnr_stop", "stop early at this PSNR (0=off)");
  b_penet.bind("--checkpoint", "checkpoint",
               "phase-1 checkpoint (required for phase 2)");

  // ---- train
  auto* c_train =
      app.add_subcommand("train", "train the counting network on scenes");
  FlagBinder b_train(c_train, &cfg);
  b_train.bind("--seed", "seed", "RNG seed");
  b_train.bind("--data", "data_dir", "scene dataset directory");
  b_train.bind("--out", "out_dir", "output directory");
  b_train.bind("--iters", "iters", "training iterations");
  b_train.bind("--batch", "batch", "batch size");
  b_train.bind("--lr", "lr", "Adam learning rate");
  b_train.bind("--persp-source", "persp_source", "gt | penet | mean");
  b_train.bind("--lambda-persp", "lambda_persp",
               "weight of the supervised perspective loss (penet mode)");
  b_train.bind("--penet-checkpoint", "penet_checkpoint",
               "phase-2 estimator checkpoint (penet mode)");

  // ---- eval
  auto* c_eval = app.add_subcommand(
      "eval", "compare density-map directories (MAE, RMSE, GAME 0..3)");
  std::string eval_pred, eval_gt;
  c_eval->add_option("--pred", eval_pred, "predicted .f32m directory")
      ->required();
  c_eval->add_option("--gt", eval_gt, "ground-truth .f32m directory")
      ->required();

  // ---- predict
  auto* c_predict = app.add_subcommand(
      "predict", "run a trained counting network on one image");
  std::string pr_checkpoint, pr_image, pr_persp, pr_out;
  c_predict->add_option("--checkpoint", pr_checkpoint, "pfdnet checkpoint")
      ->required();
  c_predict->add_option("--image", pr_image, "input PPM image")->required();
  c_predict->add_option("--persp", pr_persp,
                        "perspective .f32m (gt / mean modes)");
  c_predict->add_option("--out", pr_out, "output density .f32m");

  CLI11_PARSE(app, argc, argv);
  pfc::set_num_threads(threads);

  if (c_gradcheck->parsed()) {
    b_gradcheck.apply("gradcheck");
    const pfc::GradcheckReport rep = pfc::run_gradcheck(cfg.seed);
    std::printf("gradcheck fdconv       max_rel %.3e (tol 1e-2)\n", rep.fdconv);
    std::printf("gradcheck perspective  max_rel %.3e (tol 1e-2)\n",
                rep.perspective);
    std::printf("gradcheck penet        max_rel %.3e (tol 3e-2)\n", rep.penet);
    std::printf("gradcheck pfdnet       max_rel %.3e (tol 3e-2)\n", rep.pfdnet);
    std::printf("RESULT command=gradcheck pass=%d\n", rep.pass ? 1 : 0);
    return rep.pass ? 0 : 4;
  }

  if (c_bench->parsed()) {
    b_bench.apply("bench");
    const auto dims = split(bench_shape, ',');
    if (dims.size() != 4) throw pfc::UsageError("bench: --shape needs n,c,h,w");
    const std::int64_t n = std::stoll(dims[0]), c = std::stoll(dims[1]),
                       h = std::stoll(dims[2]), w = std::stoll(dims[3]);
    const pfc::BenchOp op = pfc::bench_op_from_name(bench_op_name);
    std::vector<std::string> rows;
    for (const std::string& ks : split(bench_kernels, ',')) {
      const std::int64_t k = std::stoll(ks);
      const auto& sweep =
          op == pfc::BenchOp::kPgc ? bench_sigmas : bench_rates;
      for (const std::string& rv : split(sweep, ',')) {
        const pfc::BenchReport rep = pfc::bench_op(
            op, n, c, h, w, std::stod(rv), k, cfg.bench_repeats, cfg.seed);
        rows.push_back(pfc::bench_csv_row(rep));
      }
    }
    std::printf("%s\n", pfc::bench_csv_header().c_str());
    for (const auto& r : rows) std::printf("%s\n", r.c_str());
    if (!bench_out.empty()) {
      std::ofstream f(bench_out);
      f << pfc::bench_csv_header() << "\n";
      for (const auto& r : rows) f << r << "\n";
      write_config_beside(bench_out + ".config.txt", cfg);
    }
    std::printf("RESULT command=bench rows=%zu\n", rows.size());
    return 0;
  }

  if (c_density->parsed()) {
    b_density.apply("make-density");
    const auto [h, w] = parse_shape_hw(density_shape);
    pfc::HeadAnnotations heads = pfc::read_annotations_csv(density_heads);
    pfc::DensityMap d = pfc::make_density(heads, h, w);
    pfc::write_f32m(density_out, d.grid);
    write_config_beside(density_out + ".config.txt", cfg);
    std::printf("RESULT command=make-density heads=%zu sum=%.6f out=%s\n",
                heads.points.size(), pfc::reduce(d.grid, pfc::Reduce::kSum),
                density_out.c_str());
    return 0;
  }

  if (c_synth->parsed()) {
    b_synth.apply("synth");
    if (!synth_shape.empty()) {
      const auto [h, w] = parse_shape_hw(synth_shape);
      cfg.image_h = h;
      cfg.image_w = w;
    }
    if (!synth_heads.empty()) {
      const auto parts = split(synth_heads, ',');
      if (parts.size() != 2)
        throw pfc::UsageError("synth: --heads needs min,max");
      cfg.heads_min = std::stoll(parts[0]);
      cfg.heads_max = std::stoll(parts[1]);
    }
    if (cfg.out_dir.empty()) throw pfc::UsageError("synth: --out is required");
    const auto scenes =
        pfc::synth_dataset(cfg.scenes, cfg.image_h, cfg.image_w, cfg.heads_min,
                           cfg.heads_max, cfg.seed);
    pfc::save_scenes(cfg.out_dir, scenes);
    write_config_beside(cfg.out_dir + "/config.txt", cfg);
    std::printf("RESULT command=synth scenes=%zu out=%s\n", scenes.size(),
                cfg.out_dir.c_str());
    return 0;
  }

  if (c_fit->parsed()) {
    const auto [h, w] = parse_shape_hw(fit_shape);
    const auto rows = pfc::read_labeled_heights_csv(fit_heights);
    std::int64_t clamped = 0;
    pfc::PerspectiveMap m = pfc::fit_perspective_map(
        rows, h, w, static_cast<float>(fit_h_person), &clamped);
    pfc::write_f32m(fit_out, m.grid);
    if (clamped > 0)
      std::fprintf(stderr, "note: %lld fitted rows clamped to 1e-3\n",
                   static_cast<long long>(clamped));
    std::printf(
        "RESULT command=fit-persp samples=%zu clamped_rows=%lld out=%s\n",
        rows.size(), static_cast<long long>(clamped), fit_out.c_str());
    return 0;
  }

  if (c_penet->parsed()) {
    b_penet.apply("train-penet");
    if (cfg.data_dir.empty() || cfg.out_dir.empty())
      throw pfc::UsageError("train-penet: --data and --out are required");
    const auto scenes = pfc::load_scenes(cfg.data_dir);
    const pfc::PenetTrainResult res =
        pfc::train_penet(scenes, cfg, cfg.out_dir);
    std::printf(
        "RESULT command=train-penet phase=%lld epochs=%lld psnr=%.4f "
        "checkpoint=%s\n",
        static_cast<long long>(cfg.phase),
        static_cast<long long>(res.epochs_run), res.final_psnr,
        res.checkpoint_path.c_str());
    return 0;
  }

  if (c_train->parsed()) {
    b_train.apply("train");
    if (cfg.data_dir.empty() || cfg.out_dir.empty())
      throw pfc::UsageError("train: --data and --out are required");
    const auto scenes = pfc::load_scenes(cfg.data_dir);
    const pfc::PfdnetTrainResult res =
        pfc::train_pfdnet(scenes, cfg, cfg.out_dir);
    std::printf(
        "RESULT command=train iters=%lld mae_first=%.6f mae_final=%.6f "
        "checkpoint=%s\n",
        static_cast<long long>(cfg.iters), res.mae_first, res.mae_final,
        res.checkpoint_path.c_str());
    return 0;
  }

  if (c_eval->parsed()) {
    const pfc::EvalResult res = pfc::eval_density_dirs(eval_pred, eval_gt);
    std::printf(
        "RESULT command=eval n=%lld mae=%.6f rmse=%.6f game0=%.6f game1=%.6f "
        "game2=%.6f game3=%.6f\n",
        static_cast<long long>(res.pairs), res.mae, res.rmse, res.game_mean[0],
        res.game_mean[1], res.game_mean[2], res.game_mean[3]);
    return 0;
  }

  if (c_predict->parsed()) {
    pfc::PfdnetState st =
        pfc::pfdnet_from_checkpoint(pfc::read_checkpoint(pr_checkpoint));
    pfc::Tensor4 image = pfc::read_ppm(pr_image);
    pfc::PerspectiveMap persp;
    const pfc::PerspectiveMap* persp_arg = nullptr;
    if (st.config.persp_source != pfc::PerspSource::kPenet) {
      if (pr_persp.empty())
        throw pfc::UsageError("predict: this checkpoint needs --persp");
      persp.grid = pfc::read_f32m(pr_persp);
      persp_arg = &persp;
    }
    pfc::PfdnetCache cache;
    pfc::PfdnetOutput out = pfc::pfdnet_forward(image, persp_arg, st, cache);
    const double count = pfc::predict_count(out.density[0]);
    if (!pr_out.empty()) pfc::write_f32m(pr_out, out.density[0]);
    std::printf("RESULT command=predict count=%.4f out=%s\n", count,
                pr_out.c_str());
    return 0;
  }

  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const pfc::UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const pfc::FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return 3;
  } catch (const pfc::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const pfc::ShapeError& e) {
    std::fprintf(stderr, "shape error: %s\n", e.what());
    return 3;
  } catch (const pfc::DomainError& e) {
    std::fprintf(stderr, "domain error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
