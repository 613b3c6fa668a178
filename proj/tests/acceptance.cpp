// Acceptance suite: one pass/fail line per criterion. Exit 0 iff all pass.
// argv[1] must point at the pfc CLI binary (used by the determinism check).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "pfc/bench.hpp"
#include "pfc/density.hpp"
#include "pfc/fdconv.hpp"
#include "pfc/gradcheck.hpp"
#include "pfc/io.hpp"
#include "pfc/metrics.hpp"
#include "pfc/parallel.hpp"
#include "pfc/train.hpp"

using namespace pfc;

namespace {

int g_failures = 0;

void criterion(int number, const std::string& name, double budget_s,
               const std::function<bool(std::string&)>& body) {
  std::string detail;
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = false;
  try {
    ok = body(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
    ok = false;
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  if (budget_s > 0 && secs > budget_s) {
    ok = false;
    detail += " [over time budget]";
  }
  std::printf("[%s] criterion %d: %s (%.1fs)%s%s\n", ok ? "PASS" : "FAIL",
              number, name.c_str(), secs, detail.empty() ? "" : " — ",
              detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

bool files_equal(const std::string& a, const std::string& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  std::vector<char> ba((std::istreambuf_iterator<char>(fa)),
                       std::istreambuf_iterator<char>());
  std::vector<char> bb((std::istreambuf_iterator<char>(fb)),
                       std::istreambuf_iterator<char>());
  return ba == bb;
}

int run_cli(const std::string& cli, const std::string& args,
            const std::string& stdout_path) {
  const std::string cmd = cli + " " + args + " > " + stdout_path + " 2>&1";
  return std::system(cmd.c_str());
}

double brute_force_bilinear(const Tensor4& x, double i_hat, double j_hat) {
  double acc = 0.0;
  for (std::int64_t qi = 0; qi < x.h; ++qi)
    for (std::int64_t qj = 0; qj < x.w; ++qj) {
      const double gi = std::max(0.0, 1.0 - std::abs(qi - i_hat));
      const double gj = std::max(0.0, 1.0 - std::abs(qj - j_hat));
      acc += gi * gj * static_cast<double>(x.at(0, 0, qi, qj));
    }
  return acc;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "";

  // 1 — fractional op at integer rates reproduces the dilated reference
  criterion(1, "integer-rate equivalence", 10.0, [](std::string& detail) {
    Rng rng(101);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const std::int64_t n = rng.uniform_int(1, 2);
      const std::int64_t cin = rng.uniform_int(1, 8);
      const std::int64_t cout = rng.uniform_int(1, 8);
      const std::int64_t h = rng.uniform_int(4, 16);
      const std::int64_t w = rng.uniform_int(4, 16);
      const std::int64_t r = 1 + trial % 3;
      Tensor4 x(n, cin, h, w);
      for (auto& v : x.data) v = rng.uniform(-1.0f, 1.0f);
      ConvWeights wt(cout, cin, 3);
      for (auto& v : wt.kernel) v = rng.uniform(-1.0f, 1.0f);
      for (auto& v : wt.bias) v = rng.uniform(-1.0f, 1.0f);
      Tensor4 a = fdconv_forward(x, wt, Grid2(h, w, static_cast<float>(r)));
      Tensor4 b = dilated_conv_ref(x, wt, r);
      for (std::size_t i = 0; i < a.data.size(); ++i)
        worst = std::max(worst,
                         static_cast<double>(std::abs(a.data[i] - b.data[i])));
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "max abs diff %.2e", worst);
    detail = buf;
    return worst <= 1e-5;
  });

  // 2 — bilinear sampling against the full-grid oracle + partition of unity
  criterion(2, "bilinear sampling oracle", 30.0, [](std::string& detail) {
    Rng rng(202);
    double worst = 0.0;
    Tensor4 x(1, 1, 7, 7);
    for (int trial = 0; trial < 1000; ++trial) {
      if (trial % 50 == 0)
        for (auto& v : x.data) v = rng.uniform(-2.0f, 2.0f);
      const float i_hat = rng.uniform(-2.0f, 9.0f);
      const float j_hat = rng.uniform(-2.0f, 9.0f);
      const double got = bilinear_sample(x, 0, 0, {i_hat, j_hat});
      const double want = brute_force_bilinear(x, i_hat, j_hat);
      worst = std::max(worst, std::abs(got - want));
    }
    Tensor4 ones = Tensor4::filled(1, 1, 7, 7, 1.0f);
    double pou_worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
      const float i_hat = rng.uniform(0.0f, 6.0f);
      const float j_hat = rng.uniform(0.0f, 6.0f);
      pou_worst = std::max(
          pou_worst,
          std::abs(bilinear_sample(ones, 0, 0, {i_hat, j_hat}) - 1.0));
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "oracle %.2e, partition-of-unity %.2e",
                  worst, pou_worst);
    detail = buf;
    return worst <= 1e-6 && pou_worst <= 1e-6;
  });

  // 3 — finite-difference gradient suites
  criterion(3, "gradient suite", 120.0, [](std::string& detail) {
    const GradcheckReport rep = run_gradcheck(1);
    char buf[128];
    std::snprintf(buf, sizeof(buf),
                  "fdconv %.1e persp %.1e penet %.1e pfdnet %.1e", rep.fdconv,
                  rep.perspective, rep.penet, rep.pfdnet);
    detail = buf;
    return rep.pass;
  });

  // 4 — density targets conserve counts
  criterion(4, "count conservation", 60.0, [](std::string& detail) {
    Rng rng(404);
    double worst_rel = 0.0;
    for (int trial = 0; trial < 500; ++trial) {
      const std::int64_t h = rng.uniform_int(16, 64);
      const std::int64_t w = rng.uniform_int(16, 64);
      const std::int64_t n = rng.uniform_int(1, 30);
      HeadAnnotations heads;
      for (std::int64_t i = 0; i < n; ++i) {
        float x = rng.uniform(0.0f, static_cast<float>(w) - 1e-3f);
        float y = rng.uniform(0.0f, static_cast<float>(h) - 1e-3f);
        const float edge = rng.next_float();
        if (edge < 0.15f) x = 0.0f;
        else if (edge < 0.3f) x = static_cast<float>(w - 1);
        const float edge2 = rng.next_float();
        if (edge2 < 0.15f) y = 0.0f;
        else if (edge2 < 0.3f) y = static_cast<float>(h - 1);
        heads.points.push_back({x, y});
      }
      const DensityMap d = make_density(heads, h, w);
      const double sum = reduce(d.grid, Reduce::kSum);
      worst_rel = std::max(
          worst_rel, std::abs(sum - static_cast<double>(n)) /
                         static_cast<double>(n));
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "worst relative error %.2e", worst_rel);
    detail = buf;
    return worst_rel <= 1e-4;
  });

  // 5 — metric identities
  criterion(5, "metric identities", 60.0, [](std::string& detail) {
    Rng rng(505);
    double worst_game0 = 0.0;
    bool monotone = true;
    for (int trial = 0; trial < 100; ++trial) {
      const std::int64_t h = rng.uniform_int(5, 40);
      const std::int64_t w = rng.uniform_int(5, 40);
      Grid2 p(h, w), g(h, w);
      for (auto& v : p.data) v = rng.uniform(0.0f, 1.0f);
      for (auto& v : g.data) v = rng.uniform(0.0f, 1.0f);
      const double g0 = game(p, g, 0);
      const double want =
          std::abs(reduce(p, Reduce::kSum) - reduce(g, Reduce::kSum));
      worst_game0 = std::max(worst_game0, std::abs(g0 - want));
      double prev = g0;
      for (int level = 1; level <= 3; ++level) {
        const double cur = game(p, g, level);
        if (cur < prev - 1e-9) monotone = false;
        prev = cur;
      }
    }
    // MAE / RMSE against a direct oracle
    std::vector<double> preds, gts;
    for (int i = 0; i < 64; ++i) {
      preds.push_back(rng.uniform(0.0f, 200.0f));
      gts.push_back(rng.uniform(0.0f, 200.0f));
    }
    const auto [mae, rmse] = mae_rmse(preds, gts);
    double abs_acc = 0.0, sq_acc = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      abs_acc += std::abs(gts[i] - preds[i]);
      sq_acc += (gts[i] - preds[i]) * (gts[i] - preds[i]);
    }
    const double mae_want = abs_acc / 64.0;
    const double rmse_want = std::sqrt(sq_acc / 64.0);
    const bool metrics_ok = std::abs(mae - mae_want) <= 1e-6 &&
                            std::abs(rmse - rmse_want) <= 1e-6;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "GAME0 id %.1e, monotone %s", worst_game0,
                  monotone ? "yes" : "NO");
    detail = buf;
    return worst_game0 <= 1e-9 && monotone && metrics_ok;
  });

  // 6 — runtime claims: fractional rate does not change fdconv cost; the
  // smoothing baseline scales with its window
  criterion(6, "runtime-claim analog", 120.0, [](std::string& detail) {
    set_num_threads(2);
    const BenchReport r1 = bench_op(BenchOp::kFdconv, 1, 256, 96, 128, 1.0, 3, 5);
    const BenchReport r4 = bench_op(BenchOp::kFdconv, 1, 256, 96, 128, 4.0, 3, 5);
    const BenchReport p3 = bench_op(BenchOp::kPgc, 1, 256, 96, 128, 0.75, 3, 5);
    const BenchReport p7 = bench_op(BenchOp::kPgc, 1, 256, 96, 128, 0.75, 7, 5);
    set_num_threads(1);
    const double ratio = std::max(r1.median_ms, r4.median_ms) /
                         std::min(r1.median_ms, r4.median_ms);
    char buf[128];
    std::snprintf(buf, sizeof(buf),
                  "fdconv r1 %.1fms r4 %.1fms (x%.2f), pgc 3x3 %.1fms 7x7 %.1fms",
                  r1.median_ms, r4.median_ms, ratio, p3.median_ms,
                  p7.median_ms);
    detail = buf;
    return ratio < 2.0 && p7.median_ms > p3.median_ms;
  });

  // 7 — perspective estimator reaches the reconstruction / prediction bars
  criterion(7, "penet phase-1/phase-2 PSNR", 1800.0, [](std::string& detail) {
    const auto scenes = synth_dataset(200, 512, 512, 4, 16, 1007);
    const std::string out1 = temp_dir("pfc_acc_penet1");
    RunConfig cfg;
    cfg.seed = 7;
    cfg.phase = 1;
    cfg.epochs = 500;
    cfg.batch = 8;
    cfg.width_mult = 0.125;
    cfg.lr = 1e-3;
    cfg.psnr_stop = 30.0;
    const PenetTrainResult p1 = train_penet(scenes, cfg, out1);

    RunConfig cfg2 = cfg;
    cfg2.phase = 2;
    cfg2.psnr_stop = 22.0;
    cfg2.checkpoint = p1.checkpoint_path;
    const std::string out2 = temp_dir("pfc_acc_penet2");
    const PenetTrainResult p2 = train_penet(scenes, cfg2, out2);

    char buf[128];
    std::snprintf(buf, sizeof(buf),
                  "phase1 %.2f dB (>=30) in %lld epochs, phase2 %.2f dB (>=22) "
                  "in %lld epochs",
                  p1.final_psnr, static_cast<long long>(p1.epochs_run),
                  p2.final_psnr, static_cast<long long>(p2.epochs_run));
    detail = buf;
    std::filesystem::remove_all(out1);
    std::filesystem::remove_all(out2);
    return p1.final_psnr >= 30.0 && p2.final_psnr >= 22.0;
  });

  // 8 — end-to-end training halves the MAE; mean-perspective ablation ends
  // strictly worse under the identical seed and data
  criterion(8, "end-to-end smoke + mean ablation", 600.0,
            [](std::string& detail) {
    const auto scenes = synth_dataset(50, 96, 96, 4, 20, 1008);
    RunConfig cfg;
    cfg.seed = 8;
    cfg.iters = 200;
    cfg.batch = 4;
    cfg.lr = 1e-3;
    cfg.persp_source = "gt";
    const std::string out_gt = temp_dir("pfc_acc_train_gt");
    const PfdnetTrainResult gt = train_pfdnet(scenes, cfg, out_gt);

    RunConfig cfg_mean = cfg;
    cfg_mean.persp_source = "mean";
    const std::string out_mean = temp_dir("pfc_acc_train_mean");
    const PfdnetTrainResult mean = train_pfdnet(scenes, cfg_mean, out_mean);

    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "gt MAE %.3f -> %.3f (need <= %.3f), mean-ablation final "
                  "%.3f (must exceed gt)",
                  gt.mae_first, gt.mae_final, 0.5 * gt.mae_first,
                  mean.mae_final);
    detail = buf;
    std::filesystem::remove_all(out_gt);
    std::filesystem::remove_all(out_mean);
    return gt.mae_final <= 0.5 * gt.mae_first &&
           mean.mae_final > gt.mae_final;
  });

  // 9 — byte-identical CLI outputs across reruns and thread counts
  criterion(9, "CLI determinism at threads 1 and 4", 600.0,
            [cli](std::string& detail) {
    if (cli.empty()) {
      detail = "pfc CLI path missing (argv[1])";
      return false;
    }
    const std::string root = temp_dir("pfc_acc_det");
    const std::string null_out = root + "/cmd.log";

    // synth twice with one seed
    for (const std::string d : {"dataA", "dataB"})
      if (run_cli(cli, "synth --scenes 3 --shape 64x64 --heads 3,9 --seed 5 "
                       "--out " + root + "/" + d,
                  null_out) != 0) {
        detail = "synth failed";
        return false;
      }
    for (int i = 0; i < 3; ++i) {
      const std::string base = "/" + scene_base(i);
      for (const std::string ext : {".ppm", ".persp.f32m", ".heads.csv"})
        if (!files_equal(root + "/dataA" + base + ext,
                         root + "/dataB" + base + ext)) {
          detail = "synth outputs differ between identical runs";
          return false;
        }
    }

    // train at 1 vs 4 threads
    const std::string train_args =
        "train --data " + root + "/dataA --iters 5 --batch 2 --seed 3 "
        "--lr 0.001 --persp-source gt --out ";
    if (run_cli(cli, "--threads 1 " + train_args + root + "/t1", null_out) != 0 ||
        run_cli(cli, "--threads 4 " + train_args + root + "/t4", null_out) != 0) {
      detail = "train failed";
      return false;
    }
    for (const std::string f : {"/train_log.csv", "/pfdnet.pfdc", "/config.txt"})
      if (!files_equal(root + "/t1" + f, root + "/t4" + f)) {
        detail = "train outputs differ between thread counts: " + f;
        return false;
      }

    // train-penet at 1 vs 4 threads (tiny run)
    if (run_cli(cli, "synth --scenes 2 --shape 512x512 --heads 3,6 --seed 6 "
                     "--out " + root + "/dataP",
                null_out) != 0) {
      detail = "synth (penet) failed";
      return false;
    }
    const std::string penet_args =
        "train-penet --phase 1 --data " + root + "/dataP --epochs 1 "
        "--batch 2 --width-mult 0.0625 --seed 4 --out ";
    if (run_cli(cli, "--threads 1 " + penet_args + root + "/p1", null_out) != 0 ||
        run_cli(cli, "--threads 4 " + penet_args + root + "/p4", null_out) != 0) {
      detail = "train-penet failed";
      return false;
    }
    for (const std::string f : {"/train_log.csv", "/penet_phase1.pfdc",
                                "/config.txt"})
      if (!files_equal(root + "/p1" + f, root + "/p4" + f)) {
        detail = "train-penet outputs differ between thread counts: " + f;
        return false;
      }

    // eval twice over the same directories
    std::filesystem::create_directories(root + "/maps");
    Rng rng(99);
    for (int i = 0; i < 3; ++i) {
      Grid2 g(8, 8);
      for (auto& v : g.data) v = rng.uniform(0.0f, 1.0f);
      write_f32m(root + "/maps/m" + std::to_string(i) + ".f32m", g);
    }
    if (run_cli(cli, "eval --pred " + root + "/maps --gt " + root + "/maps",
                root + "/e1.txt") != 0 ||
        run_cli(cli, "eval --pred " + root + "/maps --gt " + root + "/maps",
                root + "/e2.txt") != 0) {
      detail = "eval failed";
      return false;
    }
    if (!files_equal(root + "/e1.txt", root + "/e2.txt")) {
      detail = "eval output differs between identical runs";
      return false;
    }

    std::filesystem::remove_all(root);
    return true;
  });

  std::printf("acceptance: %d criterion(s) failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
