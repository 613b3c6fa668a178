#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pfc/density.hpp"
#include "pfc/io.hpp"
#include "pfc/metrics.hpp"
#include "testing_util.hpp"

using namespace pfc;
using pfctest::random_grid;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST(MakeDensity, SingleCenteredHeadSumsToOne) {
  HeadAnnotations heads;
  heads.points.push_back({32.0f, 32.0f});
  DensityMap d = make_density(heads, 64, 64);
  EXPECT_NEAR(reduce(d.grid, Reduce::kSum), 1.0, 1e-5);
}

TEST(MakeDensity, CornerHeadRenormalized) {
  HeadAnnotations heads;
  heads.points.push_back({0.0f, 0.0f});
  DensityMap d = make_density(heads, 64, 64);
  EXPECT_NEAR(reduce(d.grid, Reduce::kSum), 1.0, 1e-5);
}

TEST(MakeDensity, FiveHeadsSumToFive) {
  HeadAnnotations heads;
  heads.points = {{1.0f, 2.0f},
                  {63.0f, 63.0f},
                  {10.5f, 40.2f},
                  {0.0f, 63.0f},
                  {31.0f, 0.0f}};
  DensityMap d = make_density(heads, 64, 64);
  EXPECT_NEAR(reduce(d.grid, Reduce::kSum), 5.0, 5e-5);
}

TEST(MakeDensity, CountConservationProperty) {
  Rng rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const std::int64_t h = rng.uniform_int(16, 48);
    const std::int64_t w = rng.uniform_int(16, 48);
    const std::int64_t n = rng.uniform_int(1, 20);
    HeadAnnotations heads;
    for (std::int64_t i = 0; i < n; ++i) {
      // bias some points onto edges and corners
      float x = rng.uniform(0.0f, static_cast<float>(w) - 1e-3f);
      float y = rng.uniform(0.0f, static_cast<float>(h) - 1e-3f);
      if (rng.next_float() < 0.3f)
        x = rng.next_float() < 0.5f ? 0.0f : static_cast<float>(w - 1);
      if (rng.next_float() < 0.3f)
        y = rng.next_float() < 0.5f ? 0.0f : static_cast<float>(h - 1);
      heads.points.push_back({x, y});
    }
    DensityMap d = make_density(heads, h, w);
    const double sum = reduce(d.grid, Reduce::kSum);
    ASSERT_NEAR(sum, static_cast<double>(n), 1e-4 * static_cast<double>(n));
    for (float v : d.grid.data) ASSERT_GE(v, 0.0f);
  }
}

TEST(MakeDensity, OutOfBoundsHeadRejected) {
  HeadAnnotations heads;
  heads.points.push_back({64.0f, 10.0f});
  EXPECT_THROW(make_density(heads, 64, 64), DataError);
}

TEST(MaeRmse, TwoElementHandComputation) {
  const auto [mae, rmse] = mae_rmse({10.0, 20.0}, {12.0, 17.0});
  EXPECT_DOUBLE_EQ(mae, 2.5);
  EXPECT_NEAR(rmse, std::sqrt(6.5), 1e-12);
}

TEST(MaeRmse, PerfectPrediction) {
  const auto [mae, rmse] = mae_rmse({3.0, 4.0, 5.0}, {3.0, 4.0, 5.0});
  EXPECT_EQ(mae, 0.0);
  EXPECT_EQ(rmse, 0.0);
}

TEST(MaeRmse, SinglePairIdentity) {
  const auto [mae, rmse] = mae_rmse({7.0}, {3.0});
  EXPECT_DOUBLE_EQ(mae, 4.0);
  EXPECT_DOUBLE_EQ(rmse, 4.0);
}

TEST(MaeRmse, UsageErrors) {
  EXPECT_THROW(mae_rmse({}, {}), UsageError);
  EXPECT_THROW(mae_rmse({1.0}, {1.0, 2.0}), UsageError);
}

TEST(Game, LevelZeroIsAbsoluteCountError) {
  Rng rng(7);
  for (int t = 0; t < 20; ++t) {
    Grid2 p = random_grid(9, 13, rng, 0.0f, 1.0f);
    Grid2 g = random_grid(9, 13, rng, 0.0f, 1.0f);
    const double want =
        std::abs(reduce(p, Reduce::kSum) - reduce(g, Reduce::kSum));
    EXPECT_NEAR(game(p, g, 0), want, 1e-9);
  }
}

TEST(Game, IdenticalMapsGiveZero) {
  Rng rng(8);
  Grid2 p = random_grid(16, 16, rng, 0.0f, 1.0f);
  for (int level = 0; level <= 3; ++level) EXPECT_EQ(game(p, p, level), 0.0);
}

TEST(Game, OppositeHalvesLevelOne) {
  Grid2 p(8, 8, 0.0f);
  Grid2 g(8, 8, 0.0f);
  // pred mass 10 in the left half, gt mass 10 in the right half
  for (std::int64_t i = 0; i < 8; ++i) {
    p.at(i, 1) = 10.0f / 8.0f;
    g.at(i, 6) = 10.0f / 8.0f;
  }
  EXPECT_NEAR(game(p, g, 1), 20.0, 1e-5);
  EXPECT_NEAR(game(p, g, 0), 0.0, 1e-5);
}

TEST(Game, MonotoneInLevel) {
  Rng rng(9);
  for (int t = 0; t < 30; ++t) {
    const std::int64_t h = rng.uniform_int(5, 33);  // odd sizes included
    const std::int64_t w = rng.uniform_int(5, 33);
    Grid2 p = random_grid(h, w, rng, 0.0f, 1.0f);
    Grid2 g = random_grid(h, w, rng, 0.0f, 1.0f);
    double prev = game(p, g, 0);
    for (int level = 1; level <= 4; ++level) {
      const double cur = game(p, g, level);
      ASSERT_GE(cur, prev - 1e-9) << "h=" << h << " w=" << w << " L=" << level;
      prev = cur;
    }
  }
}

TEST(Game, ShapeMismatchRejected) {
  Grid2 a(4, 4, 0.0f), b(4, 5, 0.0f);
  EXPECT_THROW(game(a, b, 0), UsageError);
}

TEST(Synth, DeterministicPerSeed) {
  auto a = synth_dataset(3, 64, 48, 3, 12, 99);
  auto b = synth_dataset(3, 64, 48, 3, 12, 99);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image.data, b[i].image.data);
    EXPECT_EQ(a[i].heads.points, b[i].heads.points);
    EXPECT_EQ(a[i].persp.grid.data, b[i].persp.grid.data);
  }
  auto c = synth_dataset(3, 64, 48, 3, 12, 100);
  EXPECT_NE(a[0].image.data, c[0].image.data);
}

TEST(Synth, SceneInvariants) {
  auto scenes = synth_dataset(5, 96, 80, 4, 16, 5);
  ASSERT_EQ(scenes.size(), 5u);
  for (const auto& sc : scenes) {
    ASSERT_GE(sc.heads.points.size(), 4u);
    ASSERT_LE(sc.heads.points.size(), 16u);
    validate_annotations(sc.heads, 96, 80);
    // row-linear positive perspective, constant in each row
    for (std::int64_t i = 0; i < sc.persp.grid.h; ++i) {
      ASSERT_GT(sc.persp.grid.at(i, 0), 0.0f);
      for (std::int64_t j = 1; j < sc.persp.grid.w; ++j)
        ASSERT_EQ(sc.persp.grid.at(i, j), sc.persp.grid.at(i, 0));
    }
  }
}

TEST(Synth, RenderedBlobRadiusFollowsPerspective) {
  auto scenes = synth_dataset(4, 128, 128, 6, 14, 31);
  int checked = 0;
  for (const auto& sc : scenes) {
    // measure the horizontal extent of isolated, fully interior discs
    for (std::size_t a = 0; a < sc.heads.points.size(); ++a) {
      const float x = sc.heads.points[a][0], y = sc.heads.points[a][1];
      const std::int64_t iy = static_cast<std::int64_t>(std::lround(y));
      const float r = kHeadRadiusPerPersp * sc.persp.grid.at(iy, 0);
      if (x < r + 2 || x > 127 - r - 2 || y < r + 2 || y > 127 - r - 2)
        continue;
      bool isolated = true;
      for (std::size_t b = 0; b < sc.heads.points.size(); ++b) {
        if (a == b) continue;
        const float dx = sc.heads.points[b][0] - x;
        const float dy = sc.heads.points[b][1] - y;
        const float rb =
            kHeadRadiusPerPersp *
            sc.persp.grid.at(
                static_cast<std::int64_t>(std::lround(sc.heads.points[b][1])),
                0);
        if (std::sqrt(dx * dx + dy * dy) < r + rb + 3.0f) isolated = false;
      }
      if (!isolated) continue;
      const std::int64_t jx = static_cast<std::int64_t>(std::lround(x));
      std::int64_t extent = 0;
      for (std::int64_t j = jx; j >= 0 && sc.image.at(0, 0, iy, j) > 0.3f; --j)
        ++extent;
      for (std::int64_t j = jx + 1; j < 128 && sc.image.at(0, 0, iy, j) > 0.3f;
           ++j)
        ++extent;
      // extent is ~2r wide; allow discretization slack
      ASSERT_NEAR(static_cast<float>(extent), 2.0f * r, 3.0f)
          << "row " << iy << " persp " << sc.persp.grid.at(iy, 0);
      ++checked;
    }
  }
  ASSERT_GT(checked, 3);
}

TEST(Synth, BadRangesRejected) {
  EXPECT_THROW(synth_dataset(0, 64, 64, 1, 2, 1), UsageError);
  EXPECT_THROW(synth_dataset(1, 64, 64, 5, 2, 1), UsageError);
  EXPECT_THROW(synth_dataset(1, 16, 16, 0, 1000, 1), DomainError);
}

TEST(IoF32m, ByteLayoutAndRoundTrip) {
  Grid2 g(1, 1);
  g.data = {1.5f};
  const std::string path = tmp_path("pfc_test_map.f32m");
  write_f32m(path, g);

  const auto bytes = detail::read_file_bytes(path);
  ASSERT_EQ(bytes.size(), 20u);
  EXPECT_EQ(std::memcmp(bytes.data(), "F32M", 4), 0);
  EXPECT_EQ(bytes[4], 1);   // version 1, little-endian
  EXPECT_EQ(bytes[8], 1);   // h = 1
  EXPECT_EQ(bytes[12], 1);  // w = 1

  Grid2 back = read_f32m(path);
  EXPECT_EQ(back.h, 1);
  EXPECT_EQ(back.w, 1);
  EXPECT_EQ(back.data, g.data);
  std::remove(path.c_str());
}

TEST(IoF32m, CorruptionDetected) {
  Rng rng(3);
  Grid2 g = random_grid(4, 5, rng);
  const std::string path = tmp_path("pfc_test_corrupt.f32m");
  write_f32m(path, g);

  auto bytes = detail::read_file_bytes(path);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  detail::write_file_bytes(path, bad_magic);
  EXPECT_THROW(read_f32m(path), FormatError);

  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  detail::write_file_bytes(path, truncated);
  EXPECT_THROW(read_f32m(path), FormatError);

  Grid2 with_nan = g;
  with_nan.data[7] = std::nanf("");
  write_f32m(path, with_nan);
  EXPECT_THROW(read_f32m(path), DataError);
  std::remove(path.c_str());
}

TEST(IoCsv, AnnotationsRoundTrip) {
  const std::string path = tmp_path("pfc_test_heads.csv");
  {
    std::ofstream f(path);
    f << "x,y\n3.5,7.0\n";
  }
  HeadAnnotations heads = read_annotations_csv(path);
  ASSERT_EQ(heads.points.size(), 1u);
  EXPECT_FLOAT_EQ(heads.points[0][0], 3.5f);
  EXPECT_FLOAT_EQ(heads.points[0][1], 7.0f);

  heads.points.push_back({0.125f, 63.875f});
  write_annotations_csv(path, heads);
  HeadAnnotations back = read_annotations_csv(path);
  EXPECT_EQ(back.points, heads.points);

  {
    std::ofstream f(path);
    f << "col,row\n1,2\n";
  }
  EXPECT_THROW(read_annotations_csv(path), FormatError);
  std::remove(path.c_str());
}

TEST(IoCsv, LabeledHeightsRoundTrip) {
  const std::string path = tmp_path("pfc_test_heights.csv");
  std::vector<LabeledHeight> rows{{100.0f, 87.5f}, {200.0f, 175.0f}};
  write_labeled_heights_csv(path, rows);
  auto back = read_labeled_heights_csv(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].y_h, 100.0f);
  EXPECT_EQ(back[1].h_px, 175.0f);
  std::remove(path.c_str());
}

TEST(IoPpm, RoundTripWithinQuantization) {
  Rng rng(77);
  Tensor4 img(1, 3, 6, 9);
  for (auto& v : img.data) v = rng.next_float();
  const std::string path = tmp_path("pfc_test_img.ppm");
  write_ppm(path, img);
  Tensor4 back = read_ppm(path);
  ASSERT_EQ(back.h, 6);
  ASSERT_EQ(back.w, 9);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    ASSERT_NEAR(back.data[i], img.data[i], 0.5f / 255.0f + 1e-6f);

  // second write of the read-back image is byte-identical
  const std::string path2 = tmp_path("pfc_test_img2.ppm");
  write_ppm(path2, back);
  EXPECT_EQ(detail::read_file_bytes(path), detail::read_file_bytes(path2));
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST(IoCheckpoint, RoundTripBitExact) {
  Rng rng(15);
  Checkpoint ck;
  std::vector<float> w1(24);
  for (auto& v : w1) v = rng.normal(0.0f, 1.0f);
  ck.add("layer0.kernel", {2, 3, 2, 2}, w1);
  ck.add("layer0.bias", {2}, {0.5f, -0.25f});
  ck.add_scalar("__phase__", 2.0f);

  const std::string path = tmp_path("pfc_test_ck.pfdc");
  write_checkpoint(path, ck);
  Checkpoint back = read_checkpoint(path);
  ASSERT_EQ(back.entries.size(), 3u);
  EXPECT_EQ(back.entries[0].name, "layer0.kernel");
  EXPECT_EQ(back.entries[0].dims, (std::vector<std::uint32_t>{2, 3, 2, 2}));
  EXPECT_EQ(back.entries[0].values, w1);
  EXPECT_EQ(back.require("__phase__").values[0], 2.0f);
  EXPECT_EQ(back.find("missing"), nullptr);
  std::remove(path.c_str());
}

TEST(IoCheckpoint, CorruptionDetected) {
  Checkpoint ck;
  ck.add_scalar("x", 1.0f);
  const std::string path = tmp_path("pfc_test_ck2.pfdc");
  write_checkpoint(path, ck);
  auto bytes = detail::read_file_bytes(path);

  auto bad_magic = bytes;
  bad_magic[1] = 'X';
  detail::write_file_bytes(path, bad_magic);
  EXPECT_THROW(read_checkpoint(path), FormatError);

  auto flipped = bytes;
  flipped[14] ^= 0x40;  // payload bit flip breaks the CRC
  detail::write_file_bytes(path, flipped);
  EXPECT_THROW(read_checkpoint(path), DataError);

  auto truncated = bytes;
  truncated.resize(truncated.size() - 9);
  detail::write_file_bytes(path, truncated);
  EXPECT_THROW(read_checkpoint(path), std::runtime_error);
  std::remove(path.c_str());
}
