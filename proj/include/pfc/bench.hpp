#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "pfc/fdconv.hpp"
#include "pfc/tensor.hpp"

namespace pfc {

enum class BenchOp { kFdconv, kDilatedRef, kPgc };

struct BenchReport {
  std::string op;
  std::int64_t n = 0, c = 0, h = 0, w = 0, k = 0;
  std::string rate_summary;
  double median_ms = 0.0, p10_ms = 0.0, p90_ms = 0.0;
  std::uint64_t checksum = 0;
};

namespace detail {

inline std::uint64_t fnv1a64(const float* data, std::size_t count) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < count * sizeof(float); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline double nearest_rank_ms(const std::vector<double>& sorted, double q) {
  const std::size_t n = sorted.size();
  std::size_t idx = static_cast<std::size_t>(
      std::ceil(q * static_cast<double>(n)));
  if (idx > 0) --idx;
  if (idx >= n) idx = n - 1;
  return sorted[idx];
}

}  // namespace detail

inline BenchOp bench_op_from_name(const std::string& name) {
  if (name == "fdconv") return BenchOp::kFdconv;
  if (name == "dilated_ref") return BenchOp::kDilatedRef;
  if (name == "pgc") return BenchOp::kPgc;
  throw UsageError("bench: unknown op '" + name + "'");
}

/// Time one operator configuration: deterministic seeded inputs, one untimed
/// warmup call, then `repeats` timed calls. Reports nearest-rank median /
/// p10 / p90 wall-clock milliseconds and an FNV-1a checksum of the output so
/// the computation cannot be optimized away.
inline BenchReport bench_op(BenchOp op, std::int64_t n, std::int64_t c,
                            std::int64_t h, std::int64_t w,
                            double rate_or_sigma, std::int64_t kernel_size,
                            std::int64_t repeats, std::uint64_t seed = 42) {
  if (repeats < 5) throw UsageError("bench: repeats must be >= 5");

  Rng rng(seed);
  Tensor4 x = Tensor4::gaussian(n, c, h, w, 0.0f, 1.0f, rng);

  BenchReport rep;
  rep.n = n;
  rep.c = c;
  rep.h = h;
  rep.w = w;
  rep.k = kernel_size;

  std::function<Tensor4()> run;
  char summary[48];
  if (op == BenchOp::kFdconv) {
    rep.op = "fdconv";
    ConvWeights wts =
        ConvWeights::gaussian(c, c, kernel_size, 0.0f, 0.05f, rng);
    Grid2 rate(h, w, static_cast<float>(rate_or_sigma));
    std::snprintf(summary, sizeof(summary), "rate=%g", rate_or_sigma);
    run = [x, wts, rate] { return fdconv_forward(x, wts, rate); };
  } else if (op == BenchOp::kDilatedRef) {
    rep.op = "dilated_ref";
    ConvWeights wts =
        ConvWeights::gaussian(c, c, kernel_size, 0.0f, 0.05f, rng);
    const std::int64_t r = static_cast<std::int64_t>(rate_or_sigma);
    std::snprintf(summary, sizeof(summary), "rate=%lld",
                  static_cast<long long>(r));
    run = [x, wts, r] { return dilated_conv_ref(x, wts, r); };
  } else {
    rep.op = "pgc";
    Grid2 sigma(h, w, static_cast<float>(rate_or_sigma));
    std::snprintf(summary, sizeof(summary), "sigma=%g", rate_or_sigma);
    run = [x, sigma, kernel_size] {
      return pgc_smooth_forward(x, sigma, kernel_size);
    };
  }
  rep.rate_summary = summary;

  Tensor4 out = run();  // warmup, also provides the checksum
  rep.checksum = detail::fnv1a64(out.data.data(), out.data.size());

  std::vector<double> times_ms;
  times_ms.reserve(static_cast<std::size_t>(repeats));
  for (std::int64_t i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Tensor4 y = run();
    const auto t1 = std::chrono::steady_clock::now();
    if (detail::fnv1a64(y.data.data(), y.data.size()) != rep.checksum)
      throw DataError("bench: nondeterministic operator output");
    times_ms.push_back(
        std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(times_ms.begin(), times_ms.end());
  rep.median_ms = detail::nearest_rank_ms(times_ms, 0.5);
  rep.p10_ms = detail::nearest_rank_ms(times_ms, 0.1);
  rep.p90_ms = detail::nearest_rank_ms(times_ms, 0.9);
  return rep;
}

inline std::string bench_csv_header() {
  return "op,n,c,h,w,k,rate_summary,median_ms,p10_ms,p90_ms,checksum";
}

inline std::string bench_csv_row(const BenchReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "%s,%lld,%lld,%lld,%lld,%lld,%s,%.4f,%.4f,%.4f,%016llx",
                r.op.c_str(), static_cast<long long>(r.n),
                static_cast<long long>(r.c), static_cast<long long>(r.h),
                static_cast<long long>(r.w), static_cast<long long>(r.k),
                r.rate_summary.c_str(), r.median_ms, r.p10_ms, r.p90_ms,
                static_cast<unsigned long long>(r.checksum));
  return buf;
}

}  // namespace pfc
