#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "pfc/tensor.hpp"

namespace pfc {

/// Mean absolute error and root-mean-square error over per-image counts.
inline std::pair<double, double> mae_rmse(const std::vector<double>& preds,
                                          const std::vector<double>& gts) {
  if (preds.empty() || preds.size() != gts.size())
    throw UsageError("mae_rmse: need equal nonzero-length count lists");
  double abs_acc = 0.0, sq_acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = gts[i] - preds[i];
    abs_acc += std::abs(d);
    sq_acc += d * d;
  }
  const double n = static_cast<double>(preds.size());
  return {abs_acc / n, std::sqrt(sq_acc / n)};
}

/// Grid Average Mean absolute Error: partition the map into 2^L x 2^L cells
/// and sum the absolute per-cell count differences. Cell boundaries are
/// proportional (floor(i * extent / 2^L)), which makes every level a
/// refinement of the previous one, so GAME is monotone in L; GAME(0) is the
/// plain absolute count error.
inline double game(const Grid2& pred, const Grid2& gt, int level) {
  if (!pred.same_shape(gt)) throw UsageError("game: shape mismatch");
  if (level < 0) throw UsageError("game: level must be >= 0");
  const std::int64_t cells = std::int64_t{1} << level;
  double acc = 0.0;
  for (std::int64_t ci = 0; ci < cells; ++ci) {
    const std::int64_t r0 = ci * pred.h / cells;
    const std::int64_t r1 = (ci + 1) * pred.h / cells;
    for (std::int64_t cj = 0; cj < cells; ++cj) {
      const std::int64_t c0 = cj * pred.w / cells;
      const std::int64_t c1 = (cj + 1) * pred.w / cells;
      double diff = 0.0;
      for (std::int64_t i = r0; i < r1; ++i)
        for (std::int64_t j = c0; j < c1; ++j)
          diff += static_cast<double>(pred.at(i, j)) - gt.at(i, j);
      acc += std::abs(diff);
    }
  }
  return acc;
}

}  // namespace pfc
