// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctxda/error.hpp"
#include "ctxda/matrix.hpp"
#include "ctxda/rng.hpp"

namespace ctxda {

struct GradCheckResult {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t coordinates_checked = 0;
  // Location of the worst coordinate.
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps gradients that are
/// below finite-difference roundoff (about eps * |loss| / h) from
/// dominating the maximum.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares analytic gradients with central differences
/// (f(w+h) - f(w-h)) / 2h on at least `samples` coordinates (all of them
/// when there are fewer), chosen with `rng`. Parameters are restored
/// exactly afterwards.
template <typename LossFn>
GradCheckResult finite_difference_check(LossFn&& loss, std::span<Matrix<double>* const> params,
                                        std::span<const Matrix<double>> analytic, Rng& rng,
                                        double h = 1e-5, std::size_t samples = 100,
                                        double floor = 1e-8) {
  if (params.size() != analytic.size()) {
    throw ShapeError("finite_difference_check: parameter/gradient count mismatch");
  }
  std::size_t total = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i], analytic[i], "finite_difference_check");
    total += params[i]->size();
  }

  const double base = loss();
  if (loss() != base) {
    throw NumericError("finite_difference_check: loss is not deterministic");
  }

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  coords.reserve(total);
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = 0; j < params[i]->size(); ++j) coords.emplace_back(i, j);
  }
  if (coords.size() > samples) {
    rng.shuffle(std::span(coords));
    coords.resize(samples);
    std::sort(coords.begin(), coords.end());
  }

  GradCheckResult result;
  for (auto [ti, j] : coords) {
    double& w = (*params[ti])[j];
    const double saved = w;
    w = saved + h;
    const double plus = loss();
    w = saved - h;
    const double minus = loss();
    w = saved;
    const double numeric = (plus - minus) / (2.0 * h);
    const double a = analytic[ti][j];
    const double err = relative_error(a, numeric, floor);
    ++result.coordinates_checked;
    result.max_absolute_error = std::max(result.max_absolute_error, std::abs(a - numeric));
    if (err > result.max_relative_error || result.coordinates_checked == 1) {
      result.max_relative_error = std::max(err, result.max_relative_error);
      result.worst_tensor = ti;
      result.worst_index = j;
      result.worst_analytic = a;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

}  // namespace ctxda
