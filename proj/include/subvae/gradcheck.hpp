#pragma once

// Finite-difference gradient checking. The analytic gradient comes from the
// tape; the numeric one from central differences re-evaluated in double
// precision.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "subvae/ops.hpp"
#include "subvae/tensor.hpp"

namespace subvae {

struct GradCheckOptions {
  double eps = 1e-3;
  std::size_t max_coords_per_tensor = 16;
  std::uint64_t seed = 0;
  // Skip coordinates whose perturbation flips a leaky_relu input sign; the
  // central difference is not a derivative there. Further coordinates are
  // drawn in their place.
  bool skip_kinks = false;
};

struct GradCheckResult {
  double max_relative_error = 0;
  std::string worst_tensor;
  Index worst_index = -1;
  double worst_analytic = 0;
  double worst_numeric = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

namespace detail {

// All indices in random order; callers take as many as they need.
inline std::vector<Index> shuffled_coords(Index n, std::mt19937_64& rng) {
  std::vector<Index> coords(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
  std::shuffle(coords.begin(), coords.end(), rng);
  return coords;
}

template <typename T, typename LossFn>
std::vector<std::vector<double>> analytic_gradients(LossFn& loss_fn, std::vector<Tensor<T>>& params) {
  for (auto& p : params) p.zero_grad();
  clear_tape<T>();
  Tensor<T> loss = loss_fn();
  backward(loss);
  std::vector<std::vector<double>> grads;
  for (auto& p : params) {
    auto g = p.grad();
    grads.emplace_back(g.begin(), g.end());
  }
  clear_tape<T>();
  return grads;
}

}  // namespace detail

/// Compares analytic gradients of `analytic_fn` (over `analytic_params`) with
/// central differences of `numeric_fn` (over `numeric_params`, a double
/// precision copy with the same layout). Both functions must close over the
/// tensors they are given.
template <typename T, typename AnalyticFn, typename NumericFn>
GradCheckResult grad_check_mixed(AnalyticFn analytic_fn, std::vector<Tensor<T>> analytic_params,
                                 NumericFn numeric_fn, std::vector<Tensor<double>> numeric_params,
                                 const GradCheckOptions& opts,
                                 const std::vector<std::string>& names = {}) {
  auto grads = detail::analytic_gradients(analytic_fn, analytic_params);
  std::mt19937_64 rng(opts.seed);
  GradCheckResult result;
  NoGradGuard no_grad;
  KinkMonitor monitor;
  auto evaluate = [&](std::uint64_t& signature) {
    monitor.reset();
    const double value = numeric_fn().item();
    signature = monitor.signature();
    return value;
  };
  std::uint64_t base_signature = 0;
  if (opts.skip_kinks) evaluate(base_signature);
  for (std::size_t t = 0; t < numeric_params.size(); ++t) {
    auto& param = numeric_params[t];
    std::size_t taken = 0, attempts = 0;
    for (Index i : detail::shuffled_coords(param.numel(), rng)) {
      if (taken == opts.max_coords_per_tensor || attempts++ == 8 * opts.max_coords_per_tensor) {
        break;
      }
      double& slot = param.data()[static_cast<std::size_t>(i)];
      const double saved = slot;
      std::uint64_t sig_plus = 0, sig_minus = 0;
      slot = saved + opts.eps;
      const double plus = evaluate(sig_plus);
      slot = saved - opts.eps;
      const double minus = evaluate(sig_minus);
      slot = saved;
      if (opts.skip_kinks && (sig_plus != base_signature || sig_minus != base_signature)) {
        ++result.skipped;
        continue;
      }
      ++taken;
      const double numeric = (plus - minus) / (2 * opts.eps);
      const double analytic = grads[t][static_cast<std::size_t>(i)];
      const double err = relative_error(analytic, numeric);
      ++result.checked;
      if (err > result.max_relative_error || result.worst_index < 0) {
        result.max_relative_error = std::max(result.max_relative_error, err);
        if (err >= result.max_relative_error) {
          result.worst_tensor = t < names.size() ? names[t] : "#" + std::to_string(t);
          result.worst_index = i;
          result.worst_analytic = analytic;
          result.worst_numeric = numeric;
        }
      }
    }
  }
  return result;
}

/// Double-precision check of a loss against its own parameters.
template <typename LossFn>
GradCheckResult grad_check(LossFn loss_fn, std::vector<Tensor<double>> params,
                           const GradCheckOptions& opts,
                           const std::vector<std::string>& names = {}) {
  return grad_check_mixed<double>(loss_fn, params, loss_fn, params, opts, names);
}

}  // namespace subvae
