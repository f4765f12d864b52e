// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rshe/quantile_space.hpp"
#include "rshe/statistics.hpp"

namespace rshe {

class PathBundle;

// Running cost f and terminal cost g with their x-derivatives. Derivatives
// must be bounded by bound_const(), non-decreasing in x, and jointly
// Lipschitz with constant lip_const() in (x, W2).
class CostModel {
 public:
  virtual ~CostModel() = default;

  virtual double f(double x, const DiscreteMeasure& mu) const = 0;
  virtual double g(double x, const DiscreteMeasure& mu) const = 0;
  virtual double dxf(double x, const DiscreteMeasure& mu) const = 0;
  virtual double dxg(double x, const DiscreteMeasure& mu) const = 0;

  virtual double lip_const() const = 0;
  virtual double bound_const() const = 0;
  virtual std::string name() const = 0;

  // Section x -> d_x f(state(x), Leb o state^{-1}) over the grid. The
  // default builds the empirical measure; families override it.
  virtual void dxf_section(const QuantileField& state, std::span<double> out) const;
  virtual void dxg_section(const QuantileField& state, std::span<double> out) const;
  // f and g at arbitrary points y_i under the law of `state`.
  virtual void f_at(std::span<const double> y, const QuantileField& state, std::span<double> out) const;
  virtual void g_at(std::span<const double> y, const QuantileField& state, std::span<double> out) const;
};

// f = g = 0.
std::shared_ptr<const CostModel> make_zero_cost();

// d_x f = kappa_f, d_x g = kappa_g (f = kappa_f x, g = kappa_g x).
std::shared_ptr<const CostModel> make_constant_cost(double kappa_f, double kappa_g);

// d_x f = tanh(a x + b m1(mu)), d_x g = tanh(c_g x + b_g m1(mu)); f and g are
// the antiderivatives vanishing at x = 0. Negative b, b_g give couplings that
// are not Lasry-Lions monotone.
std::shared_ptr<const CostModel> make_tanh_family(double a, double b, double c_g, double b_g);

// d_x f = d_x g = clamp(a x + b m1(mu), -clip, clip). Displacement monotone
// inside the clip range when a >= |b|.
std::shared_ptr<const CostModel> make_clipped_linear_family(double a, double b, double clip);

struct CostInvariantReport {
  double max_abs_derivative = 0.0;
  std::size_t monotonicity_violations = 0;
  double max_lipschitz_ratio = 0.0;
  double max_growth_ratio = 0.0;  // |f| / (1 + x^2 + m2)^(1/2), same for g
  bool ok = false;
};

// Sampled checks of boundedness, x-monotonicity and the joint Lipschitz bound.
CostInvariantReport check_cost_invariants(const CostModel& model, std::size_t samples,
                                          std::uint64_t seed);

// gamma_t(x) over (path, step, node); Gamma is reconstructed by cumulative
// sums.
class ControlPath {
 public:
  ControlPath(std::size_t num_paths, std::size_t num_steps, std::size_t grid_size);

  std::size_t num_paths() const noexcept { return paths_; }
  std::size_t num_steps() const noexcept { return steps_; }
  std::size_t grid_size() const noexcept { return grid_; }

  std::span<double> at(std::size_t path, std::size_t step);
  std::span<const double> at(std::size_t path, std::size_t step) const;

  // Gamma at node n: sum_{m < n} gamma_m h (n = 0..num_steps).
  std::vector<double> integrated(std::size_t path, std::size_t node, double h) const;

 private:
  std::size_t paths_;
  std::size_t steps_;
  std::size_t grid_;
  std::vector<double> data_;
};

// J = E int_S [ g(Gamma_T, mu_T) + sum_n f(Gamma_n, mu_n) h + sum_n (1/2) gamma_n^2 h ] dx
// with Gamma_n = X_n + sum_{m < n} (gamma_m + V_m) h. The f term uses the
// right-endpoint rule (n = 1..N), the control term the left one (n = 0..N-1).
// The environment must store states and drift sections.
Estimate cost_J(const ControlPath& gamma, const PathBundle& env, const CostModel& model);

struct DisplacementReport {
  double min_f = 0.0;
  double mean_f = 0.0;
  double min_g = 0.0;
  double mean_g = 0.0;
  bool monotone = false;
};

// Samples coupled pairs (X, X') of equal-size empirical random variables and
// evaluates E[(X - X')(d_x f(X, L(X)) - d_x f(X', L(X')))] (and for g).
DisplacementReport displacement_check(const CostModel& model, std::size_t n_pairs,
                                      std::uint64_t seed, std::size_t sample_size = 64,
                                      double spread = 1.0);

}  // namespace rshe
