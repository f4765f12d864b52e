// SPDX-License-Identifier: Apache-2.0
//
// Checks of the a priori estimates: gradient energy decay, exponential
// moments, L2 stability under shared noise and the smoothing rate of the
// driftless semigroup.
#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "rshe/drift_field.hpp"
#include "rshe/rshe_solver.hpp"
#include "rshe/spectral_noise.hpp"
#include "rshe/statistics.hpp"

namespace rshe {

struct EnergyRow {
  double t = 0.0;
  double mean = 0.0;  // ensemble mean of ||grad X_t||^2
  double std_error = 0.0;
};

struct EnergyProfile {
  std::vector<EnergyRow> rows;
  LineFit fit;  // log(mean) ~ slope log(t) over the window
  double window_lo = 0.0;
  double window_hi = 0.0;
  std::size_t window_points = 0;
};

// Window bounds are times; rows with t in [lo, hi] (and t > 0) enter the fit.
EnergyProfile energy_profile(const PathBundle& bundle, double window_lo, double window_hi);

struct ExpMomentReport {
  Estimate estimate;        // E exp(eps sup_t ||X_t||^2)
  Estimate half_estimate;   // same on the first half of the paths
  double relative_change = 0.0;
  double max_sup_norm_sq = 0.0;
  bool overflow = false;
  std::string message;
};

// Never throws on overflow: the report is flagged instead.
ExpMomentReport exp_moment(const PathBundle& bundle, double eps);

struct GronwallSpec {
  double horizon = 0.5;
  double h = 1e-3;
  NoiseModel noise;
  double envelope = 0.05;  // allowed (1 + eps_h) slack on exp(C_V t)
  bool refine = true;      // also run at h / 2 and report eps_h
  std::uint64_t stream_tag = 0;
};

struct GronwallReport {
  std::vector<double> t;
  std::vector<double> ratio;  // ||X_t - X'_t|| / ||X_0 - X'_0||
  double c_v = 0.0;
  double eps_h = 0.0;         // |r_T(h) - r_T(h/2)| / r_T(h/2)
  double bound_at_horizon = 0.0;
  bool within_bound = false;  // r(t) <= exp(C_V t)(1 + envelope) for all t
  bool non_increasing = false;
};

GronwallReport stability_gronwall(const QuantileField& x0a, const QuantileField& x0b, const DriftField& v,
                                  const GronwallSpec& spec);

using Functional = std::function<double(const QuantileField&)>;

struct SmoothingSpec {
  std::size_t grid_size = 256;
  NoiseModel noise;
  double h = 1e-4;
  std::vector<std::size_t> step_counts{5, 10, 20, 35, 50};
  std::size_t paths = 2000;
  std::size_t trials = 3;
  double base_slope = 10.0;     // base law: slope * (x - x_{M/2})
  double bump_width = 0.5;      // bump width / sqrt(t)
  double bump_fraction = 0.1;   // bump height relative to the base slope
  double shift_scale = 0.3;     // shift / sqrt(t)
  std::size_t threads = 1;
};

struct SmoothingRow {
  double t = 0.0;
  double lip_hat = 0.0;
  double std_error = 0.0;
  double w2 = 0.0;  // separation of the maximising pair
};

struct SmoothingReport {
  std::vector<SmoothingRow> rows;
  LineFit fit;  // log(lip_hat) ~ slope log(t)
};

// Lip-hat(t) = max over probe pairs (mu, nu) of |P_t phi(mu) - P_t phi(nu)| / W2(mu, nu)
// with common random numbers. Pairs at time t are a localised bump and a
// shift of the base law, both at scale sqrt(t).
SmoothingReport smoothing_probe(const Functional& phi, const SmoothingSpec& spec);

// Indicator that the median node is >= 0.
double median_indicator(const QuantileField& q);

}  // namespace rshe
