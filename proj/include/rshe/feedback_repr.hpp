// SPDX-License-Identifier: Apache-2.0
//
// Distributed form of a feedback field: u(t, y, mu) = U(t, F_mu(y) / 2, mu),
// a function of the player's position and the population law only.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rshe/drift_field.hpp"
#include "rshe/quantile_space.hpp"
#include "rshe/rshe_solver.hpp"

namespace rshe {

// Grid index used for position y under the law q: the node just below
// F(y) / 2, clamped to [0, M-1]. For a strictly increasing q, y = q[i] maps
// back to i.
std::size_t tilde_u_index(const QuantileField& q, double y);

// Value of a stored section at the re-indexed node.
double tilde_u_eval(std::span<const double> section, const QuantileField& q, double y);
double tilde_u_eval(const DriftField& u, double t, double y, const QuantileField& q);
double tilde_u_eval(const DriftField& u, double t, double y, const DiscreteMeasure& mu, std::size_t grid_size);

// Fraction of coinciding pairs (i, j), 1/M for distinct values, 1 for a
// constant field.
double atom_diagnostic(const QuantileField& q);
double atom_diagnostic(std::span<const double> sorted_values);

struct RepresentationSample {
  std::size_t path = 0;
  std::size_t node = 0;
  double t = 0.0;
  double residual = 0.0;     // max_i |U_i - u(X_i)|
  double oscillation = 0.0;  // max_i |U_{i+1} - U_i|
  double atoms = 0.0;        // atom_diagnostic of X_t
};

struct RepresentationRow {
  double t = 0.0;
  double mean = 0.0;
  double max = 0.0;
  double std_error = 0.0;
  double atom_mean = 0.0;
};

struct RepresentationProfile {
  std::vector<RepresentationSample> samples;
  std::vector<RepresentationRow> rows;  // one per probed node
};

// Residual of U against its distributed form along a bundle generated under
// U. Uses the stored drift sections when present. Empty `nodes` probes every
// node.
RepresentationProfile representation_residual(const DriftField& u, const PathBundle& bundle,
                                              std::span<const std::size_t> nodes = {});

struct AtomStatistics {
  Estimate excess;  // atom_diagnostic - 1/M over (path, node >= 1)
  double max = 0.0;
  std::vector<double> per_node_mean;  // nodes 0..steps
};

AtomStatistics atom_statistics(const PathBundle& bundle);

}  // namespace rshe
