// SPDX-License-Identifier: Apache-2.0
#include "rshe/feedback_repr.hpp"

#include <algorithm>
#include <cmath>

#include "rshe/error.hpp"

namespace rshe {

std::size_t tilde_u_index(const QuantileField& q, double y) {
  if (!std::isfinite(y)) throw DomainError("tilde_u: non-finite position");
  // F(y)/2 = c / (2M) lies halfway between nodes c-1 and c; the lower one
  // is the node whose value is y when q is strictly increasing.
  const std::size_t c = count_at_or_below(q, y);
  return c == 0 ? 0 : std::min(c - 1, q.size() - 1);
}

double tilde_u_eval(std::span<const double> section, const QuantileField& q, double y) {
  if (section.size() != q.size()) throw DimensionError("tilde_u: section and law have different grids");
  return section[tilde_u_index(q, y)];
}

double tilde_u_eval(const DriftField& u, double t, double y, const QuantileField& q) {
  const auto s = u.eval(t, q);
  return tilde_u_eval(s.values(), q, y);
}

double tilde_u_eval(const DriftField& u, double t, double y, const DiscreteMeasure& mu, std::size_t grid_size) {
  return tilde_u_eval(u, t, y, quantile_from_measure(mu, grid_size));
}

double atom_diagnostic(const QuantileField& q) { return tie_fraction(q.values()); }

double atom_diagnostic(std::span<const double> sorted_values) {
  for (std::size_t i = 1; i < sorted_values.size(); ++i) {
    if (sorted_values[i] < sorted_values[i - 1]) throw DomainError("atom_diagnostic: values are not sorted");
  }
  return tie_fraction(sorted_values);
}

RepresentationProfile representation_residual(const DriftField& u, const PathBundle& bundle,
                                              std::span<const std::size_t> nodes) {
  if (!bundle.has_states()) throw DomainError("representation_residual: bundle must store states");
  std::vector<std::size_t> probe(nodes.begin(), nodes.end());
  if (probe.empty()) {
    for (std::size_t n = 0; n <= bundle.num_steps(); ++n) probe.push_back(n);
  }
  const std::size_t m = bundle.grid_size();
  RepresentationProfile out;
  for (const auto n : probe) {
    if (n > bundle.num_steps()) throw DimensionError("representation_residual: node out of range");
    std::vector<double> res(bundle.num_paths());
    double atoms = 0.0;
    for (std::size_t p = 0; p < bundle.num_paths(); ++p) {
      const auto q = bundle.state_field(p, n);
      std::vector<double> sec;
      if (bundle.has_drift() && n < bundle.num_steps()) {
        const auto d = bundle.drift(p, n);
        sec.assign(d.begin(), d.end());
      } else {
        const auto s = u.eval(bundle.time(n), q);
        sec.assign(s.values().begin(), s.values().end());
      }
      RepresentationSample smp;
      smp.path = p;
      smp.node = n;
      smp.t = bundle.time(n);
      for (std::size_t i = 0; i < m; ++i) {
        smp.residual = std::max(smp.residual, std::abs(sec[i] - tilde_u_eval(sec, q, q[i])));
        if (i + 1 < m) smp.oscillation = std::max(smp.oscillation, std::abs(sec[i + 1] - sec[i]));
      }
      smp.atoms = atom_diagnostic(q);
      res[p] = smp.residual;
      atoms += smp.atoms;
      out.samples.push_back(smp);
    }
    const auto e = estimate(res);
    out.rows.push_back({bundle.time(n), e.mean, *std::max_element(res.begin(), res.end()), e.std_error,
                        atoms / static_cast<double>(bundle.num_paths())});
  }
  return out;
}

AtomStatistics atom_statistics(const PathBundle& bundle) {
  if (bundle.num_steps() == 0) throw DomainError("atom_statistics: bundle has no steps");
  const double floor = 1.0 / static_cast<double>(bundle.grid_size());
  AtomStatistics s;
  s.per_node_mean.assign(bundle.num_steps() + 1, 0.0);
  std::vector<double> excess;
  for (std::size_t p = 0; p < bundle.num_paths(); ++p) {
    for (std::size_t n = 0; n <= bundle.num_steps(); ++n) {
      const double a = bundle.tie_fraction(p, n);
      s.per_node_mean[n] += a / static_cast<double>(bundle.num_paths());
      if (n == 0) continue;
      excess.push_back(a - floor);
      s.max = std::max(s.max, a);
    }
  }
  s.excess = estimate(excess);
  return s;
}

}  // namespace rshe
