// SPDX-License-Identifier: Apache-2.0
#include "rshe/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rshe/error.hpp"
#include "rshe/rng.hpp"

namespace rshe {

EnergyProfile energy_profile(const PathBundle& bundle, double window_lo, double window_hi) {
  if (bundle.num_paths() == 0) throw DomainError("energy_profile: empty bundle");
  if (!(window_lo < window_hi)) throw DomainError("energy_profile: empty window");
  EnergyProfile out;
  out.window_lo = window_lo;
  out.window_hi = window_hi;
  std::vector<double> col(bundle.num_paths()), lx, ly;
  const double slack = 1e-9 * bundle.step();
  for (std::size_t n = 0; n <= bundle.num_steps(); ++n) {
    for (std::size_t p = 0; p < bundle.num_paths(); ++p) col[p] = bundle.energy(p, n);
    const auto e = estimate(col);
    const double t = bundle.time(n);
    out.rows.push_back({t, e.mean, e.std_error});
    if (t > 0.0 && t >= window_lo - slack && t <= window_hi + slack && e.mean > 0.0) {
      lx.push_back(std::log(t));
      ly.push_back(std::log(e.mean));
    }
  }
  out.window_points = lx.size();
  if (lx.size() < 2) throw DomainError("energy_profile: fewer than two mesh times in the window");
  out.fit = fit_line(lx, ly);
  return out;
}

ExpMomentReport exp_moment(const PathBundle& bundle, double eps) {
  if (!(eps > 0.0)) throw DomainError("exp_moment: eps must be positive");
  if (bundle.num_paths() == 0) throw DomainError("exp_moment: empty bundle");
  ExpMomentReport r;
  std::vector<double> sup(bundle.num_paths(), 0.0);
  for (std::size_t p = 0; p < bundle.num_paths(); ++p) {
    for (std::size_t n = 0; n <= bundle.num_steps(); ++n) sup[p] = std::max(sup[p], bundle.norm_sq(p, n));
    r.max_sup_norm_sq = std::max(r.max_sup_norm_sq, sup[p]);
  }
  if (eps * r.max_sup_norm_sq > std::log(std::numeric_limits<double>::max()) - 10.0) {
    r.overflow = true;
    r.message = "eps above empirical radius: exp(eps * " + std::to_string(r.max_sup_norm_sq) + ") overflows";
    return r;
  }
  std::vector<double> v(sup.size());
  for (std::size_t p = 0; p < sup.size(); ++p) v[p] = std::exp(eps * sup[p]);
  r.estimate = estimate(v);
  const std::size_t half = std::max<std::size_t>(1, v.size() / 2);
  r.half_estimate = estimate(std::span<const double>(v.data(), half));
  r.relative_change = std::abs(r.estimate.mean - r.half_estimate.mean) / r.estimate.mean;
  return r;
}

namespace {

std::vector<double> distance_ratio(const QuantileField& a, const QuantileField& b, const DriftField& v,
                                   const GronwallSpec& spec, double h, std::vector<double>* times) {
  SimulationSpec sim;
  sim.horizon = spec.horizon;
  sim.h = h;
  sim.paths = 1;
  sim.noise = spec.noise;
  sim.stream_tag = spec.stream_tag;
  sim.store_states = true;
  const auto ba = simulate(a, &v, sim);
  const auto bb = simulate(b, &v, sim);
  const double d0 = l2_distance(a.values(), b.values());
  std::vector<double> r;
  for (std::size_t n = 0; n <= ba.num_steps(); ++n) {
    r.push_back(d0 > 0.0 ? l2_distance(ba.state(0, n), bb.state(0, n)) / d0 : 0.0);
    if (times != nullptr) times->push_back(ba.time(n));
  }
  return r;
}

}  // namespace

GronwallReport stability_gronwall(const QuantileField& x0a, const QuantileField& x0b, const DriftField& v,
                                  const GronwallSpec& spec) {
  if (x0a.size() != x0b.size()) throw DimensionError("stability_gronwall: grid sizes differ");
  GronwallReport r;
  r.c_v = v.lipschitz();
  r.ratio = distance_ratio(x0a, x0b, v, spec, spec.h, &r.t);
  if (spec.refine) {
    const auto fine = distance_ratio(x0a, x0b, v, spec, 0.5 * spec.h, nullptr);
    if (fine.back() > 0.0) r.eps_h = std::abs(r.ratio.back() - fine.back()) / fine.back();
  }
  r.bound_at_horizon = std::exp(r.c_v * spec.horizon) * (1.0 + spec.envelope);
  r.within_bound = true;
  r.non_increasing = true;
  for (std::size_t n = 0; n < r.ratio.size(); ++n) {
    if (r.ratio[n] > std::exp(r.c_v * r.t[n]) * (1.0 + spec.envelope)) r.within_bound = false;
    if (n > 0 && r.ratio[n] > r.ratio[n - 1] * (1.0 + 1e-12)) r.non_increasing = false;
  }
  return r;
}

double median_indicator(const QuantileField& q) { return q[q.size() / 2] >= 0.0 ? 1.0 : 0.0; }

SmoothingReport smoothing_probe(const Functional& phi, const SmoothingSpec& spec) {
  if (spec.step_counts.size() < 2) throw DomainError("smoothing_probe: need at least two times");
  if (spec.paths < 2 || spec.trials == 0) throw DomainError("smoothing_probe: need paths >= 2 and trials >= 1");
  const std::size_t m = spec.grid_size;
  const std::size_t mid = m / 2;
  const double x_mid = grid_node(mid, m);
  std::vector<double> base(m);
  for (std::size_t i = 0; i < m; ++i) base[i] = spec.base_slope * (grid_node(i, m) - x_mid);

  SmoothingReport out;
  std::vector<double> lx, ly;
  for (const auto steps : spec.step_counts) {
    if (steps == 0) throw DomainError("smoothing_probe: times must be positive");
    const double t = static_cast<double>(steps) * spec.h;
    SmoothingRow row;
    row.t = t;
    for (std::size_t trial = 0; trial < spec.trials; ++trial) {
      for (int kind = 0; kind < 2; ++kind) {
        std::vector<double> other(base);
        if (kind == 0) {
          const double w = spec.bump_width * std::sqrt(t);
          std::vector<double> bump(m);
          for (std::size_t i = 0; i < m; ++i) {
            const double z = (grid_node(i, m) - x_mid) / w;
            bump[i] = std::exp(-0.5 * z * z);
          }
          // Keep the perturbed law monotone: the bump's steepest descent is a
          // fraction of the base slope.
          double steep = 0.0;
          for (std::size_t i = 0; i + 1 < m; ++i) steep = std::max(steep, std::abs(bump[i + 1] - bump[i]));
          steep *= 2.0 * static_cast<double>(m);
          const double height = steep > 0.0 ? spec.bump_fraction * spec.base_slope / steep : 0.0;
          for (std::size_t i = 0; i < m; ++i) other[i] += height * bump[i];
        } else {
          const double d = spec.shift_scale * std::sqrt(t);
          for (auto& v : other) v += d;
        }
        const QuantileField qa(base), qb(rearrange(std::move(other)));
        const double w2 = w2_distance(qa, qb);
        if (!(w2 > 0.0)) continue;
        SimulationSpec sim;
        sim.horizon = t;
        sim.h = spec.h;
        sim.paths = spec.paths;
        sim.noise = spec.noise;
        sim.stream_tag = mix_stream_id({0x5300, trial});
        sim.threads = spec.threads;
        std::vector<double> fa(spec.paths), fb(spec.paths);
        simulate(qa, nullptr, sim, [&](std::size_t p, std::size_t node, const QuantileField& s) {
          if (node == steps) fa[p] = phi(s);
        });
        simulate(qb, nullptr, sim, [&](std::size_t p, std::size_t node, const QuantileField& s) {
          if (node == steps) fb[p] = phi(s);
        });
        std::vector<double> diff(spec.paths);
        for (std::size_t p = 0; p < spec.paths; ++p) diff[p] = fa[p] - fb[p];
        const auto e = estimate(diff);
        const double lip = std::abs(e.mean) / w2;
        if (lip >= row.lip_hat) {
          row.lip_hat = lip;
          row.std_error = e.std_error / w2;
          row.w2 = w2;
        }
      }
    }
    out.rows.push_back(row);
    if (row.lip_hat > 0.0) {
      lx.push_back(std::log(t));
      ly.push_back(std::log(row.lip_hat));
    }
  }
  if (lx.size() >= 2) out.fit = fit_line(lx, ly);
  return out;
}

}  // namespace rshe
