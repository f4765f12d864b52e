// SPDX-License-Identifier: Apache-2.0
#include "rshe/mfg_fixed_point.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>
#include <json.hpp>

#include "rshe/error.hpp"
#include "rshe/parallel.hpp"

namespace rshe {

namespace {

double block_limit(double block, double lipschitz) {
  const auto r = contraction_admissible(block, lipschitz);
  return std::min(r.c, r.log_bound);
}

QuantileField to_field(std::span<const double> v) { return QuantileField(std::vector<double>(v.begin(), v.end())); }

// Scenarios that sit on the same law (all of them at the first node) carry
// one section: the pooled mean over their inner paths. Equal sample sizes
// make that the plain mean of the per-scenario means.
void pool_coinciding(NodeTable& table) {
  const std::size_t n = table.scenarios.size();
  std::vector<bool> done(n, false);
  for (std::size_t s = 0; s < n; ++s) {
    if (done[s]) continue;
    std::vector<std::size_t> group{s};
    for (std::size_t r = s + 1; r < n; ++r) {
      if (!done[r] && table.scenarios[r] == table.scenarios[s]) group.push_back(r);
    }
    if (group.size() == 1) continue;
    const std::size_t m = table.sections[s].size();
    std::vector<double> sec(m, 0.0);
    for (const auto r : group) {
      for (std::size_t i = 0; i < m; ++i) sec[i] += table.sections[r][i];
    }
    for (auto& v : sec) v /= static_cast<double>(group.size());
    for (const auto r : group) {
      table.sections[r] = sec;
      done[r] = true;
    }
  }
}

}  // namespace

ContractionReport contraction_admissible(double block, double lipschitz) {
  if (!(block >= 0.0) || !(lipschitz >= 0.0)) throw DomainError("contraction_admissible: negative input");
  ContractionReport r;
  r.block = block;
  r.lipschitz = lipschitz;
  const double k = lipschitz * (1.0 + block);
  r.c = k > 0.0 ? 1.0 / (8.0 * k) : std::numeric_limits<double>::infinity();
  r.c_c = std::sqrt(2.0 * k);
  r.log_bound = std::numbers::ln2 / (1.0 + 2.0 * r.c_c * r.c_c);
  r.admissible = block <= std::min(r.c, r.log_bound);
  return r;
}

double admissible_block_length(double lipschitz, double h, double safety) {
  if (!(h > 0.0)) throw DomainError("admissible_block_length: h must be positive");
  if (!(safety > 0.0 && safety <= 1.0)) throw DomainError("admissible_block_length: safety must be in (0, 1]");
  const double start = safety * block_limit(0.0, lipschitz);
  auto k = static_cast<std::size_t>(std::floor(std::min(start, 1e9 * h) / h));
  while (k > 2 && static_cast<double>(k) * h > safety * block_limit(static_cast<double>(k) * h, lipschitz)) --k;
  return static_cast<double>(std::max<std::size_t>(k, 2)) * h;
}

std::vector<std::vector<double>> costate_samples(const DriftField& v, const DriftField* terminal,
                                                 const QuantileField& start, std::uint64_t start_node,
                                                 std::uint64_t end_node, const CostModel& model,
                                                 const SimulationSpec& base,
                                                 std::span<const std::uint64_t> stream_ids) {
  if (end_node < start_node) throw DomainError("costate_samples: end before start");
  const std::size_t m = start.size();
  const std::size_t steps = end_node - start_node;
  SimulationSpec spec = base;
  spec.start_node = start_node;
  spec.horizon = static_cast<double>(steps) * spec.h;
  spec.store_states = false;
  spec.store_drift = false;
  if (!stream_ids.empty()) spec.paths = stream_ids.size();
  std::vector<std::vector<double>> y(spec.paths, std::vector<double>(m, 0.0));
  const double t_end = static_cast<double>(end_node) * spec.h;
  auto observer = [&](std::size_t p, std::size_t node, const QuantileField& state) {
    thread_local std::vector<double> buf;
    buf.resize(m);
    auto& row = y[p];
    if (node >= 1) {
      model.dxf_section(state, buf);
      for (std::size_t i = 0; i < m; ++i) row[i] += spec.h * buf[i];
    }
    if (node == steps) {
      if (terminal != nullptr) {
        const auto u = terminal->eval(t_end, state);
        for (std::size_t i = 0; i < m; ++i) row[i] += u[i];
      } else {
        model.dxg_section(state, buf);
        for (std::size_t i = 0; i < m; ++i) row[i] += buf[i];
      }
    }
  };
  simulate(start, &v, spec, observer, stream_ids);
  return y;
}

PhiEstimate apply_phi(const DriftField& v, double t, const QuantileField& mu, const CostModel& model,
                      const PhiParams& params) {
  if (params.paths == 0) throw ValidationError("apply_phi: at least one path is required");
  const double r_start = std::round(t / params.h);
  const double r_end = std::round(params.horizon / params.h);
  if (std::abs(r_start * params.h - t) > 1e-9 * std::max(1.0, t) ||
      std::abs(r_end * params.h - params.horizon) > 1e-9 * std::max(1.0, params.horizon)) {
    throw ValidationError("apply_phi: t and the horizon must lie on the mesh");
  }
  if (r_start > r_end) throw DomainError("apply_phi: t beyond the horizon");
  SimulationSpec spec;
  spec.h = params.h;
  spec.paths = params.paths;
  spec.noise = params.noise;
  spec.dynamics = params.dynamics;
  spec.threads = params.threads;
  std::vector<std::uint64_t> ids(params.paths);
  for (std::size_t p = 0; p < ids.size(); ++p) ids[p] = mix_stream_id({params.stream_tag, p});
  const auto y = costate_samples(v, nullptr, mu, static_cast<std::uint64_t>(r_start),
                                 static_cast<std::uint64_t>(r_end), model, spec, ids);
  const std::size_t m = mu.size();
  std::vector<double> mean(m), se(m), col(y.size());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < y.size(); ++p) col[p] = y[p][i];
    const auto e = estimate(col);
    mean[i] = e.mean;
    se[i] = e.std_error;
  }
  return {rearrange(std::move(mean)).as_grid_function(), std::move(se)};
}

PhiEstimate apply_phi(const DriftField& v, double t, const DiscreteMeasure& mu, std::size_t grid_size,
                      const CostModel& model, const PhiParams& params) {
  return apply_phi(v, t, quantile_from_measure(mu, grid_size), model, params);
}

double field_distance(const DriftField& a, const DriftField& b, std::span<const Probe> probes) {
  if (probes.empty()) throw DomainError("field_distance: empty probe set");
  double d = 0.0;
  for (const auto& pr : probes) {
    const auto sa = a.eval(pr.t, pr.mu);
    const auto sb = b.eval(pr.t, pr.mu);
    d = std::max(d, l2_distance(sa.values(), sb.values()));
  }
  return d;
}

std::size_t SolverConfig::num_steps() const {
  if (!(h > 0.0) || !(horizon > 0.0)) throw ValidationError("solver: horizon and h must be positive");
  const double r = std::round(horizon / h);
  if (r < 1.0 || std::abs(r * h - horizon) > 1e-12 * std::max(1.0, horizon)) {
    throw ValidationError("solver: h must divide the horizon");
  }
  return static_cast<std::size_t>(r);
}

void SolverConfig::validate() const {
  (void)num_steps();
  if (grid_size < 2) throw ValidationError("solver: grid size must be >= 2");
  if (dynamics == Dynamics::rshe) {
    noise.validate();
    if (noise.num_modes >= grid_size) throw ValidationError("solver: modes K must be below the grid size M");
  }
  if (!(picard_tol > 0.0) || !(sweep_tol > 0.0)) throw ValidationError("solver: tolerances must be positive");
  if (block_length < 0.0) throw ValidationError("solver: block length must be >= 0");
  if (!(safety > 0.0 && safety <= 1.0)) throw ValidationError("solver: safety factor must be in (0, 1]");
  if (max_picard == 0 || min_picard > max_picard) throw ValidationError("solver: bad Picard iteration bounds");
  if (max_sweeps == 0 || min_sweeps > max_sweeps) throw ValidationError("solver: bad sweep bounds");
  if (outer_scenarios == 0 || inner_paths == 0 || neighbors == 0) {
    throw ValidationError("solver: sample sizes and neighbour count must be positive");
  }
  if (regression_modes == 0 || regression_modes > grid_size) throw ValidationError("solver: bad regression modes");
  if (interpolation_modes > grid_size) throw ValidationError("solver: bad interpolation modes");
}

std::shared_ptr<const DriftField> make_initial_field(Initialization init, std::shared_ptr<const CostModel> model,
                                                     double horizon, double h) {
  if (init == Initialization::terminal) return make_terminal_bootstrap_field(std::move(model));
  const double bound = model->bound_const();
  const double lip = model->lip_const();
  const double cut = horizon - 0.5 * h;
  return std::make_shared<AnalyticField>(
      [model = std::move(model), cut](double t, const QuantileField& mu, std::span<double> out) {
        if (t >= cut) {
          model->dxg_section(mu, out);
        } else {
          std::fill(out.begin(), out.end(), 0.0);
        }
      },
      bound, lip, "zero-before-horizon");
}

std::vector<double> measure_features(std::span<const double> q, std::size_t modes) {
  const std::size_t m = q.size();
  std::vector<double> f(modes + 1, 0.0);
  f[0] = 1.0;
  for (std::size_t k = 0; k < modes; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += q[i] * basis_eval(k, grid_node(i, m));
    f[k + 1] = s / static_cast<double>(m);
  }
  return f;
}

ResidualAtNode regression_gap(const std::vector<std::vector<double>>& features,
                              const std::vector<std::vector<double>>& targets, double ridge) {
  const std::size_t n = features.size();
  if (n == 0 || targets.size() != n) throw DimensionError("regression_gap: row counts differ");
  const std::size_t p = features.front().size();
  const std::size_t m = targets.front().size();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  Eigen::MatrixXd y(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < p; ++c) x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = features[r][c];
    for (std::size_t c = 0; c < m; ++c) y(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = targets[r][c];
  }
  ResidualAtNode out;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  Eigen::MatrixXd beta;
  auto rank = static_cast<std::size_t>(qr.rank());
  if (rank < p) {
    const Eigen::MatrixXd xtx = x.transpose() * x;
    const double lambda = ridge * std::max(1.0, xtx.trace() / static_cast<double>(p));
    const Eigen::MatrixXd a = xtx + lambda * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    beta = a.ldlt().solve(x.transpose() * y);
    out.ridge = true;
  } else {
    beta = qr.solve(y);
  }
  const Eigen::MatrixXd fitted = x * beta;
  const double cells = static_cast<double>(n * m);
  out.gap = std::sqrt(fitted.squaredNorm() / cells);
  const double resid = (y - fitted).squaredNorm();
  rank = std::max<std::size_t>(rank, 1);
  if (n > rank) {
    const double sigma2 = resid / (static_cast<double>(n - rank) * static_cast<double>(m));
    out.noise_floor = std::sqrt(sigma2 * static_cast<double>(rank) / static_cast<double>(n));
  } else {
    out.noise_floor = std::sqrt(y.squaredNorm() / cells);
  }
  return out;
}

BlockResult picard_block(const TabulatedField& field, std::size_t first, std::size_t end,
                         std::span<const QuantileField> starts, const CostModel& model,
                         const SolverConfig& config, std::size_t sweep) {
  if (end <= first || end >= field.num_nodes()) throw DimensionError("picard_block: bad node range");
  if (starts.empty()) throw DimensionError("picard_block: no scenarios");
  const std::size_t len = end - first;
  const std::size_t scenarios = starts.size();
  const std::size_t m = field.grid_size();
  const double h = config.h;

  BlockLog log;
  log.sweep = sweep;
  log.first_node = first;
  log.end_node = end;
  log.delta = static_cast<double>(len) * h;
  log.constants = contraction_admissible(log.delta, model.lip_const());

  TabulatedField iterate = field;
  SimulationSpec base;
  base.h = h;
  base.noise = config.noise;
  base.dynamics = config.dynamics;
  base.threads = 1;

  std::vector<std::uint64_t> scenario_ids(scenarios);
  for (std::size_t s = 0; s < scenarios; ++s) scenario_ids[s] = mix_stream_id({kScenarioStreams, s});

  for (std::size_t it = 0; it < config.max_picard; ++it) {
    SimulationSpec lib_spec = base;
    lib_spec.horizon = static_cast<double>(len) * h;
    lib_spec.paths = scenarios;
    lib_spec.start_node = first;
    lib_spec.store_states = true;
    lib_spec.threads = config.threads;
    const PathBundle library = simulate(starts, &iterate, lib_spec, {}, scenario_ids);

    std::vector<std::shared_ptr<const NodeTable>> tables(len);
    std::vector<std::vector<std::vector<double>>> features(len);
    double distance = 0.0;
    double residual_sq = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      const std::size_t node = first + j;
      auto table = std::make_shared<NodeTable>();
      table->scenarios.resize(scenarios);
      table->sections.resize(scenarios);
      std::vector<std::vector<double>> feats(scenarios);
      parallel_for(scenarios, config.threads, [&](std::size_t s) {
        const auto lib_state = library.state(s, j);
        const QuantileField mu = to_field(lib_state);
        std::vector<std::uint64_t> ids(config.inner_paths);
        for (std::size_t p = 0; p < ids.size(); ++p) ids[p] = mix_stream_id({kInnerStreams, node, s, p});
        const auto y = costate_samples(iterate, &field, mu, node, end, model, base, ids);
        std::vector<double> mean(m, 0.0);
        for (const auto& row : y) {
          for (std::size_t i = 0; i < m; ++i) mean[i] += row[i];
        }
        for (auto& v : mean) v /= static_cast<double>(y.size());
        auto section = std::move(rearrange(std::move(mean))).release();
        feats[s] = measure_features(lib_state, config.regression_modes);
        table->scenarios[s].assign(lib_state.begin(), lib_state.end());
        table->sections[s] = std::move(section);
      });
      pool_coinciding(*table);
      features[j] = std::move(feats);
      tables[j] = std::move(table);
    }
    // d(V_{m+1}, V_m) with both fields evaluated on the new libraries. The
    // difference is also the estimate of E[Y - V_m | mu] whose unexplained
    // part is the iteration's residual.
    TabulatedField next = iterate;
    for (std::size_t j = 0; j < len; ++j) next.set_node(first + j, tables[j]);
    for (std::size_t j = 0; j < len; ++j) {
      const double t = static_cast<double>(first + j) * h;
      std::vector<double> dist(scenarios, 0.0);
      std::vector<std::vector<double>> gaps(scenarios);
      parallel_for(scenarios, config.threads, [&](std::size_t s) {
        const QuantileField mu = to_field(tables[j]->scenarios[s]);
        const auto a = next.eval(t, mu);
        const auto b = iterate.eval(t, mu);
        gaps[s].resize(m);
        for (std::size_t i = 0; i < m; ++i) gaps[s][i] = a[i] - b[i];
        dist[s] = l2_norm(gaps[s]);
      });
      distance = std::max(distance, *std::max_element(dist.begin(), dist.end()));
      const double gap = regression_gap(features[j], gaps, 1e-8).gap;
      residual_sq += gap * gap;
    }
    iterate = std::move(next);

    log.distances.push_back(distance);
    log.residuals.push_back(std::sqrt(residual_sq / static_cast<double>(len)));
    if (it >= 1) {
      const double prev = log.distances[it - 1];
      log.ratios.push_back(prev > 0.0 ? distance / prev : 0.0);
      if (it >= 2 && prev > 1e-13 && distance >= prev) {
        log.contraction_lost = true;
        return {std::move(tables), std::move(log)};
      }
    }
    if (distance < config.picard_tol && it + 1 >= config.min_picard) {
      log.converged = true;
      return {std::move(tables), std::move(log)};
    }
  }
  std::ostringstream msg;
  msg << "Picard iteration on nodes [" << first << ", " << end << ") did not reach tolerance "
      << config.picard_tol << " in " << config.max_picard << " iterations; last distance "
      << log.distances.back();
  throw PicardError(msg.str(), std::move(log));
}

SolveResult solve_equilibrium(std::shared_ptr<const CostModel> model, const QuantileField& x0,
                              const SolverConfig& config) {
  config.validate();
  if (x0.size() != config.grid_size) throw DimensionError("solve_equilibrium: initial state has the wrong grid size");
  const std::size_t steps = config.num_steps();
  const double h = config.h;
  const double lip = model->lip_const();
  const double delta = config.block_length > 0.0 ? config.block_length : admissible_block_length(lip, h, config.safety);
  auto block_steps = static_cast<std::size_t>(std::max(1.0, std::round(delta / h)));
  block_steps = std::min(block_steps, steps);

  SolveResult res;
  res.block_length = static_cast<double>(block_steps) * h;
  res.constants = contraction_admissible(res.block_length, lip);

  const auto init = make_initial_field(config.init, model, config.horizon, h);
  auto global = std::make_shared<TabulatedField>(h, steps + 1, config.grid_size, init,
                                                 InterpolationSpec{config.neighbors, config.interpolation,
                                                                   config.interpolation_modes});
  global->set_declared_bounds(model->bound_const() * (1.0 + config.horizon), res.constants.c_c);

  std::vector<std::uint64_t> ids(config.outer_scenarios);
  for (std::size_t s = 0; s < ids.size(); ++s) ids[s] = mix_stream_id({kScenarioStreams, s});
  bool halved = false;

  for (std::size_t sweep = 1; sweep <= config.max_sweeps; ++sweep) {
    SimulationSpec fwd;
    fwd.horizon = config.horizon;
    fwd.h = h;
    fwd.paths = config.outer_scenarios;
    fwd.noise = config.noise;
    fwd.dynamics = config.dynamics;
    fwd.threads = config.threads;
    fwd.store_states = true;
    const PathBundle forward = simulate(x0, global.get(), fwd, {}, ids);

    auto next = std::make_shared<TabulatedField>(*global);
    std::size_t end = steps;
    while (end > 0) {
      const std::size_t first = end > block_steps ? end - block_steps : 0;
      std::vector<QuantileField> starts;
      starts.reserve(config.outer_scenarios);
      for (std::size_t s = 0; s < config.outer_scenarios; ++s) starts.push_back(forward.state_field(s, first));
      BlockResult br;
      try {
        br = picard_block(*next, first, end, starts, *model, config, sweep);
      } catch (const PicardError& e) {
        res.blocks.push_back(e.log());
        res.failure = e.what();
        res.field = next;
        return res;
      }
      if (br.log.contraction_lost) {
        res.blocks.push_back(br.log);
        if (halved || block_steps < 2) {
          res.failure = "empirical contraction ratio >= 1 on nodes [" + std::to_string(first) + ", " +
                        std::to_string(end) + ") after halving the block";
          res.field = next;
          return res;
        }
        halved = true;
        block_steps /= 2;
        res.block_length = static_cast<double>(block_steps) * h;
        res.constants = contraction_admissible(res.block_length, lip);
        continue;
      }
      br.log.halved = halved;
      for (std::size_t j = 0; j < br.tables.size(); ++j) next->set_node(first + j, br.tables[j]);
      res.blocks.push_back(std::move(br.log));
      end = first;
    }

    std::vector<Probe> probes;
    for (std::size_t n = 0; n < steps; ++n) {
      const auto table = next->node(n);
      for (const auto& sc : table->scenarios) probes.push_back({static_cast<double>(n) * h, to_field(sc)});
    }
    const double change = field_distance(*next, *global, probes);
    global = next;
    res.sweeps.push_back({sweep, change});
    if (sweep >= config.min_sweeps && change < config.sweep_tol) {
      res.converged = true;
      break;
    }
  }
  res.field = global;
  if (!res.converged) {
    res.failure = "outer sweeps did not settle below " + std::to_string(config.sweep_tol) + " in " +
                  std::to_string(config.max_sweeps) + " sweeps";
  }
  return res;
}

ResidualReport pontryagin_residual(const DriftField& u, const PathBundle& bundle, const CostModel& model,
                                   const RegressionSpec& spec) {
  if (!bundle.has_states()) throw DomainError("pontryagin_residual: bundle must store states");
  const std::size_t steps = bundle.num_steps();
  const std::size_t paths = bundle.num_paths();
  const std::size_t m = bundle.grid_size();
  if (steps == 0) throw DomainError("pontryagin_residual: bundle has no steps");
  if (spec.modes == 0 || spec.modes > m) throw ValidationError("pontryagin_residual: bad feature count");
  std::vector<std::size_t> probes = spec.probe_nodes;
  if (probes.empty()) {
    for (std::size_t n = 0; n < steps; ++n) probes.push_back(n);
  }
  for (const auto n : probes) {
    if (n >= steps) throw DimensionError("pontryagin_residual: probe node out of range");
  }
  const double h = bundle.step();

  // tail[p][n] = U_end(X_end) + sum_{k = n+1}^{steps} d_x f(X_k) h
  std::vector<std::vector<std::vector<double>>> tail(paths);
  std::vector<double> buf(m);
  for (std::size_t p = 0; p < paths; ++p) {
    tail[p].assign(steps + 1, std::vector<double>(m, 0.0));
    const auto end_state = bundle.state_field(p, steps);
    const auto term = u.eval(bundle.time(steps), end_state);
    for (std::size_t i = 0; i < m; ++i) tail[p][steps][i] = term[i];
    for (std::size_t n = steps; n-- > 0;) {
      model.dxf_section(bundle.state_field(p, n + 1), buf);
      for (std::size_t i = 0; i < m; ++i) tail[p][n][i] = tail[p][n + 1][i] + h * buf[i];
    }
  }

  ResidualReport rep;
  double gap_sq = 0.0, floor_sq = 0.0;
  for (const auto n : probes) {
    std::vector<std::vector<double>> feats(paths), d(paths);
    for (std::size_t p = 0; p < paths; ++p) {
      const auto state = bundle.state(p, n);
      feats[p] = measure_features(state, spec.modes);
      std::vector<double> un(m);
      if (bundle.has_drift()) {
        const auto dr = bundle.drift(p, n);
        un.assign(dr.begin(), dr.end());
      } else {
        const auto s = u.eval(bundle.time(n), to_field(state));
        un.assign(s.values().begin(), s.values().end());
      }
      d[p].resize(m);
      for (std::size_t i = 0; i < m; ++i) d[p][i] = tail[p][n][i] - un[i];
    }
    auto r = regression_gap(feats, d, spec.ridge);
    r.node = n;
    r.time = bundle.time(n);
    gap_sq += r.gap * r.gap;
    floor_sq += r.noise_floor * r.noise_floor;
    rep.nodes.push_back(r);
  }
  rep.gap = std::sqrt(gap_sq / static_cast<double>(probes.size()));
  rep.noise_floor = std::sqrt(floor_sq / static_cast<double>(probes.size()));
  return rep;
}

Estimate gateaux_check(const ControlPath& gamma, const PathBundle& bundle, const CostModel& model) {
  if (!bundle.has_states() || !bundle.has_drift()) {
    throw DomainError("gateaux_check: bundle must store states and drift sections");
  }
  const std::size_t steps = bundle.num_steps();
  const std::size_t paths = bundle.num_paths();
  const std::size_t m = bundle.grid_size();
  if (gamma.num_paths() != paths || gamma.num_steps() != steps || gamma.grid_size() != m) {
    throw DimensionError("gateaux_check: control shape does not match the bundle");
  }
  const double h = bundle.step();
  std::vector<double> values(paths);
  std::vector<double> big_gamma(m), buf(m);
  for (std::size_t p = 0; p < paths; ++p) {
    std::fill(big_gamma.begin(), big_gamma.end(), 0.0);
    double total = 0.0;
    for (std::size_t n = 0; n <= steps; ++n) {
      const auto x = bundle.state_field(p, n);
      if (n >= 1) {
        model.dxf_section(x, buf);
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += buf[i] * big_gamma[i];
        total += h * s / static_cast<double>(m);
      }
      if (n == steps) {
        model.dxg_section(x, buf);
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += buf[i] * big_gamma[i];
        total += s / static_cast<double>(m);
        break;
      }
      const auto g = gamma.at(p, n);
      const auto u = bundle.drift(p, n);
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        s += u[i] * g[i];
        big_gamma[i] += g[i] * h;
      }
      total -= h * s / static_cast<double>(m);
    }
    values[p] = total;
  }
  return estimate(values);
}

double gateaux_finite_difference(const ControlPath& gamma, const PathBundle& bundle, const CostModel& model,
                                 double eps) {
  if (eps == 0.0) throw DomainError("gateaux_finite_difference: eps must be nonzero");
  const std::size_t steps = bundle.num_steps();
  const std::size_t paths = bundle.num_paths();
  const std::size_t m = bundle.grid_size();
  ControlPath base(paths, steps, m), moved(paths, steps, m);
  for (std::size_t p = 0; p < paths; ++p) {
    for (std::size_t n = 0; n < steps; ++n) {
      const auto u = bundle.drift(p, n);
      const auto g = gamma.at(p, n);
      auto b = base.at(p, n);
      auto mv = moved.at(p, n);
      for (std::size_t i = 0; i < m; ++i) {
        b[i] = -u[i];
        mv[i] = -u[i] + eps * g[i];
      }
    }
  }
  return (cost_J(moved, bundle, model).mean - cost_J(base, bundle, model).mean) / eps;
}

void save_field(const std::filesystem::path& dir, const TabulatedField& field, const std::string& extra_json) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("save_field: cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json manifest;
  manifest["format"] = "rshe-tabulated-field/1";
  manifest["h"] = field.step();
  manifest["num_nodes"] = field.num_nodes();
  manifest["grid_size"] = field.grid_size();
  manifest["neighbors"] = field.interpolation().neighbors;
  manifest["interpolation"] =
      field.interpolation().kind == InterpolationKind::regression ? "regression" : "nearest";
  manifest["interpolation_modes"] = field.interpolation().modes;
  manifest["sup_bound"] = field.sup_bound();
  manifest["lipschitz"] = field.lipschitz();
  manifest["fallback"] = field.fallback() ? field.fallback()->kind() : "none";
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t n = 0; n < field.num_nodes(); ++n) {
    const auto table = field.node(n);
    if (!table) continue;
    char name[32];
    std::snprintf(name, sizeof(name), "node_%05zu.csv", n);
    std::ofstream out(dir / name);
    if (!out) throw IoError("save_field: cannot write " + (dir / name).string());
    for (std::size_t s = 0; s < table->scenarios.size(); ++s) {
      std::vector<double> row(table->scenarios[s]);
      row.insert(row.end(), table->sections[s].begin(), table->sections[s].end());
      write_csv_row(out, row);
    }
    nodes.push_back({{"node", n}, {"file", name}, {"scenarios", table->scenarios.size()}});
  }
  manifest["nodes"] = nodes;
  try {
    manifest["extra"] = nlohmann::json::parse(extra_json);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("save_field: extra manifest data is not JSON: ") + e.what());
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("save_field: cannot write manifest");
  out << manifest.dump(2) << '\n';
}

std::shared_ptr<TabulatedField> load_field(const std::filesystem::path& dir,
                                           std::shared_ptr<const DriftField> fallback) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("load_field: no manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
    if (manifest.at("format") != "rshe-tabulated-field/1") throw IoError("load_field: unknown format");
    const double h = manifest.at("h").get<double>();
    const auto num_nodes = manifest.at("num_nodes").get<std::size_t>();
    const auto m = manifest.at("grid_size").get<std::size_t>();
    const auto k = manifest.at("neighbors").get<std::size_t>();
    InterpolationSpec interp{k};
    if (manifest.value("interpolation", "nearest") == "regression") interp.kind = InterpolationKind::regression;
    interp.modes = manifest.value("interpolation_modes", interp.modes);
    auto field = std::make_shared<TabulatedField>(h, num_nodes, m, std::move(fallback), interp);
    field->set_declared_bounds(manifest.at("sup_bound").get<double>(), manifest.at("lipschitz").get<double>());
    for (const auto& entry : manifest.at("nodes")) {
      const auto n = entry.at("node").get<std::size_t>();
      std::ifstream csv(dir / entry.at("file").get<std::string>());
      if (!csv) throw IoError("load_field: missing table for node " + std::to_string(n));
      auto table = std::make_shared<NodeTable>();
      std::string line;
      while (std::getline(csv, line)) {
        if (line.empty()) continue;
        auto row = parse_csv_row(line);
        if (row.size() != 2 * m) throw IoError("load_field: malformed row at node " + std::to_string(n));
        table->scenarios.emplace_back(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(m));
        table->sections.emplace_back(row.begin() + static_cast<std::ptrdiff_t>(m), row.end());
      }
      field->set_node(n, std::move(table));
    }
    return field;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("load_field: bad manifest: ") + e.what());
  }
}

ClassicalMfgResult classical_mfg_oracle(const CostModel& model, const QuantileField& x0, double horizon, double h,
                                        double tol, std::size_t max_iter, double damping) {
  if (!(h > 0.0) || !(horizon > 0.0)) throw DomainError("classical_mfg_oracle: bad mesh");
  if (!(damping > 0.0 && damping <= 1.0)) throw DomainError("classical_mfg_oracle: damping must be in (0, 1]");
  const auto steps = static_cast<std::size_t>(std::round(horizon / h));
  const std::size_t m = x0.size();
  ClassicalMfgResult r;
  std::vector<std::vector<double>> flow(steps + 1, std::vector<double>(x0.values().begin(), x0.values().end()));
  std::vector<std::vector<double>> y(steps + 1, std::vector<double>(m, 0.0));
  std::vector<double> buf(m);
  for (std::size_t it = 1; it <= max_iter; ++it) {
    // backward costate along the current flow
    model.dxg_section(QuantileField(flow[steps]), y[steps]);
    for (std::size_t n = steps; n-- > 0;) {
      model.dxf_section(QuantileField(flow[n + 1]), buf);
      for (std::size_t i = 0; i < m; ++i) y[n][i] = y[n + 1][i] + h * buf[i];
    }
    // forward transport under the costate feedback
    double change = 0.0;
    std::vector<double> x(flow[0]);
    for (std::size_t n = 0; n < steps; ++n) {
      for (std::size_t i = 0; i < m; ++i) x[i] -= h * y[n][i];
      std::sort(x.begin(), x.end());
      auto& f = flow[n + 1];
      for (std::size_t i = 0; i < m; ++i) {
        const double next = (1.0 - damping) * f[i] + damping * x[i];
        change = std::max(change, std::abs(next - f[i]));
        f[i] = next;
      }
      if (damping < 1.0) x = f;
    }
    r.iterations = it;
    r.change = change;
    if (change < tol) {
      r.converged = true;
      break;
    }
  }
  r.flow.reserve(steps + 1);
  for (auto& f : flow) r.flow.emplace_back(std::move(f));
  r.costate = std::move(y);
  return r;
}

}  // namespace rshe
