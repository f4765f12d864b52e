// SPDX-License-Identifier: Apache-2.0
#include "rshe/runner.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "rshe/cost_models.hpp"
#include "rshe/diagnostics.hpp"
#include "rshe/error.hpp"
#include "rshe/feedback_repr.hpp"
#include "rshe/rng.hpp"

namespace rshe {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kVersion = "0.1.0";

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "run.experiment", "run.output_dir", "run.seed", "run.threads", "run.dump_states",
      "grid.M",
      "time.h", "time.horizon",
      "noise.lambda", "noise.modes", "noise.amplitude",
      "cost.family", "cost.a", "cost.b", "cost.c_g", "cost.b_g", "cost.clip", "cost.kappa_f", "cost.kappa_g",
      "initial.kind", "initial.value", "initial.low", "initial.high",
      "simulate.paths", "simulate.drift", "simulate.drift_amplitude", "simulate.dynamics",
      "solver.block_length", "solver.safety", "solver.picard_tol", "solver.min_picard", "solver.max_picard",
      "solver.outer", "solver.inner", "solver.neighbors", "solver.interpolation", "solver.interpolation_modes",
      "solver.min_sweeps", "solver.max_sweeps",
      "solver.sweep_tol", "solver.regression_modes", "solver.init",
      "check.paths", "check.perturbations",
      "diagnostics.which", "diagnostics.window_lo_steps", "diagnostics.window_hi_steps", "diagnostics.eps",
      "diagnostics.gronwall_horizon", "diagnostics.smoothing_paths", "diagnostics.smoothing_trials",
      "diagnostics.smoothing_h",
  };
  return keys;
}

class Reader {
 public:
  explicit Reader(std::map<std::string, std::string> values) : values_(std::move(values)) {}

  std::optional<std::string> raw(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  std::string str(const std::string& key, const std::string& def) const { return raw(key).value_or(def); }

  double real(const std::string& key, double def) const {
    const auto r = raw(key);
    if (!r) return def;
    double v = 0.0;
    const auto res = std::from_chars(r->data(), r->data() + r->size(), v);
    if (res.ec != std::errc{} || res.ptr != r->data() + r->size() || !std::isfinite(v)) {
      throw ValidationError("config key " + key + ": expected a finite number, got '" + *r + "'");
    }
    return v;
  }

  std::uint64_t count(const std::string& key, std::uint64_t def) const {
    const auto r = raw(key);
    if (!r) return def;
    std::uint64_t v = 0;
    const auto res = std::from_chars(r->data(), r->data() + r->size(), v);
    if (res.ec != std::errc{} || res.ptr != r->data() + r->size()) {
      throw ValidationError("config key " + key + ": expected a non-negative integer, got '" + *r + "'");
    }
    return v;
  }

  bool flag(const std::string& key, bool def) const {
    const auto r = raw(key);
    if (!r) return def;
    if (*r == "true" || *r == "1" || *r == "yes") return true;
    if (*r == "false" || *r == "0" || *r == "no") return false;
    throw ValidationError("config key " + key + ": expected true or false, got '" + *r + "'");
  }

 private:
  std::map<std::string, std::string> values_;
};

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

Experiment parse_experiment(const std::string& s) {
  if (s == "simulate-rshe") return Experiment::simulate_rshe;
  if (s == "solve-mfg") return Experiment::solve_mfg;
  if (s == "pontryagin-check") return Experiment::pontryagin_check;
  if (s == "feedback-check") return Experiment::feedback_check;
  if (s == "diagnostics") return Experiment::diagnostics;
  if (s == "deterministic-benchmark") return Experiment::deterministic_benchmark;
  throw ValidationError("config key run.experiment: unknown experiment '" + s + "'");
}

void require_choice(const std::string& key, const std::string& value, std::initializer_list<const char*> options) {
  for (const auto* o : options) {
    if (value == o) return;
  }
  std::string list;
  for (const auto* o : options) list += std::string(list.empty() ? "" : ", ") + o;
  throw ValidationError("config key " + key + ": '" + value + "' is not one of " + list);
}

Dynamics parse_dynamics(const std::string& s) { return s == "transport" ? Dynamics::transport : Dynamics::rshe; }

// Solver settings with the run-level mesh, grid and noise applied.
SolverConfig effective_solver(const RunConfig& c) {
  SolverConfig s = c.solver;
  s.horizon = c.horizon;
  s.h = c.h;
  s.grid_size = c.grid_size;
  s.noise = c.noise;
  s.threads = c.threads;
  s.dynamics = parse_dynamics(c.dynamics);
  if (c.experiment == Experiment::deterministic_benchmark) {
    s.dynamics = Dynamics::transport;
    s.outer_scenarios = 1;
    s.inner_paths = 1;
  }
  return s;
}

bool needs_solver(const RunConfig& c) {
  return c.experiment == Experiment::solve_mfg || c.experiment == Experiment::pontryagin_check ||
         c.experiment == Experiment::deterministic_benchmark ||
         ((c.experiment == Experiment::simulate_rshe || c.experiment == Experiment::feedback_check) &&
          c.drift == "solve");
}

void write_table(const fs::path& path, const std::vector<std::string>& header,
                 const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& r : rows) write_csv_row(out, r);
  if (!out) throw IoError("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Context {
  const RunConfig& cfg;
  fs::path dir;
  std::shared_ptr<const CostModel> model;
  QuantileField x0;
  json summary = json::object();
};

std::shared_ptr<const DriftField> drift_for(Context& ctx, SolveResult* solved) {
  const auto& c = ctx.cfg;
  if (c.drift == "zero") return nullptr;
  if (c.drift == "mean-tanh") return make_mean_tanh_field(c.drift_amplitude);
  if (c.drift == "terminal") return make_terminal_bootstrap_field(ctx.model);
  auto res = solve_equilibrium(ctx.model, ctx.x0, effective_solver(c));
  if (!res.failure.empty()) throw NumericalError("equilibrium solve failed: " + res.failure);
  std::shared_ptr<const DriftField> f = res.field;
  if (solved != nullptr) *solved = std::move(res);
  return f;
}

SimulationSpec base_spec(const RunConfig& c) {
  SimulationSpec s;
  s.horizon = c.horizon;
  s.h = c.h;
  s.paths = c.paths;
  s.noise = c.noise;
  s.dynamics = parse_dynamics(c.dynamics);
  s.threads = c.threads;
  return s;
}

void dump_states(const PathBundle& b, const fs::path& dir) {
  std::ofstream out(dir / "states.bin", std::ios::binary);
  if (!out) throw IoError("cannot write state dump");
  for (std::size_t p = 0; p < b.num_paths(); ++p) {
    const auto s = b.path_states(p);
    out.write(reinterpret_cast<const char*>(s.data()), static_cast<std::streamsize>(s.size() * sizeof(double)));
  }
  write_json(dir / "states.json", {{"dtype", "float64"},
                                   {"order", "path, node, grid"},
                                   {"shape", {b.num_paths(), b.num_steps() + 1, b.grid_size()}},
                                   {"h", b.step()}});
}

void run_simulate(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto drift = drift_for(ctx, nullptr);
  auto spec = base_spec(c);
  spec.store_states = c.dump_states;
  const std::size_t steps = spec.num_steps();
  std::vector<double> means(spec.paths * (steps + 1), 0.0);
  const auto b = simulate(ctx.x0, drift.get(), spec, [&](std::size_t p, std::size_t n, const QuantileField& x) {
    means[p * (steps + 1) + n] = field_mean(x.values());
  });
  std::vector<std::vector<double>> rows;
  std::vector<double> mean(b.num_paths()), energy(b.num_paths()), norm(b.num_paths()), ties(b.num_paths());
  for (std::size_t n = 0; n <= b.num_steps(); ++n) {
    for (std::size_t p = 0; p < b.num_paths(); ++p) {
      energy[p] = b.energy(p, n);
      norm[p] = b.norm_sq(p, n);
      ties[p] = b.tie_fraction(p, n);
      mean[p] = means[p * (steps + 1) + n];
    }
    const auto em = estimate(mean);
    const auto ee = estimate(energy);
    rows.push_back({b.time(n), em.mean, em.std_error, ee.mean, ee.std_error, estimate(norm).mean, estimate(ties).mean});
  }
  write_table(ctx.dir / "times.csv", {"t", "mean", "mean_stderr", "energy", "energy_stderr", "norm_sq", "atoms"}, rows);
  if (c.dump_states) dump_states(b, ctx.dir);
  ctx.summary["paths"] = b.num_paths();
  ctx.summary["steps"] = b.num_steps();
  ctx.summary["final_mean"] = rows.back()[1];
  ctx.summary["final_energy"] = rows.back()[3];
}

void write_solver_logs(const SolveResult& res, const fs::path& dir) {
  std::vector<std::vector<double>> rows;
  for (const auto& b : res.blocks) {
    for (std::size_t m = 0; m < b.distances.size(); ++m) {
      rows.push_back({static_cast<double>(b.sweep), static_cast<double>(b.first_node), static_cast<double>(b.end_node),
                      b.delta, static_cast<double>(m), b.distances[m], m >= 1 ? b.ratios[m - 1] : std::nan(""),
                      b.residuals[m], b.converged ? 1.0 : 0.0, b.contraction_lost ? 1.0 : 0.0});
    }
  }
  write_table(dir / "picard.csv",
              {"sweep", "first_node", "end_node", "delta", "iteration", "distance", "ratio", "residual", "converged",
               "contraction_lost"},
              rows);
  rows.clear();
  for (const auto& s : res.sweeps) rows.push_back({static_cast<double>(s.sweep), s.change});
  write_table(dir / "sweeps.csv", {"sweep", "change"}, rows);
}

json solver_summary(const SolveResult& res) {
  json j;
  j["converged"] = res.converged;
  j["failure"] = res.failure;
  j["block_length"] = res.block_length;
  j["constants"] = {{"lipschitz", res.constants.lipschitz}, {"c", res.constants.c}, {"c_c", res.constants.c_c},
                    {"log_bound", res.constants.log_bound}, {"admissible", res.constants.admissible}};
  j["sweeps"] = res.sweeps.size();
  j["blocks"] = res.blocks.size();
  double worst_ratio = 0.0;
  for (const auto& b : res.blocks) {
    for (std::size_t m = 1; m < b.ratios.size(); ++m) worst_ratio = std::max(worst_ratio, b.ratios[m]);
  }
  j["max_ratio_after_first"] = worst_ratio;
  return j;
}

SolveResult solve_and_store(Context& ctx) {
  const auto& c = ctx.cfg;
  auto res = solve_equilibrium(ctx.model, ctx.x0, effective_solver(c));
  write_solver_logs(res, ctx.dir);
  json extra = {{"cost", ctx.model->name()}, {"seed", c.seed}, {"solver", solver_summary(res)}};
  save_field(ctx.dir / "field", *res.field, extra.dump());
  ctx.summary["solver"] = solver_summary(res);
  if (!res.failure.empty()) throw NumericalError("equilibrium solve failed: " + res.failure);
  return res;
}

// Perturbation k: gamma(t, x) = sum_{j <= 3} xi_j e_j(x), constant over paths
// and time, so a biased feedback shows up in the mean.
ControlPath perturbation(std::size_t k, std::uint64_t seed, std::size_t paths, std::size_t steps, std::size_t m) {
  const RandomStream rs(seed, mix_stream_id({0x6A7E, k}));
  std::vector<double> xi(4), sec(m, 0.0);
  for (std::size_t j = 0; j < 4; ++j) xi[j] = rs.normal(0, static_cast<std::uint32_t>(j));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < 4; ++j) sec[i] += xi[j] * basis_eval(j, grid_node(i, m));
  }
  ControlPath g(paths, steps, m);
  for (std::size_t p = 0; p < paths; ++p) {
    for (std::size_t n = 0; n < steps; ++n) std::copy(sec.begin(), sec.end(), g.at(p, n).begin());
  }
  return g;
}

void run_pontryagin(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto res = solve_and_store(ctx);
  const std::size_t final_sweep = res.sweeps.empty() ? 0 : res.sweeps.back().sweep;
  bool decreasing = true;
  for (const auto& b : res.blocks) {
    if (b.sweep != final_sweep) continue;
    const auto& r = b.residuals;
    if (r.size() < 3 || !(r[r.size() - 1] < r[r.size() - 2] && r[r.size() - 2] < r[r.size() - 3])) decreasing = false;
  }
  ctx.summary["picard_residual_decreasing"] = decreasing;

  SimulationSpec spec = base_spec(c);
  spec.paths = c.check_paths;
  spec.stream_tag = 0xC4EC;
  spec.store_states = true;
  spec.store_drift = true;
  const auto bundle = simulate(ctx.x0, res.field.get(), spec);
  RegressionSpec rs;
  rs.modes = c.solver.regression_modes;
  const auto rep = pontryagin_residual(*res.field, bundle, *ctx.model, rs);
  std::vector<std::vector<double>> rows;
  for (const auto& n : rep.nodes) rows.push_back({n.time, n.gap, n.noise_floor, n.ridge ? 1.0 : 0.0});
  write_table(ctx.dir / "pontryagin.csv", {"t", "gap", "noise_floor", "ridge"}, rows);

  rows.clear();
  const double tol_term = 5.0 * c.solver.picard_tol;
  std::size_t passed = 0;
  for (std::size_t k = 0; k < c.perturbations; ++k) {
    const auto g = perturbation(k, c.seed, bundle.num_paths(), bundle.num_steps(), bundle.grid_size());
    const auto e = gateaux_check(g, bundle, *ctx.model);
    const double bound = 3.0 * e.std_error + tol_term;
    const bool ok = std::abs(e.mean) <= bound;
    passed += ok;
    rows.push_back({static_cast<double>(k), e.mean, e.std_error, bound, ok ? 1.0 : 0.0});
  }
  write_table(ctx.dir / "gateaux.csv", {"perturbation", "value", "stderr", "bound", "pass"}, rows);
  ctx.summary["pontryagin_gap"] = rep.gap;
  ctx.summary["pontryagin_noise_floor"] = rep.noise_floor;
  ctx.summary["gateaux_passed"] = passed;
  ctx.summary["gateaux_total"] = c.perturbations;
}

void run_solve(Context& ctx) { (void)solve_and_store(ctx); }

void run_feedback(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto u = c.drift == "zero" ? make_zero_field() : drift_for(ctx, nullptr);
  auto spec = base_spec(c);
  spec.store_states = true;
  spec.store_drift = true;
  const auto b = simulate(ctx.x0, u.get(), spec);
  const auto prof = representation_residual(*u, b);
  std::vector<std::vector<double>> rows;
  for (const auto& r : prof.rows) rows.push_back({r.t, r.mean, r.max, r.std_error, r.atom_mean});
  write_table(ctx.dir / "representation.csv", {"t", "mean", "max", "stderr", "atoms"}, rows);
  const auto atoms = atom_statistics(b);
  rows.clear();
  for (std::size_t n = 0; n < atoms.per_node_mean.size(); ++n) rows.push_back({b.time(n), atoms.per_node_mean[n]});
  write_table(ctx.dir / "atoms.csv", {"t", "atom_mean"}, rows);
  double worst = 0.0;
  std::size_t flagged = 0;
  for (const auto& s : prof.samples) {
    worst = std::max(worst, s.residual);
    if (s.atoms > 2.0 / static_cast<double>(c.grid_size)) ++flagged;
  }
  ctx.summary["residual_max"] = worst;
  ctx.summary["atomic_samples"] = flagged;
  ctx.summary["atom_excess_mean"] = atoms.excess.mean;
  ctx.summary["atom_excess_stderr"] = atoms.excess.std_error;
}

void run_diagnostics(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto want = [&](const char* name) {
    return std::find(c.diagnostics.begin(), c.diagnostics.end(), name) != c.diagnostics.end();
  };
  std::optional<PathBundle> bundle;
  if (want("energy") || want("exp-moment")) {
    auto spec = base_spec(c);
    spec.store_states = false;
    bundle = simulate(ctx.x0, nullptr, spec);
  }
  if (want("energy")) {
    const auto p = energy_profile(*bundle, static_cast<double>(c.window_lo_steps) * c.h,
                                  static_cast<double>(c.window_hi_steps) * c.h);
    std::vector<std::vector<double>> rows;
    for (const auto& r : p.rows) rows.push_back({r.t, r.mean, r.std_error});
    write_table(ctx.dir / "energy.csv", {"t", "energy", "stderr"}, rows);
    ctx.summary["energy_slope"] = p.fit.slope;
    ctx.summary["energy_window"] = {p.window_lo, p.window_hi};
  }
  if (want("exp-moment")) {
    const auto r = exp_moment(*bundle, c.exp_eps);
    ctx.summary["exp_moment"] = {{"eps", c.exp_eps},
                                 {"overflow", r.overflow},
                                 {"message", r.message},
                                 {"estimate", r.overflow ? json(nullptr) : json(r.estimate.mean)},
                                 {"stderr", r.overflow ? json(nullptr) : json(r.estimate.std_error)},
                                 {"half_sample_estimate", r.overflow ? json(nullptr) : json(r.half_estimate.mean)},
                                 {"relative_change", r.relative_change},
                                 {"max_sup_norm_sq", r.max_sup_norm_sq}};
  }
  if (want("gronwall")) {
    std::vector<double> other(ctx.x0.values().begin(), ctx.x0.values().end());
    for (auto& v : other) v = 1.5 * v + 0.2;
    GronwallSpec gs;
    gs.horizon = c.gronwall_horizon;
    gs.h = c.h;
    gs.noise = c.noise;
    const auto v = make_mean_tanh_field(c.drift_amplitude);
    const auto r = stability_gronwall(ctx.x0, rearrange(std::move(other)), *v, gs);
    std::vector<std::vector<double>> rows;
    for (std::size_t n = 0; n < r.t.size(); ++n) rows.push_back({r.t[n], r.ratio[n], std::exp(r.c_v * r.t[n])});
    write_table(ctx.dir / "gronwall.csv", {"t", "ratio", "exp_cv_t"}, rows);
    ctx.summary["gronwall"] = {{"ratio_at_horizon", r.ratio.back()}, {"bound_at_horizon", r.bound_at_horizon},
                               {"eps_h", r.eps_h}, {"within_bound", r.within_bound}};
  }
  if (want("smoothing")) {
    SmoothingSpec ss;
    ss.grid_size = c.grid_size;
    ss.noise = c.noise;
    ss.h = c.smoothing_h;
    ss.paths = c.smoothing_paths;
    ss.trials = c.smoothing_trials;
    ss.threads = c.threads;
    const auto r = smoothing_probe(median_indicator, ss);
    std::vector<std::vector<double>> rows;
    for (const auto& row : r.rows) rows.push_back({row.t, row.lip_hat, row.std_error, row.w2});
    write_table(ctx.dir / "smoothing.csv", {"t", "lip_hat", "stderr", "w2"}, rows);
    ctx.summary["smoothing_slope"] = r.fit.slope;
  }
}

void run_benchmark(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto disp = displacement_check(*ctx.model, 1000, c.seed);
  ctx.summary["displacement_monotone"] = disp.monotone;
  ctx.summary["displacement_min"] = std::min(disp.min_f, disp.min_g);
  const auto res = solve_and_store(ctx);
  SimulationSpec spec;
  spec.horizon = c.horizon;
  spec.h = c.h;
  spec.paths = 1;
  spec.noise = c.noise;
  spec.dynamics = Dynamics::transport;
  spec.store_states = true;
  const auto flow = simulate(ctx.x0, res.field.get(), spec);
  const auto oracle = classical_mfg_oracle(*ctx.model, ctx.x0, c.horizon, c.h);
  double gap = 0.0;
  std::vector<std::vector<double>> rows;
  for (std::size_t n = 0; n <= flow.num_steps(); ++n) {
    const double d = l2_distance(flow.state(0, n), oracle.flow[n].values());
    gap = std::max(gap, d);
    rows.push_back({flow.time(n), d, field_mean(flow.state(0, n)), field_mean(oracle.flow[n].values())});
  }
  write_table(ctx.dir / "flows.csv", {"t", "w2_gap", "pipeline_mean", "oracle_mean"}, rows);
  ctx.summary["sup_w2_gap"] = gap;
  ctx.summary["oracle_converged"] = oracle.converged;
  ctx.summary["oracle_iterations"] = oracle.iterations;
  ctx.summary["certified"] = disp.monotone && oracle.converged && res.converged;
}

const char* status_name(int code) {
  switch (code) {
    case 0: return "ok";
    case 2: return "validation-error";
    case 3: return "numerical-failure";
    default: return "error";
  }
}

json artifact_list(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir);
    if (rel == "manifest.json" || *rel.begin() == "replay") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  json out = json::array();
  for (const auto& f : files) out.push_back({{"path", f.generic_string()}, {"sha1", git_blob_sha1(read_file(dir / f))}});
  return out;
}

}  // namespace

std::string to_string(Experiment e) {
  switch (e) {
    case Experiment::simulate_rshe: return "simulate-rshe";
    case Experiment::solve_mfg: return "solve-mfg";
    case Experiment::pontryagin_check: return "pontryagin-check";
    case Experiment::feedback_check: return "feedback-check";
    case Experiment::diagnostics: return "diagnostics";
    case Experiment::deterministic_benchmark: return "deterministic-benchmark";
  }
  return "unknown";
}

std::string git_blob_sha1(const std::string& content) {
  const std::string head = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr) throw IoError("sha1: cannot allocate digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, head.data(), head.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw IoError("sha1: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

RunConfig parse_config(const std::string& text) {
  boost::property_tree::ptree pt;
  try {
    std::istringstream in(text);
    boost::property_tree::ini_parser::read_ini(in, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ValidationError("config: line " + std::to_string(e.line()) + ": " + e.message());
  }
  std::map<std::string, std::string> values;
  for (const auto& [section, body] : pt) {
    if (!body.data().empty()) throw ValidationError("config: key '" + section + "' outside any section");
    for (const auto& [key, node] : body) {
      const std::string full = section + "." + key;
      if (!known_keys().contains(full)) throw ValidationError("config: unknown key '" + full + "'");
      values[full] = trim(node.data());
    }
  }
  const Reader r(values);
  RunConfig c;
  c.echo = values;
  c.source_text = text;
  const auto exp = r.raw("run.experiment");
  if (!exp) throw ValidationError("config: run.experiment is required");
  c.experiment = parse_experiment(*exp);
  c.output_dir = r.str("run.output_dir", "out");
  c.seed = r.count("run.seed", 0);
  c.threads = r.count("run.threads", 1);
  c.dump_states = r.flag("run.dump_states", false);
  c.grid_size = r.count("grid.M", 128);
  c.h = r.real("time.h", 0.01);
  c.horizon = r.real("time.horizon", 0.27);
  c.noise.lambda = r.real("noise.lambda", 0.75);
  c.noise.num_modes = r.count("noise.modes", 32);
  c.noise.amplitude = r.real("noise.amplitude", 1.0);
  c.noise.seed = c.seed;
  c.cost.family = r.str("cost.family", "tanh");
  c.cost.a = r.real("cost.a", 1.0);
  c.cost.b = r.real("cost.b", -0.5);
  c.cost.c_g = r.real("cost.c_g", 1.0);
  c.cost.b_g = r.real("cost.b_g", -0.5);
  c.cost.clip = r.real("cost.clip", 2.0);
  c.cost.kappa_f = r.real("cost.kappa_f", 0.0);
  c.cost.kappa_g = r.real("cost.kappa_g", 0.0);
  c.initial.kind = r.str("initial.kind", "linear");
  c.initial.value = r.real("initial.value", 0.0);
  c.initial.low = r.real("initial.low", -1.0);
  c.initial.high = r.real("initial.high", 1.0);
  c.paths = r.count("simulate.paths", 100);
  c.drift = r.str("simulate.drift", "zero");
  c.drift_amplitude = r.real("simulate.drift_amplitude", 1.0);
  c.dynamics = r.str("simulate.dynamics", "rshe");
  auto& s = c.solver;
  s.block_length = r.real("solver.block_length", 0.0);
  s.safety = r.real("solver.safety", s.safety);
  s.picard_tol = r.real("solver.picard_tol", s.picard_tol);
  s.min_picard = r.count("solver.min_picard", s.min_picard);
  s.max_picard = r.count("solver.max_picard", s.max_picard);
  s.outer_scenarios = r.count("solver.outer", s.outer_scenarios);
  s.inner_paths = r.count("solver.inner", s.inner_paths);
  s.neighbors = r.count("solver.neighbors", s.neighbors);
  const auto interp = r.str("solver.interpolation", "regression");
  require_choice("solver.interpolation", interp, {"regression", "nearest"});
  s.interpolation = interp == "nearest" ? InterpolationKind::nearest : InterpolationKind::regression;
  s.interpolation_modes = r.count("solver.interpolation_modes", s.interpolation_modes);
  s.min_sweeps = r.count("solver.min_sweeps", s.min_sweeps);
  s.max_sweeps = r.count("solver.max_sweeps", s.max_sweeps);
  s.sweep_tol = r.real("solver.sweep_tol", s.sweep_tol);
  s.regression_modes = r.count("solver.regression_modes", s.regression_modes);
  const auto init = r.str("solver.init", "zero");
  require_choice("solver.init", init, {"zero", "terminal"});
  s.init = init == "zero" ? Initialization::zero : Initialization::terminal;
  c.check_paths = r.count("check.paths", 64);
  c.perturbations = r.count("check.perturbations", 20);
  if (const auto w = r.raw("diagnostics.which")) {
    c.diagnostics.clear();
    std::stringstream ss(*w);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      require_choice("diagnostics.which", item, {"energy", "exp-moment", "gronwall", "smoothing"});
      c.diagnostics.push_back(item);
    }
  }
  c.window_lo_steps = r.count("diagnostics.window_lo_steps", 5);
  c.window_hi_steps = r.count("diagnostics.window_hi_steps", 50);
  c.exp_eps = r.real("diagnostics.eps", 0.1);
  c.gronwall_horizon = r.real("diagnostics.gronwall_horizon", 0.5);
  c.smoothing_paths = r.count("diagnostics.smoothing_paths", 2000);
  c.smoothing_trials = r.count("diagnostics.smoothing_trials", 3);
  c.smoothing_h = r.real("diagnostics.smoothing_h", 1e-4);
  validate_config(c);
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return parse_config(text);
}

std::shared_ptr<const CostModel> make_cost(const CostSpec& s) {
  if (s.family == "zero") return make_zero_cost();
  if (s.family == "constant") return make_constant_cost(s.kappa_f, s.kappa_g);
  if (s.family == "tanh") return make_tanh_family(s.a, s.b, s.c_g, s.b_g);
  if (s.family == "clipped-linear") return make_clipped_linear_family(s.a, s.b, s.clip);
  throw ValidationError("config key cost.family: unknown family '" + s.family + "'");
}

QuantileField make_initial_state(const InitialSpec& s, std::size_t m) {
  std::vector<double> v(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double x = grid_node(i, m);  // in (0, 1/2)
    if (s.kind == "constant") {
      v[i] = s.value;
    } else if (s.kind == "linear") {
      v[i] = s.low + (s.high - s.low) * 2.0 * x;
    } else if (s.kind == "two-step") {
      v[i] = x < 0.25 ? s.low : s.high;
    } else if (s.kind == "three-level") {
      v[i] = 6.0 * x < 1.0 ? s.low : (6.0 * x < 2.0 ? 0.5 * (s.low + s.high) : s.high);
    } else {
      throw ValidationError("config key initial.kind: unknown kind '" + s.kind + "'");
    }
  }
  return QuantileField(std::move(v));
}

void validate_config(const RunConfig& c) {
  if (c.grid_size < 2) throw ValidationError("config key grid.M: must be >= 2");
  if (c.threads == 0) throw ValidationError("config key run.threads: must be >= 1");
  if (c.output_dir.empty()) throw ValidationError("config key run.output_dir: must not be empty");
  require_choice("simulate.dynamics", c.dynamics, {"rshe", "transport"});
  require_choice("simulate.drift", c.drift, {"zero", "mean-tanh", "terminal", "solve"});
  require_choice("initial.kind", c.initial.kind, {"constant", "linear", "two-step", "three-level"});
  if (c.initial.low > c.initial.high) throw ValidationError("config: initial.low must not exceed initial.high");
  SimulationSpec probe = base_spec(c);
  try {
    probe.validate();
  } catch (const DomainError& e) {
    throw ValidationError(e.what());
  }
  if (c.noise.num_modes >= c.grid_size) {
    throw ValidationError("config: noise.modes K = " + std::to_string(c.noise.num_modes) +
                          " must be below grid.M = " + std::to_string(c.grid_size));
  }
  try {
    (void)make_cost(c.cost);
  } catch (const DomainError& e) {
    throw ValidationError(std::string("config section cost: ") + e.what());
  }
  if (c.paths == 0) throw ValidationError("config key simulate.paths: must be >= 1");
  if (needs_solver(c)) effective_solver(c).validate();
  switch (c.experiment) {
    case Experiment::pontryagin_check:
      if (c.check_paths < 2) throw ValidationError("config key check.paths: must be >= 2");
      if (c.perturbations == 0) throw ValidationError("config key check.perturbations: must be >= 1");
      break;
    case Experiment::deterministic_benchmark:
      if (c.noise.amplitude != 0.0) {
        throw ValidationError("config key noise.amplitude: the deterministic benchmark requires amplitude 0");
      }
      break;
    case Experiment::diagnostics:
      if (c.window_lo_steps == 0 || c.window_lo_steps >= c.window_hi_steps) {
        throw ValidationError("config: need 0 < diagnostics.window_lo_steps < diagnostics.window_hi_steps");
      }
      if (static_cast<double>(c.window_hi_steps) * c.h > c.horizon * (1 + 1e-12)) {
        throw ValidationError("config: the energy window extends past time.horizon");
      }
      if (!(c.exp_eps > 0.0)) throw ValidationError("config key diagnostics.eps: must be positive");
      if (!(c.smoothing_h > 0.0)) throw ValidationError("config key diagnostics.smoothing_h: must be positive");
      if (c.smoothing_paths < 2 || c.smoothing_trials == 0) {
        throw ValidationError("config: smoothing needs >= 2 paths and >= 1 trial");
      }
      if (!(c.gronwall_horizon > 0.0)) throw ValidationError("config key diagnostics.gronwall_horizon: must be positive");
      break;
    default:
      break;
  }
}

RunOutcome run_experiment(const RunConfig& config, const std::optional<fs::path>& output_override) {
  RunOutcome out;
  out.output_dir = output_override.value_or(config.output_dir);
  json manifest;
  manifest["tool"] = "rshe";
  manifest["version"] = kVersion;
  manifest["experiment"] = to_string(config.experiment);
  manifest["seed"] = config.seed;
  manifest["config"] = config.echo;
  manifest["config_text"] = config.source_text;
  manifest["config_sha1"] = git_blob_sha1(config.source_text);
  json summary;
  try {
    std::error_code ec;
    fs::create_directories(out.output_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out.output_dir.string() + ": " + ec.message());
    validate_config(config);
    Context ctx{config, out.output_dir, make_cost(config.cost), make_initial_state(config.initial, config.grid_size)};
    try {
      switch (config.experiment) {
        case Experiment::simulate_rshe: run_simulate(ctx); break;
        case Experiment::solve_mfg: run_solve(ctx); break;
        case Experiment::pontryagin_check: run_pontryagin(ctx); break;
        case Experiment::feedback_check: run_feedback(ctx); break;
        case Experiment::diagnostics: run_diagnostics(ctx); break;
        case Experiment::deterministic_benchmark: run_benchmark(ctx); break;
      }
    } catch (...) {
      summary = ctx.summary;
      throw;
    }
    summary = ctx.summary;
    out.exit_code = 0;
    out.message = "ok";
  } catch (const ValidationError& e) {
    out.exit_code = 2;
    out.message = e.what();
  } catch (const NumericalError& e) {
    out.exit_code = 3;
    out.message = e.what();
  } catch (const std::exception& e) {
    out.exit_code = 1;
    out.message = e.what();
  }
  manifest["status"] = status_name(out.exit_code);
  manifest["exit_code"] = out.exit_code;
  manifest["message"] = out.message;
  manifest["summary"] = summary.is_null() ? json::object() : summary;
  out.summary_json = manifest["summary"].dump();
  try {
    if (fs::is_directory(out.output_dir)) {
      manifest["artifacts"] = artifact_list(out.output_dir);
      write_json(out.output_dir / "manifest.json", manifest);
    }
  } catch (const std::exception& e) {
    if (out.exit_code == 0) {
      out.exit_code = 1;
      out.message = std::string("writing the manifest failed: ") + e.what();
    }
  }
  return out;
}

RunOutcome run_file(const fs::path& config_path, const std::optional<fs::path>& output_override) {
  try {
    return run_experiment(load_config(config_path), output_override);
  } catch (const ValidationError& e) {
    return {2, e.what(), output_override.value_or(fs::path()), "{}"};
  }
}

RunOutcome validate_file(const fs::path& config_path) {
  try {
    const auto c = load_config(config_path);
    return {0, "valid " + to_string(c.experiment) + " configuration", c.output_dir, "{}"};
  } catch (const ValidationError& e) {
    return {2, e.what(), {}, "{}"};
  } catch (const std::exception& e) {
    return {1, e.what(), {}, "{}"};
  }
}

RunOutcome replay_manifest(const fs::path& manifest_path, const std::optional<fs::path>& output_override) {
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const std::exception& e) {
    return {2, std::string("replay: cannot read manifest: ") + e.what(), {}, "{}"};
  }
  if (!manifest.contains("config_text") || !manifest.contains("config_sha1")) {
    return {2, "replay: manifest has no configuration echo", {}, "{}"};
  }
  const auto text = manifest["config_text"].get<std::string>();
  if (git_blob_sha1(text) != manifest["config_sha1"].get<std::string>()) {
    return {2, "replay: configuration hash mismatch", {}, "{}"};
  }
  const fs::path target = output_override.value_or(manifest_path.parent_path() / "replay");
  RunOutcome out;
  try {
    out = run_experiment(parse_config(text), target);
  } catch (const ValidationError& e) {
    return {2, e.what(), target, "{}"};
  }
  if (out.exit_code != 0 && out.exit_code != manifest.value("exit_code", 0)) return out;
  // Compare artifacts against the original run.
  try {
    const auto fresh = json::parse(read_file(target / "manifest.json"));
    const auto& a = manifest["artifacts"];
    const auto& b = fresh["artifacts"];
    const bool same = a == b;
    out.message = same ? "replay reproduced all artifacts" : "replay differs from the original artifacts";
    if (!same && out.exit_code == 0) out.exit_code = 1;
  } catch (const std::exception& e) {
    out.exit_code = 1;
    out.message = std::string("replay: cannot compare artifacts: ") + e.what();
  }
  return out;
}

}  // namespace rshe
