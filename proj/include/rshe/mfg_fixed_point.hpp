// SPDX-License-Identifier: Apache-2.0
//
// Equilibrium feedback U = Phi(U) for the common-noise MFG. Phi(V)(t, x, mu)
// is the expected terminal-plus-running marginal cost along the V-driven
// flow started from (t, mu). The solver builds U backward in blocks short
// enough for Phi to contract, on scenario libraries reachable from mu_0.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rshe/cost_models.hpp"
#include "rshe/drift_field.hpp"
#include "rshe/error.hpp"
#include "rshe/rshe_solver.hpp"
#include "rshe/statistics.hpp"

namespace rshe {

// Stream families. Scenario s uses mix_stream_id({kScenarioStreams, s}) over
// the whole horizon; inner path p from library point (node n, scenario s)
// uses mix_stream_id({kInnerStreams, n, s, p}).
inline constexpr std::uint64_t kScenarioStreams = 0x5CE7A210ull;
inline constexpr std::uint64_t kInnerStreams = 0x1A7E2C01ull;
inline constexpr std::uint64_t kPhiStreams = 0x0F1E2D3Cull;

struct ContractionReport {
  double block = 0.0;
  double lipschitz = 0.0;  // C_{f,g}
  double c = 0.0;          // 1 / (8 C (1 + T))
  double c_c = 0.0;        // sqrt(2 C (1 + T))
  double log_bound = 0.0;  // ln 2 / (1 + 2 C_c^2)
  bool admissible = false;
};

ContractionReport contraction_admissible(double block, double lipschitz);

// Largest multiple of h with delta <= safety * min(c(delta), ln2 / (1 + 2 C_c(delta)^2)),
// floored at 2h.
double admissible_block_length(double lipschitz, double h, double safety = 0.8);

struct PhiParams {
  double horizon = 1.0;  // terminal time T
  double h = 1e-2;
  std::size_t paths = 200;
  NoiseModel noise;
  Dynamics dynamics = Dynamics::rshe;
  std::size_t threads = 1;
  std::uint64_t stream_tag = kPhiStreams;
};

struct PhiEstimate {
  GridFunction section;
  std::vector<double> std_error;  // per grid node
};

// Monte Carlo Phi(V)(t, ., mu) with terminal d_x g at the horizon.
PhiEstimate apply_phi(const DriftField& v, double t, const QuantileField& mu, const CostModel& model,
                      const PhiParams& params);
PhiEstimate apply_phi(const DriftField& v, double t, const DiscreteMeasure& mu, std::size_t grid_size,
                      const CostModel& model, const PhiParams& params);

// Costate samples Y_p(x) = U(t_S, x, mu_S) + sum_{k = n+1}^{S} d_x f(X_k(x), mu_k) h
// for paths started at node n from `start`. A null terminal field means
// d_x g. Rows are paths.
std::vector<std::vector<double>> costate_samples(const DriftField& v, const DriftField* terminal,
                                                 const QuantileField& start, std::uint64_t start_node,
                                                 std::uint64_t end_node, const CostModel& model,
                                                 const SimulationSpec& base,
                                                 std::span<const std::uint64_t> stream_ids);

struct Probe {
  double t = 0.0;
  QuantileField mu;
};

// max over probes of the L2 distance between sections.
double field_distance(const DriftField& a, const DriftField& b, std::span<const Probe> probes);

enum class Initialization { zero, terminal };

struct SolverConfig {
  double horizon = 0.27;
  double h = 0.01;
  std::size_t grid_size = 128;
  NoiseModel noise;
  Dynamics dynamics = Dynamics::rshe;
  double block_length = 0.0;  // 0: admissible_block_length
  double safety = 0.8;
  double picard_tol = 1e-4;
  std::size_t min_picard = 3;
  std::size_t max_picard = 30;
  std::size_t outer_scenarios = 32;
  std::size_t inner_paths = 200;
  std::size_t neighbors = 3;
  InterpolationKind interpolation = InterpolationKind::regression;
  std::size_t interpolation_modes = 3;
  std::size_t min_sweeps = 3;
  std::size_t max_sweeps = 8;
  double sweep_tol = 1e-4;
  std::size_t regression_modes = 6;
  Initialization init = Initialization::zero;
  std::size_t threads = 1;

  std::size_t num_steps() const;
  void validate() const;
};

struct BlockLog {
  std::size_t sweep = 0;
  std::size_t first_node = 0;
  std::size_t end_node = 0;
  double delta = 0.0;
  ContractionReport constants;
  std::vector<double> distances;  // d(V_{m+1}, V_m), m = 0, 1, ...
  std::vector<double> ratios;     // distances[m] / distances[m-1]
  std::vector<double> residuals;  // Pontryagin gap of each iterate V_m
  bool converged = false;
  bool contraction_lost = false;  // rho_m >= 1 for some m >= 2
  bool halved = false;
};

struct SweepLog {
  std::size_t sweep = 0;
  double change = 0.0;  // distance to the previous sweep's field on the new libraries
};

class PicardError : public NumericalError {
 public:
  PicardError(const std::string& what, BlockLog log) : NumericalError(what), log_(std::move(log)) {}
  const BlockLog& log() const noexcept { return log_; }

 private:
  BlockLog log_;
};

// V_0 for the solve: zero before T (d_x g at T), or d_x g everywhere.
std::shared_ptr<const DriftField> make_initial_field(Initialization init, std::shared_ptr<const CostModel> model,
                                                     double horizon, double h);

struct BlockResult {
  std::vector<std::shared_ptr<const NodeTable>> tables;  // nodes first..end-1
  BlockLog log;
};

// Picard iteration on nodes [first, end). `field` supplies V_0 on the block
// and the terminal section at `end`; starts are the scenario states at
// `first`. Throws PicardError when the tolerance is not reached.
BlockResult picard_block(const TabulatedField& field, std::size_t first, std::size_t end,
                         std::span<const QuantileField> starts, const CostModel& model,
                         const SolverConfig& config, std::size_t sweep = 0);

struct SolveResult {
  std::shared_ptr<TabulatedField> field;
  ContractionReport constants;
  double block_length = 0.0;
  std::vector<BlockLog> blocks;
  std::vector<SweepLog> sweeps;
  bool converged = false;
  std::string failure;  // non-empty when a block aborted; field is partial
};

SolveResult solve_equilibrium(std::shared_ptr<const CostModel> model, const QuantileField& x0,
                              const SolverConfig& config);

struct RegressionSpec {
  std::size_t modes = 6;
  double ridge = 1e-8;
  std::vector<std::size_t> probe_nodes;  // bundle-relative; empty = every node but the last
};

struct ResidualAtNode {
  std::size_t node = 0;
  double time = 0.0;
  double gap = 0.0;          // L2 over (path, x) of the fitted E[Y - U | mu_t]
  double noise_floor = 0.0;  // expected gap under E[Y - U | mu_t] = 0
  bool ridge = false;
};

struct ResidualReport {
  std::vector<ResidualAtNode> nodes;
  double gap = 0.0;  // RMS over probe nodes
  double noise_floor = 0.0;
};

// Least-squares E[D | features] for row samples; returns the L2 gap of the
// fitted values and the matching noise floor.
ResidualAtNode regression_gap(const std::vector<std::vector<double>>& features,
                              const std::vector<std::vector<double>>& targets, double ridge);

// Cosine features (1, a_0 .. a_{m-1}) of a quantile vector.
std::vector<double> measure_features(std::span<const double> q, std::size_t modes);

// The bundle must store states (and preferably drift sections) and have
// been generated under U. Targets use U at the bundle's last node as the
// terminal section.
ResidualReport pontryagin_residual(const DriftField& u, const PathBundle& bundle, const CostModel& model,
                                   const RegressionSpec& spec);

// E int [d_x g(X_T) Gamma_T + sum_n (d_x f(X_n) Gamma_n - U_n gamma_n) h] dx
// with Gamma_n = sum_{m<n} gamma_m h; U_n is the stored drift. Bundle must
// end at the horizon and store states and drift.
Estimate gateaux_check(const ControlPath& gamma, const PathBundle& bundle, const CostModel& model);

// (J(-U + eps gamma) - J(-U)) / eps
double gateaux_finite_difference(const ControlPath& gamma, const PathBundle& bundle, const CostModel& model,
                                 double eps);

// Persisted form: manifest.json plus node_NNNNN.csv per tabulated node
// (each row holds a scenario quantile vector followed by its section).
void save_field(const std::filesystem::path& dir, const TabulatedField& field, const std::string& extra_json = "{}");
std::shared_ptr<TabulatedField> load_field(const std::filesystem::path& dir,
                                           std::shared_ptr<const DriftField> fallback);

// Deterministic MFG by forward-backward Picard on the whole horizon:
// X_{n+1} = sort(X_n - h Y_n), Y_n = d_x g(X_N) + sum_{k>n} d_x f(X_k) h.
struct ClassicalMfgResult {
  std::vector<QuantileField> flow;
  std::vector<std::vector<double>> costate;
  std::size_t iterations = 0;
  double change = 0.0;
  bool converged = false;
};

ClassicalMfgResult classical_mfg_oracle(const CostModel& model, const QuantileField& x0, double horizon, double h,
                                        double tol = 1e-12, std::size_t max_iter = 2000, double damping = 1.0);

}  // namespace rshe
