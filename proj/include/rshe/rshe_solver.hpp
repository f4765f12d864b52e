// SPDX-License-Identifier: Apache-2.0
//
// Splitting scheme for the rearranged stochastic heat equation with drift:
// exact OU step over the forced modes 0..K with the drift frozen at the left
// mesh point, exact heat damping of the grid modes above K, then an
// ascending sort. Also the deterministic transport
// scheme x <- sort(x - h V).
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "rshe/drift_field.hpp"
#include "rshe/quantile_space.hpp"
#include "rshe/spectral_noise.hpp"
#include "rshe/statistics.hpp"

namespace rshe {

enum class Dynamics {
  rshe,       // heat flow + Q-Wiener forcing + drift, then rearrangement
  transport,  // x - h V, then rearrangement (no diffusion, no noise)
};

struct RsheStepRecord {
  GridFunction pre_rearrange;
  QuantileField post_rearrange;
  std::vector<double> reflection_increment;  // post - pre, node by node
  double time = 0.0;
};

// Reusable single-step propagator for one grid size, mode count and step.
class RsheStepper {
 public:
  RsheStepper(std::size_t grid_size, const NoiseModel& noise, double h, Dynamics dynamics = Dynamics::rshe);

  // Overwrites x with the pre-rearrangement state after one step. drift is
  // the section of V at the left mesh point (may be empty for V = 0).
  void linear_step(std::span<double> x, std::span<const double> drift, const RandomStream& stream,
                   std::uint64_t step) const;

  std::size_t grid_size() const noexcept { return grid_size_; }
  double step_size() const noexcept { return h_; }
  Dynamics dynamics() const noexcept { return dynamics_; }

 private:
  std::size_t grid_size_;
  double h_;
  Dynamics dynamics_;
  std::unique_ptr<CosineBasis> basis_;
  std::unique_ptr<OuPropagator> propagator_;
  // Modes K+1..M-1 of the state are carried with their exact heat damping
  // when it does not underflow; otherwise they are dropped.
  std::unique_ptr<CosineBasis> full_basis_;
  std::vector<double> tail_decay_;
};

RsheStepRecord rshe_step(const QuantileField& x, const GridFunction& drift_section, double h,
                         const NoiseModel& noise, const RandomStream& stream, std::uint64_t step = 0,
                         double time = 0.0);

// rearrange(x - h drift)
QuantileField deterministic_step(const QuantileField& x, const GridFunction& drift_section, double h);

struct SimulationSpec {
  double horizon = 1.0;  // simulated duration, a multiple of h
  double h = 1e-3;
  std::size_t paths = 1;
  NoiseModel noise;
  Dynamics dynamics = Dynamics::rshe;
  // Absolute mesh index of the first state. Drift is evaluated at
  // t = (start_node + n) h and the step counter of the RNG is global, so a
  // path restarted mid-horizon with the same stream continues the same noise.
  std::uint64_t start_node = 0;
  // Stream family; path p draws from mix_stream_id({stream_tag, p}) unless
  // explicit ids are passed.
  std::uint64_t stream_tag = 0;
  std::size_t threads = 1;
  bool store_states = false;
  bool store_drift = false;

  std::size_t num_steps() const;  // validates the horizon
  void validate() const;
};

// Called once per path and mesh node with the (sorted) state, node counted
// from start_node. Calls for distinct paths may run concurrently.
using StepObserver = std::function<void(std::size_t path, std::size_t node, const QuantileField& state)>;

class PathBundle {
 public:
  PathBundle(std::size_t paths, std::size_t steps, std::size_t grid_size, double h, std::uint64_t start_node,
             bool store_states, bool store_drift);

  std::size_t num_paths() const noexcept { return paths_; }
  std::size_t num_steps() const noexcept { return steps_; }
  std::size_t grid_size() const noexcept { return grid_; }
  double step() const noexcept { return h_; }
  std::uint64_t start_node() const noexcept { return start_node_; }
  double time(std::size_t node) const { return static_cast<double>(start_node_ + node) * h_; }
  bool has_states() const noexcept { return !states_.empty(); }
  bool has_drift() const noexcept { return !drift_.empty(); }

  // State at node n (0..steps). Without stored states only the first and
  // last nodes are available.
  std::span<const double> state(std::size_t path, std::size_t node) const;
  QuantileField state_field(std::size_t path, std::size_t node) const;
  std::span<const double> drift(std::size_t path, std::size_t node) const;

  // Per-node statistics, always recorded.
  double energy(std::size_t path, std::size_t node) const { return energy_[path * (steps_ + 1) + node]; }
  double norm_sq(std::size_t path, std::size_t node) const { return norm_sq_[path * (steps_ + 1) + node]; }
  double tie_fraction(std::size_t path, std::size_t node) const { return ties_[path * (steps_ + 1) + node]; }
  // <post, post - pre> for the step node -> node + 1.
  double reflection(std::size_t path, std::size_t step) const { return reflection_[path * steps_ + step]; }

  std::uint64_t stream_id(std::size_t path) const { return stream_ids_[path]; }
  std::uint64_t seed() const noexcept { return seed_; }

  // Row-major dump of all states of one path ((steps + 1) x M float64).
  std::span<const double> path_states(std::size_t path) const;

 private:
  friend class BundleWriter;
  std::size_t paths_, steps_, grid_;
  double h_;
  std::uint64_t start_node_;
  std::uint64_t seed_ = 0;
  std::vector<double> states_;
  std::vector<double> first_, last_;
  std::vector<double> drift_;
  std::vector<double> energy_, norm_sq_, ties_, reflection_;
  std::vector<std::uint64_t> stream_ids_;
};

// All paths start from x0.
PathBundle simulate(const QuantileField& x0, const DriftField* drift, const SimulationSpec& spec,
                    const StepObserver& observer = {}, std::span<const std::uint64_t> stream_ids = {});
// Path p starts from starts[p].
PathBundle simulate(std::span<const QuantileField> starts, const DriftField* drift, const SimulationSpec& spec,
                    const StepObserver& observer = {}, std::span<const std::uint64_t> stream_ids = {});
PathBundle simulate_driftless(const QuantileField& x0, const SimulationSpec& spec);

// Full step records of one path.
std::vector<RsheStepRecord> simulate_records(const QuantileField& x0, const DriftField* drift,
                                             const SimulationSpec& spec, std::size_t path = 0);

// Monte Carlo estimate of E[phi(X_t)] for the driftless process from mu.
Estimate semigroup_apply(const std::function<double(const QuantileField&)>& phi, double t,
                         const DiscreteMeasure& mu, std::size_t grid_size, const SimulationSpec& spec);

// Sum over steps of <post, post - pre>_2.
double reflection_orthogonality(std::span<const RsheStepRecord> records);
// Ensemble mean over paths of the same sum.
Estimate reflection_orthogonality(const PathBundle& bundle);

}  // namespace rshe
