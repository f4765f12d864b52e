// SPDX-License-Identifier: Apache-2.0
#include "rshe/rshe_solver.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rshe/error.hpp"
#include "rshe/parallel.hpp"

namespace rshe {

RsheStepper::RsheStepper(std::size_t grid_size, const NoiseModel& noise, double h, Dynamics dynamics)
    : grid_size_(grid_size), h_(h), dynamics_(dynamics) {
  if (grid_size == 0) throw DimensionError("RsheStepper: grid size must be positive");
  if (!(h > 0.0) || !std::isfinite(h)) throw DomainError("RsheStepper: h must be positive");
  if (dynamics == Dynamics::rshe) {
    noise.validate();
    basis_ = std::make_unique<CosineBasis>(grid_size, noise.num_modes);
    propagator_ = std::make_unique<OuPropagator>(noise, h);
    const std::size_t first_tail = noise.num_modes + 1;
    if (first_tail < grid_size && std::exp(-mode_rate(first_tail) * h) > 1e-17) {
      full_basis_ = std::make_unique<CosineBasis>(grid_size, grid_size - 1);
      tail_decay_.resize(grid_size - first_tail);
      for (std::size_t k = first_tail; k < grid_size; ++k) tail_decay_[k - first_tail] = std::exp(-mode_rate(k) * h);
    }
  }
}

void RsheStepper::linear_step(std::span<double> x, std::span<const double> drift, const RandomStream& stream,
                              std::uint64_t step) const {
  if (x.size() != grid_size_ || (!drift.empty() && drift.size() != grid_size_)) {
    throw DimensionError("rshe step: grid size mismatch");
  }
  if (dynamics_ == Dynamics::transport) {
    if (!drift.empty()) {
      for (std::size_t i = 0; i < x.size(); ++i) x[i] -= h_ * drift[i];
    }
    return;
  }
  const std::size_t modes = basis_->num_modes() + 1;
  thread_local std::vector<double> coeffs, dcoeffs;
  coeffs.resize(full_basis_ ? grid_size_ : modes);
  (full_basis_ ? *full_basis_ : *basis_).analyze(x, coeffs);
  const std::span<double> forced(coeffs.data(), modes);
  if (drift.empty()) {
    propagator_->apply(forced, {}, stream, step);
  } else {
    dcoeffs.resize(modes);
    basis_->analyze(drift, dcoeffs);
    for (auto& c : dcoeffs) c = -c;
    propagator_->apply(forced, dcoeffs, stream, step);
  }
  if (full_basis_) {
    for (std::size_t k = modes; k < grid_size_; ++k) coeffs[k] *= tail_decay_[k - modes];
    full_basis_->synthesize(coeffs, x);
  } else {
    basis_->synthesize(coeffs, x);
  }
}

RsheStepRecord rshe_step(const QuantileField& x, const GridFunction& drift_section, double h,
                         const NoiseModel& noise, const RandomStream& stream, std::uint64_t step, double time) {
  if (drift_section.size() != x.size()) throw DimensionError("rshe_step: drift and state grids differ");
  const RsheStepper stepper(x.size(), noise, h);
  std::vector<double> pre(x.values().begin(), x.values().end());
  stepper.linear_step(pre, drift_section.values(), stream, step);
  RsheStepRecord rec;
  rec.pre_rearrange = GridFunction(pre);
  rec.post_rearrange = rearrange(pre);
  rec.reflection_increment.resize(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) rec.reflection_increment[i] = rec.post_rearrange[i] - pre[i];
  rec.time = time + h;
  return rec;
}

QuantileField deterministic_step(const QuantileField& x, const GridFunction& drift_section, double h) {
  if (!(h > 0.0)) throw DomainError("deterministic_step: h must be positive");
  if (drift_section.size() != x.size()) throw DimensionError("deterministic_step: grid sizes differ");
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] - h * drift_section[i];
  return rearrange(std::move(y));
}

std::size_t SimulationSpec::num_steps() const {
  if (!(h > 0.0) || !std::isfinite(h)) throw ValidationError("simulation: h must be positive");
  if (!(horizon >= 0.0) || !std::isfinite(horizon)) throw ValidationError("simulation: horizon must be >= 0");
  const double r = std::round(horizon / h);
  if (std::abs(r * h - horizon) > 1e-12 * std::max(1.0, horizon)) {
    throw ValidationError("simulation: h = " + std::to_string(h) + " does not divide the horizon " +
                          std::to_string(horizon));
  }
  return static_cast<std::size_t>(r);
}

void SimulationSpec::validate() const {
  (void)num_steps();
  if (paths == 0) throw ValidationError("simulation: at least one path is required");
  if (dynamics == Dynamics::rshe) noise.validate();
}

PathBundle::PathBundle(std::size_t paths, std::size_t steps, std::size_t grid_size, double h,
                       std::uint64_t start_node, bool store_states, bool store_drift)
    : paths_(paths), steps_(steps), grid_(grid_size), h_(h), start_node_(start_node) {
  const std::size_t nodes = steps + 1;
  if (store_states) states_.assign(paths * nodes * grid_size, 0.0);
  if (store_drift) drift_.assign(paths * steps * grid_size, 0.0);
  first_.assign(paths * grid_size, 0.0);
  last_.assign(paths * grid_size, 0.0);
  energy_.assign(paths * nodes, 0.0);
  norm_sq_.assign(paths * nodes, 0.0);
  ties_.assign(paths * nodes, 0.0);
  reflection_.assign(paths * steps, 0.0);
  stream_ids_.assign(paths, 0);
}

std::span<const double> PathBundle::state(std::size_t path, std::size_t node) const {
  if (path >= paths_ || node > steps_) throw DimensionError("PathBundle::state: index out of range");
  if (!states_.empty()) return {states_.data() + (path * (steps_ + 1) + node) * grid_, grid_};
  if (node == steps_) return {last_.data() + path * grid_, grid_};
  if (node == 0) return {first_.data() + path * grid_, grid_};
  throw DomainError("PathBundle::state: intermediate states were not stored");
}

QuantileField PathBundle::state_field(std::size_t path, std::size_t node) const {
  const auto s = state(path, node);
  return QuantileField(std::vector<double>(s.begin(), s.end()));
}

std::span<const double> PathBundle::drift(std::size_t path, std::size_t node) const {
  if (drift_.empty()) throw DomainError("PathBundle::drift: drift sections were not stored");
  if (path >= paths_ || node >= steps_) throw DimensionError("PathBundle::drift: index out of range");
  return {drift_.data() + (path * steps_ + node) * grid_, grid_};
}

std::span<const double> PathBundle::path_states(std::size_t path) const {
  if (states_.empty()) throw DomainError("PathBundle::path_states: states were not stored");
  if (path >= paths_) throw DimensionError("PathBundle::path_states: index out of range");
  return {states_.data() + path * (steps_ + 1) * grid_, (steps_ + 1) * grid_};
}

class BundleWriter {
 public:
  explicit BundleWriter(PathBundle& b) : b_(b) {}

  void set_meta(std::uint64_t seed, std::span<const std::uint64_t> ids) {
    b_.seed_ = seed;
    std::copy(ids.begin(), ids.end(), b_.stream_ids_.begin());
  }

  void record_state(std::size_t p, std::size_t n, std::span<const double> x) const {
    const std::size_t nodes = b_.steps_ + 1;
    const std::size_t m = b_.grid_;
    if (!b_.states_.empty()) std::copy(x.begin(), x.end(), b_.states_.begin() + static_cast<std::ptrdiff_t>((p * nodes + n) * m));
    if (n == 0) std::copy(x.begin(), x.end(), b_.first_.begin() + static_cast<std::ptrdiff_t>(p * m));
    if (n == b_.steps_) std::copy(x.begin(), x.end(), b_.last_.begin() + static_cast<std::ptrdiff_t>(p * m));
    const double ns = l2_norm(x);
    b_.norm_sq_[p * nodes + n] = ns * ns;
    double e = 0.0;
    for (std::size_t i = 0; i + 1 < m; ++i) {
      const double d = x[i + 1] - x[i];
      e += d * d;
    }
    b_.energy_[p * nodes + n] = m < 2 ? 0.0 : 2.0 * static_cast<double>(m) * e;
    b_.ties_[p * nodes + n] = tie_fraction(x);
  }

  void record_drift(std::size_t p, std::size_t n, std::span<const double> v) const {
    if (b_.drift_.empty()) return;
    std::copy(v.begin(), v.end(),
              b_.drift_.begin() + static_cast<std::ptrdiff_t>((p * b_.steps_ + n) * b_.grid_));
  }

  void record_reflection(std::size_t p, std::size_t n, double value) const {
    b_.reflection_[p * b_.steps_ + n] = value;
  }

 private:
  PathBundle& b_;
};

namespace {

[[noreturn]] void rethrow_with_context(const std::exception& e, std::size_t path, double t) {
  const std::string ctx = "path " + std::to_string(path) + ", t = " + std::to_string(t) + ": " + e.what();
  if (dynamic_cast<const DimensionError*>(&e)) throw DimensionError(ctx);
  if (dynamic_cast<const DomainError*>(&e)) throw DomainError(ctx);
  if (dynamic_cast<const ValidationError*>(&e)) throw ValidationError(ctx);
  if (dynamic_cast<const IoError*>(&e)) throw IoError(ctx);
  throw NumericalError(ctx);
}

double reflection_pairing(std::span<const double> post, std::span<const double> pre) {
  double s = 0.0;
  for (std::size_t i = 0; i < post.size(); ++i) s += post[i] * (post[i] - pre[i]);
  return s / static_cast<double>(post.size());
}

PathBundle simulate_impl(std::span<const QuantileField> starts, bool broadcast, const DriftField* drift,
                         const SimulationSpec& spec, const StepObserver& observer,
                         std::span<const std::uint64_t> stream_ids) {
  spec.validate();
  const std::size_t steps = spec.num_steps();
  const std::size_t paths = spec.paths;
  if (starts.empty()) throw DimensionError("simulate: no initial state");
  if (!broadcast && starts.size() != paths) throw DimensionError("simulate: one start state per path required");
  if (!stream_ids.empty() && stream_ids.size() != paths) {
    throw DimensionError("simulate: one stream id per path required");
  }
  const std::size_t m = starts.front().size();
  for (const auto& s : starts) {
    if (s.size() != m) throw DimensionError("simulate: start states have different grid sizes");
  }
  const RsheStepper stepper(m, spec.noise, spec.h, spec.dynamics);

  std::vector<std::uint64_t> ids(paths);
  for (std::size_t p = 0; p < paths; ++p) {
    ids[p] = stream_ids.empty() ? mix_stream_id({spec.stream_tag, p}) : stream_ids[p];
  }
  PathBundle bundle(paths, steps, m, spec.h, spec.start_node, spec.store_states, spec.store_drift);
  BundleWriter writer(bundle);
  writer.set_meta(spec.noise.seed, ids);

  parallel_for(paths, spec.threads, [&](std::size_t p) {
    const RandomStream stream(spec.noise.seed, ids[p]);
    const auto x0 = broadcast ? starts.front().values() : starts[p].values();
    std::vector<double> x(x0.begin(), x0.end());
    std::vector<double> pre(m);
    QuantileField state(x);
    writer.record_state(p, 0, x);
    if (observer) observer(p, 0, state);
    for (std::size_t n = 0; n < steps; ++n) {
      const std::uint64_t node = spec.start_node + n;
      const double t = static_cast<double>(node) * spec.h;
      GridFunction v;
      if (drift != nullptr) {
        try {
          v = drift->eval(t, state);
        } catch (const std::exception& e) {
          rethrow_with_context(e, p, t);
        }
        if (v.size() != m) throw DimensionError("simulate: drift section has the wrong grid size");
        writer.record_drift(p, n, v.values());
      }
      stepper.linear_step(x, v.values(), stream, node);
      pre = x;
      for (const double xi : x) {
        if (!std::isfinite(xi)) {
          throw NumericalError("simulate: non-finite state on path " + std::to_string(p) + " at t = " +
                               std::to_string(t + spec.h));
        }
      }
      std::sort(x.begin(), x.end());
      writer.record_reflection(p, n, reflection_pairing(x, pre));
      writer.record_state(p, n + 1, x);
      if (observer) {
        state = QuantileField(x);
        observer(p, n + 1, state);
      } else if (drift != nullptr && n + 1 < steps) {
        state = QuantileField(x);
      }
    }
  });
  return bundle;
}

}  // namespace

PathBundle simulate(const QuantileField& x0, const DriftField* drift, const SimulationSpec& spec,
                    const StepObserver& observer, std::span<const std::uint64_t> stream_ids) {
  return simulate_impl(std::span<const QuantileField>(&x0, 1), true, drift, spec, observer, stream_ids);
}

PathBundle simulate(std::span<const QuantileField> starts, const DriftField* drift, const SimulationSpec& spec,
                    const StepObserver& observer, std::span<const std::uint64_t> stream_ids) {
  return simulate_impl(starts, false, drift, spec, observer, stream_ids);
}

PathBundle simulate_driftless(const QuantileField& x0, const SimulationSpec& spec) {
  return simulate(x0, nullptr, spec);
}

std::vector<RsheStepRecord> simulate_records(const QuantileField& x0, const DriftField* drift,
                                             const SimulationSpec& spec, std::size_t path) {
  spec.validate();
  const std::size_t steps = spec.num_steps();
  const std::size_t m = x0.size();
  const RsheStepper stepper(m, spec.noise, spec.h, spec.dynamics);
  const RandomStream stream(spec.noise.seed, mix_stream_id({spec.stream_tag, path}));
  std::vector<RsheStepRecord> out;
  out.reserve(steps);
  QuantileField state = x0;
  for (std::size_t n = 0; n < steps; ++n) {
    const std::uint64_t node = spec.start_node + n;
    const double t = static_cast<double>(node) * spec.h;
    std::vector<double> pre(state.values().begin(), state.values().end());
    GridFunction v;
    if (drift != nullptr) v = drift->eval(t, state);
    stepper.linear_step(pre, v.values(), stream, node);
    RsheStepRecord rec;
    rec.post_rearrange = rearrange(pre);
    rec.reflection_increment.resize(m);
    for (std::size_t i = 0; i < m; ++i) rec.reflection_increment[i] = rec.post_rearrange[i] - pre[i];
    rec.pre_rearrange = GridFunction(std::move(pre));
    rec.time = t + spec.h;
    state = rec.post_rearrange;
    out.push_back(std::move(rec));
  }
  return out;
}

Estimate semigroup_apply(const std::function<double(const QuantileField&)>& phi, double t,
                         const DiscreteMeasure& mu, std::size_t grid_size, const SimulationSpec& spec) {
  if (!(t >= 0.0)) throw DomainError("semigroup_apply: t must be >= 0");
  const QuantileField x0 = quantile_from_measure(mu, grid_size);
  if (t == 0.0) return {phi(x0), 0.0, 1};
  SimulationSpec s = spec;
  s.horizon = t;
  s.store_states = false;
  s.store_drift = false;
  const PathBundle b = simulate(x0, nullptr, s);
  std::vector<double> values(b.num_paths());
  for (std::size_t p = 0; p < b.num_paths(); ++p) values[p] = phi(b.state_field(p, b.num_steps()));
  return estimate(values);
}

double reflection_orthogonality(std::span<const RsheStepRecord> records) {
  if (records.empty()) throw DomainError("reflection_orthogonality: no records");
  double total = 0.0;
  for (const auto& r : records) {
    total += reflection_pairing(r.post_rearrange.values(), r.pre_rearrange.values());
  }
  return total;
}

Estimate reflection_orthogonality(const PathBundle& bundle) {
  if (bundle.num_steps() == 0) throw DomainError("reflection_orthogonality: no steps");
  std::vector<double> per_path(bundle.num_paths(), 0.0);
  for (std::size_t p = 0; p < bundle.num_paths(); ++p) {
    for (std::size_t n = 0; n < bundle.num_steps(); ++n) per_path[p] += bundle.reflection(p, n);
  }
  return estimate(per_path);
}

}  // namespace rshe
