// SPDX-License-Identifier: Apache-2.0
#include "rshe/cost_models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "rshe/error.hpp"
#include "rshe/rng.hpp"
#include "rshe/rshe_solver.hpp"

namespace rshe {

void CostModel::dxf_section(const QuantileField& state, std::span<double> out) const {
  const DiscreteMeasure mu = measure_from_quantile(state);
  for (std::size_t i = 0; i < state.size(); ++i) out[i] = dxf(state[i], mu);
}

void CostModel::dxg_section(const QuantileField& state, std::span<double> out) const {
  const DiscreteMeasure mu = measure_from_quantile(state);
  for (std::size_t i = 0; i < state.size(); ++i) out[i] = dxg(state[i], mu);
}

void CostModel::f_at(std::span<const double> y, const QuantileField& state, std::span<double> out) const {
  const DiscreteMeasure mu = measure_from_quantile(state);
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = f(y[i], mu);
}

void CostModel::g_at(std::span<const double> y, const QuantileField& state, std::span<double> out) const {
  const DiscreteMeasure mu = measure_from_quantile(state);
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = g(y[i], mu);
}

namespace {

// Families whose measure dependence is through the mean only. The section
// overrides skip building the empirical measure.
class MeanCost : public CostModel {
 public:
  virtual double f_m(double x, double m) const = 0;
  virtual double g_m(double x, double m) const = 0;
  virtual double dxf_m(double x, double m) const = 0;
  virtual double dxg_m(double x, double m) const = 0;

  double f(double x, const DiscreteMeasure& mu) const override { return f_m(x, mu.mean()); }
  double g(double x, const DiscreteMeasure& mu) const override { return g_m(x, mu.mean()); }
  double dxf(double x, const DiscreteMeasure& mu) const override { return dxf_m(x, mu.mean()); }
  double dxg(double x, const DiscreteMeasure& mu) const override { return dxg_m(x, mu.mean()); }

  void dxf_section(const QuantileField& state, std::span<double> out) const override {
    const double m = field_mean(state.values());
    for (std::size_t i = 0; i < state.size(); ++i) out[i] = dxf_m(state[i], m);
  }
  void dxg_section(const QuantileField& state, std::span<double> out) const override {
    const double m = field_mean(state.values());
    for (std::size_t i = 0; i < state.size(); ++i) out[i] = dxg_m(state[i], m);
  }
  void f_at(std::span<const double> y, const QuantileField& state, std::span<double> out) const override {
    const double m = field_mean(state.values());
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = f_m(y[i], m);
  }
  void g_at(std::span<const double> y, const QuantileField& state, std::span<double> out) const override {
    const double m = field_mean(state.values());
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = g_m(y[i], m);
  }
};

class ConstantCost final : public MeanCost {
 public:
  ConstantCost(double kf, double kg) : kf_(kf), kg_(kg) {}
  double f_m(double x, double) const override { return kf_ * x; }
  double g_m(double x, double) const override { return kg_ * x; }
  double dxf_m(double, double) const override { return kf_; }
  double dxg_m(double, double) const override { return kg_; }
  double lip_const() const override { return 0.0; }
  double bound_const() const override { return std::max(std::abs(kf_), std::abs(kg_)); }
  std::string name() const override { return kf_ == 0.0 && kg_ == 0.0 ? "zero" : "constant"; }

 private:
  double kf_;
  double kg_;
};

// log cosh without overflow.
double log_cosh(double z) {
  const double a = std::abs(z);
  return a + std::log1p(std::exp(-2.0 * a)) - std::numbers::ln2;
}

class TanhCost final : public MeanCost {
 public:
  TanhCost(double a, double b, double cg, double bg) : a_(a), b_(b), cg_(cg), bg_(bg) {}
  double f_m(double x, double m) const override {
    return (log_cosh(a_ * x + b_ * m) - log_cosh(b_ * m)) / a_;
  }
  double g_m(double x, double m) const override {
    return (log_cosh(cg_ * x + bg_ * m) - log_cosh(bg_ * m)) / cg_;
  }
  double dxf_m(double x, double m) const override { return std::tanh(a_ * x + b_ * m); }
  double dxg_m(double x, double m) const override { return std::tanh(cg_ * x + bg_ * m); }
  double lip_const() const override {
    return std::max({a_, std::abs(b_), cg_, std::abs(bg_)});
  }
  double bound_const() const override { return 1.0; }
  std::string name() const override { return "tanh"; }

 private:
  double a_, b_, cg_, bg_;
};

class ClippedLinearCost final : public MeanCost {
 public:
  ClippedLinearCost(double a, double b, double clip) : a_(a), b_(b), clip_(clip) {}
  double f_m(double x, double m) const override {
    const double c = b_ * m;
    return (prim(a_ * x + c) - prim(c)) / a_;
  }
  double g_m(double x, double m) const override { return f_m(x, m); }
  double dxf_m(double x, double m) const override { return std::clamp(a_ * x + b_ * m, -clip_, clip_); }
  double dxg_m(double x, double m) const override { return dxf_m(x, m); }
  double lip_const() const override { return std::max(a_, std::abs(b_)); }
  double bound_const() const override { return clip_; }
  std::string name() const override { return "clipped-linear"; }

 private:
  // Antiderivative of clamp(z, -clip, clip) vanishing at 0.
  double prim(double z) const {
    const double az = std::abs(z);
    return az <= clip_ ? 0.5 * z * z : clip_ * az - 0.5 * clip_ * clip_;
  }
  double a_, b_, clip_;
};

DiscreteMeasure random_measure(const RandomStream& rs, std::uint64_t step, std::size_t atoms,
                               double spread, std::vector<double>& locations) {
  locations.resize(atoms);
  const double shift = spread * rs.normal(step, 0);
  for (std::size_t j = 0; j < atoms; ++j) {
    locations[j] = shift + spread * rs.normal(step, static_cast<std::uint32_t>(j + 1));
  }
  std::vector<Atom> a(atoms);
  for (std::size_t j = 0; j < atoms; ++j) a[j] = {locations[j], 1.0 / static_cast<double>(atoms)};
  return DiscreteMeasure(std::move(a));
}

double sorted_l2(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return l2_distance(a, b);
}

}  // namespace

std::shared_ptr<const CostModel> make_zero_cost() { return std::make_shared<ConstantCost>(0.0, 0.0); }

std::shared_ptr<const CostModel> make_constant_cost(double kappa_f, double kappa_g) {
  if (!std::isfinite(kappa_f) || !std::isfinite(kappa_g)) {
    throw DomainError("constant cost: non-finite slope");
  }
  return std::make_shared<ConstantCost>(kappa_f, kappa_g);
}

std::shared_ptr<const CostModel> make_tanh_family(double a, double b, double c_g, double b_g) {
  if (!(a > 0.0) || !(c_g > 0.0)) throw DomainError("tanh family: a and c_g must be positive");
  if (!std::isfinite(a) || !std::isfinite(b) || !std::isfinite(c_g) || !std::isfinite(b_g)) {
    throw DomainError("tanh family: non-finite parameter");
  }
  return std::make_shared<TanhCost>(a, b, c_g, b_g);
}

std::shared_ptr<const CostModel> make_clipped_linear_family(double a, double b, double clip) {
  if (!(a > 0.0) || !(clip > 0.0) || !std::isfinite(a) || !std::isfinite(clip) || !std::isfinite(b)) {
    throw DomainError("clipped-linear family: a and clip must be positive and finite");
  }
  return std::make_shared<ClippedLinearCost>(a, b, clip);
}

CostInvariantReport check_cost_invariants(const CostModel& model, std::size_t samples,
                                          std::uint64_t seed) {
  CostInvariantReport rep;
  const RandomStream rs(seed, mix_stream_id({0xC057, 1}));
  const RandomStream rp(seed, mix_stream_id({0xC057, 2}));
  constexpr std::size_t kAtoms = 5;
  std::vector<double> loc_a, loc_b;
  const double bound = model.bound_const();
  const double lip = model.lip_const();
  for (std::size_t s = 0; s < samples; ++s) {
    const double spread = 0.1 + 4.0 * rs.uniform(s, 100);
    const DiscreteMeasure mu = random_measure(rs, s, kAtoms, spread, loc_a);
    const DiscreteMeasure nu = random_measure(rp, s, kAtoms, spread, loc_b);
    const double x = 5.0 * rs.normal(s, 101);
    const double x2 = x + std::abs(rs.normal(s, 102));  // x <= x2
    const double xn = x + 0.5 * rp.normal(s, 103);

    for (const bool terminal : {false, true}) {
      auto d = [&](double y, const DiscreteMeasure& m) { return terminal ? model.dxg(y, m) : model.dxf(y, m); };
      auto v = [&](double y, const DiscreteMeasure& m) { return terminal ? model.g(y, m) : model.f(y, m); };
      const double d0 = d(x, mu);
      rep.max_abs_derivative = std::max(rep.max_abs_derivative, std::abs(d0));
      if (d(x2, mu) < d0) ++rep.monotonicity_violations;
      const double sep = std::abs(x - xn) + sorted_l2(loc_a, loc_b);
      if (sep > 0.0) {
        rep.max_lipschitz_ratio = std::max(rep.max_lipschitz_ratio, std::abs(d0 - d(xn, nu)) / sep);
      }
      const double growth = std::abs(v(x, mu)) / std::sqrt(1.0 + x * x + mu.second_moment());
      rep.max_growth_ratio = std::max(rep.max_growth_ratio, growth);
    }
  }
  rep.ok = rep.max_abs_derivative <= bound * (1.0 + 1e-12) && rep.monotonicity_violations == 0 &&
           rep.max_lipschitz_ratio <= lip * (1.0 + 1e-6) && std::isfinite(rep.max_growth_ratio);
  return rep;
}

ControlPath::ControlPath(std::size_t num_paths, std::size_t num_steps, std::size_t grid_size)
    : paths_(num_paths), steps_(num_steps), grid_(grid_size), data_(num_paths * num_steps * grid_size, 0.0) {
  if (num_paths == 0 || grid_size == 0) throw DimensionError("ControlPath: empty shape");
}

std::span<double> ControlPath::at(std::size_t path, std::size_t step) {
  if (path >= paths_ || step >= steps_) throw DimensionError("ControlPath::at: index out of range");
  return {data_.data() + (path * steps_ + step) * grid_, grid_};
}

std::span<const double> ControlPath::at(std::size_t path, std::size_t step) const {
  if (path >= paths_ || step >= steps_) throw DimensionError("ControlPath::at: index out of range");
  return {data_.data() + (path * steps_ + step) * grid_, grid_};
}

std::vector<double> ControlPath::integrated(std::size_t path, std::size_t node, double h) const {
  if (node > steps_) throw DimensionError("ControlPath::integrated: node out of range");
  std::vector<double> out(grid_, 0.0);
  for (std::size_t m = 0; m < node; ++m) {
    const auto g = at(path, m);
    for (std::size_t i = 0; i < grid_; ++i) out[i] += g[i] * h;
  }
  return out;
}

Estimate cost_J(const ControlPath& gamma, const PathBundle& env, const CostModel& model) {
  const std::size_t paths = env.num_paths();
  const std::size_t steps = env.num_steps();
  const std::size_t m = env.grid_size();
  if (!env.has_states() || !env.has_drift()) {
    throw DomainError("cost_J: environment must store states and drift sections");
  }
  if (gamma.num_paths() != paths || gamma.num_steps() != steps || gamma.grid_size() != m) {
    throw DimensionError("cost_J: control shape does not match the environment");
  }
  const double h = env.step();
  std::vector<double> per_path(paths);
  std::vector<double> shift(m), y(m), val(m);
  for (std::size_t p = 0; p < paths; ++p) {
    std::fill(shift.begin(), shift.end(), 0.0);
    double total = 0.0;
    for (std::size_t n = 0; n <= steps; ++n) {
      const QuantileField x(std::vector<double>(env.state(p, n).begin(), env.state(p, n).end()));
      for (std::size_t i = 0; i < m; ++i) y[i] = x[i] + shift[i];
      if (n > 0) {
        model.f_at(y, x, val);
        total += h * field_mean(val);
      }
      if (n == steps) {
        model.g_at(y, x, val);
        total += field_mean(val);
        break;
      }
      const auto g = gamma.at(p, n);
      const auto v = env.drift(p, n);
      double c = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        c += 0.5 * g[i] * g[i];
        shift[i] += (g[i] + v[i]) * h;
      }
      total += h * c / static_cast<double>(m);
    }
    per_path[p] = total;
  }
  return estimate(per_path);
}

DisplacementReport displacement_check(const CostModel& model, std::size_t n_pairs, std::uint64_t seed,
                                      std::size_t sample_size, double spread) {
  if (n_pairs == 0 || sample_size == 0) throw DomainError("displacement_check: empty sample");
  DisplacementReport rep;
  rep.min_f = rep.min_g = std::numeric_limits<double>::infinity();
  const RandomStream rs(seed, mix_stream_id({0xD15C, 1}));
  std::vector<double> xa(sample_size), xb(sample_size), da(sample_size), db(sample_size);
  double sum_f = 0.0, sum_g = 0.0;
  for (std::size_t s = 0; s < n_pairs; ++s) {
    // X and X' live on a common probability space of sample_size equally
    // likely outcomes; the pairing (X_j, X'_j) is the coupling.
    const double shift_a = spread * rs.normal(s, 0);
    const double shift_b = spread * rs.normal(s, 1);
    const double scale_a = spread * rs.uniform(s, 2);
    const double scale_b = spread * rs.uniform(s, 3);
    for (std::size_t j = 0; j < sample_size; ++j) {
      const auto idx = static_cast<std::uint32_t>(4 + 2 * j);
      xa[j] = shift_a + scale_a * rs.normal(s, idx);
      xb[j] = shift_b + scale_b * rs.normal(s, idx + 1);
    }
    std::vector<Atom> atoms_a(sample_size), atoms_b(sample_size);
    const double w = 1.0 / static_cast<double>(sample_size);
    for (std::size_t j = 0; j < sample_size; ++j) {
      atoms_a[j] = {xa[j], w};
      atoms_b[j] = {xb[j], w};
    }
    const DiscreteMeasure mua(std::move(atoms_a)), mub(std::move(atoms_b));
    double ip_f = 0.0, ip_g = 0.0;
    for (std::size_t j = 0; j < sample_size; ++j) {
      ip_f += (xa[j] - xb[j]) * (model.dxf(xa[j], mua) - model.dxf(xb[j], mub));
      ip_g += (xa[j] - xb[j]) * (model.dxg(xa[j], mua) - model.dxg(xb[j], mub));
    }
    ip_f *= w;
    ip_g *= w;
    rep.min_f = std::min(rep.min_f, ip_f);
    rep.min_g = std::min(rep.min_g, ip_g);
    sum_f += ip_f;
    sum_g += ip_g;
  }
  rep.mean_f = sum_f / static_cast<double>(n_pairs);
  rep.mean_g = sum_g / static_cast<double>(n_pairs);
  rep.monotone = rep.min_f >= -1e-9 && rep.min_g >= -1e-9;
  return rep;
}

}  // namespace rshe
