// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "../support/oracles.hpp"
#include "rshe/cost_models.hpp"
#include "rshe/drift_field.hpp"
#include "rshe/error.hpp"
#include "rshe/mfg_fixed_point.hpp"

using namespace rshe;

namespace {

SolverConfig tiny_config() {
  SolverConfig c;
  c.horizon = 0.04;
  c.h = 0.01;
  c.grid_size = 16;
  c.noise.num_modes = 4;
  c.outer_scenarios = 4;
  c.inner_paths = 8;
  c.max_sweeps = 3;
  return c;
}

// Phi(V)(0, ., mu) for the mean-tanh drift by direct simulation: project on
// modes 0..K by cosine sums, exact OU update per mode, synthesise, sort.
// Modes above K are dropped (their heat factor is below 1e-17 here).
struct OracleEstimate {
  std::vector<double> mean, se;
};

OracleEstimate nested_phi(const CostModel& model, const std::vector<double>& x0, std::size_t modes, double h,
                          std::size_t steps, double amplitude, double lambda, std::size_t paths,
                          std::uint64_t seed) {
  const std::size_t m = x0.size();
  const double pi = std::numbers::pi;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> sum(m, 0.0), sum2(m, 0.0);
  for (std::size_t p = 0; p < paths; ++p) {
    std::vector<double> x = x0, y(m, 0.0);
    for (std::size_t n = 0; n < steps; ++n) {
      double mean = 0.0;
      for (const double v : x) mean += v / static_cast<double>(m);
      const double v = -amplitude * std::tanh(mean);  // drift section, constant in x
      auto c = oracle::analyze(x, modes + 1);
      c[0] += -v * h + std::sqrt(h) * nd(rng);
      for (std::size_t k = 1; k <= modes; ++k) {
        const double w = (2 * pi * k) * (2 * pi * k);
        const double q = std::pow(static_cast<double>(k), -lambda);
        c[k] = std::exp(-w * h) * c[k] + q * std::sqrt((1 - std::exp(-2 * w * h)) / (2 * w)) * nd(rng);
      }
      x = oracle::merge_sort(oracle::synth(c, m));
      std::vector<Atom> atoms;
      for (const double xv : x) atoms.push_back({xv, 1.0 / static_cast<double>(m)});
      const DiscreteMeasure mu(atoms);
      for (std::size_t i = 0; i < m; ++i) {
        y[i] += model.dxf(x[i], mu) * h;
        if (n + 1 == steps) y[i] += model.dxg(x[i], mu);
      }
    }
    for (std::size_t i = 0; i < m; ++i) {
      sum[i] += y[i];
      sum2[i] += y[i] * y[i];
    }
  }
  OracleEstimate e;
  for (std::size_t i = 0; i < m; ++i) {
    const double mu = sum[i] / paths;
    e.mean.push_back(mu);
    e.se.push_back(std::sqrt((sum2[i] / paths - mu * mu) / (paths - 1)));
  }
  return e;
}

}  // namespace

TEST_CASE("contraction constants") {
  const auto a = contraction_admissible(0.1, 1.0);
  CHECK(a.c == doctest::Approx(0.113636).epsilon(1e-5));
  CHECK(a.log_bound == doctest::Approx(std::numbers::ln2 / 5.4).epsilon(1e-12));
  CHECK(a.log_bound == doctest::Approx(0.128355).epsilon(1e-4));
  CHECK(a.c_c == doctest::Approx(std::sqrt(2.2)));
  CHECK(a.admissible);
  const auto b = contraction_admissible(0.2, 1.0);
  CHECK(b.c == doctest::Approx(0.104167).epsilon(1e-5));
  CHECK_FALSE(b.admissible);
  CHECK(contraction_admissible(1e-9, 1.0).admissible);
  CHECK(contraction_admissible(1e-9, 50.0).admissible);
  CHECK_THROWS_AS(contraction_admissible(-1.0, 1.0), DomainError);
}

TEST_CASE("admissible block length") {
  const double d = admissible_block_length(1.0, 0.01);
  CHECK(d == doctest::Approx(0.09));
  CHECK(d <= 0.8 * std::min(contraction_admissible(d, 1.0).c, contraction_admissible(d, 1.0).log_bound));
  CHECK(d + 0.01 > 0.8 * std::min(contraction_admissible(d + 0.01, 1.0).c,
                                  contraction_admissible(d + 0.01, 1.0).log_bound));
  CHECK(admissible_block_length(1000.0, 0.01) == doctest::Approx(0.02));
}

TEST_CASE("apply_phi: trivial costs") {
  PhiParams pp;
  pp.horizon = 1.0;
  pp.h = 0.05;
  pp.paths = 20;
  pp.noise.num_modes = 4;
  const auto q = QuantileField({-1.0, -0.5, 0.0, 0.1, 0.3, 0.7, 1.0, 2.0});
  const auto zero = apply_phi(*make_zero_field(), 0.0, q, *make_zero_cost(), pp);
  for (const double v : zero.section.values()) CHECK(v == 0.0);
  const auto half = apply_phi(*make_mean_tanh_field(0.4), 0.0, q, *make_constant_cost(0.5, 0.0), pp);
  for (const double v : half.section.values()) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
  const auto later = apply_phi(*make_zero_field(), 0.5, measure_from_quantile(q), 8, *make_constant_cost(0.5, 1.0), pp);
  for (const double v : later.section.values()) CHECK(v == doctest::Approx(1.25).epsilon(1e-12));
  CHECK_THROWS_AS(apply_phi(*make_zero_field(), 0.033, q, *make_zero_cost(), pp), ValidationError);
}

TEST_CASE("apply_phi: tanh family against a nested Monte Carlo oracle") {
  const auto model = make_tanh_family(1.0, -0.5, 1.0, -0.5);
  std::mt19937_64 rng(8);
  const auto x0 = oracle::random_monotone(rng, 8);
  PhiParams pp;
  pp.h = 0.05;
  pp.horizon = 0.1;
  pp.paths = 10000;
  pp.noise.num_modes = 4;
  pp.noise.seed = 3;
  const auto field = make_mean_tanh_field(0.5);
  const auto est = apply_phi(*field, 0.0, QuantileField(x0), *model, pp);
  const auto ref = nested_phi(*model, x0, 4, 0.05, 2, 0.5, pp.noise.lambda, 10000, 77);
  for (std::size_t i = 0; i < 8; ++i) {
    const double tol = 3.0 * std::hypot(est.std_error[i], ref.se[i]);
    CHECK(std::abs(est.section[i] - ref.mean[i]) <= tol);
  }
  // monotone and bounded by bound * (1 + T - t)
  for (std::size_t i = 1; i < 8; ++i) CHECK(est.section[i] >= est.section[i - 1]);
  for (const double v : est.section.values()) CHECK(std::abs(v) <= 1.1);
}

TEST_CASE("field_distance") {
  const auto q = QuantileField({0.0, 1.0});
  std::vector<Probe> probes{{0.0, q}, {0.5, q}};
  const auto a = make_time_field([](double) { return 1.0; }, 1.0);
  const auto b = make_time_field([](double) { return 1.25; }, 2.0);
  CHECK(field_distance(*a, *a, probes) == 0.0);
  CHECK(field_distance(*a, *b, probes) == doctest::Approx(0.25));
  CHECK_THROWS_AS(field_distance(*a, *b, std::span<const Probe>{}), DomainError);

  std::mt19937_64 rng(9);
  TabulatedField t1(0.1, 3, 6, nullptr), t2(0.1, 3, 6, nullptr);
  double brute = 0.0;
  std::vector<Probe> all;
  for (std::size_t n = 0; n < 3; ++n) {
    auto x = std::make_shared<NodeTable>(), y = std::make_shared<NodeTable>();
    for (int s = 0; s < 5; ++s) {
      const auto sc = oracle::random_monotone(rng, 6);
      x->scenarios.push_back(sc);
      y->scenarios.push_back(sc);
      x->sections.push_back(oracle::random_monotone(rng, 6));
      y->sections.push_back(oracle::random_monotone(rng, 6));
      double acc = 0.0;
      for (int i = 0; i < 6; ++i) acc += std::pow(x->sections.back()[i] - y->sections.back()[i], 2);
      brute = std::max(brute, std::sqrt(acc / 6));
      all.push_back({0.1 * n, QuantileField(sc)});
    }
    t1.set_node(n, x);
    t2.set_node(n, y);
  }
  CHECK(field_distance(t1, t2, all) == doctest::Approx(brute).epsilon(1e-12));
}

TEST_CASE("solver configuration validation") {
  auto c = tiny_config();
  CHECK_NOTHROW(c.validate());
  c.h = 0.03;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = tiny_config();
  c.noise.num_modes = 16;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = tiny_config();
  c.picard_tol = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = tiny_config();
  c.min_picard = 50;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("solve: zero costs give the zero field") {
  auto c = tiny_config();
  const auto res = solve_equilibrium(make_zero_cost(), QuantileField::constant(16, 0.2), c);
  REQUIRE(res.failure.empty());
  CHECK(res.converged);
  std::mt19937_64 rng(10);
  for (std::size_t n = 0; n <= 4; ++n) {
    const auto s = res.field->eval(0.01 * n, QuantileField(oracle::random_monotone(rng, 16)));
    for (const double v : s.values()) CHECK(v == 0.0);
  }
  for (const auto& b : res.blocks) CHECK(b.distances.front() == 0.0);
}

TEST_CASE("solve: constant costs give kappa (T - t)") {
  auto c = tiny_config();
  c.horizon = 0.06;
  c.block_length = 0.02;
  const auto res = solve_equilibrium(make_constant_cost(0.3, 0.0), QuantileField::constant(16, 0.0), c);
  REQUIRE(res.failure.empty());
  CHECK(res.converged);
  std::mt19937_64 rng(11);
  for (std::size_t n = 0; n <= 6; ++n) {
    const auto s = res.field->eval(0.01 * n, QuantileField(oracle::random_monotone(rng, 16)));
    for (const double v : s.values()) CHECK(v == doctest::Approx(0.3 * (0.06 - 0.01 * n)).epsilon(1e-12));
  }
  CHECK(res.blocks.size() >= 3);
  // zero initial iterate, one Picard step lands on the fixed point
  for (const auto& b : res.blocks) {
    if (b.sweep == 1) continue;
    CHECK(b.distances.back() < 1e-12);
  }
}

TEST_CASE("solve: terminal initialisation on constant costs") {
  auto c = tiny_config();
  c.init = Initialization::terminal;
  const auto res = solve_equilibrium(make_constant_cost(0.0, 0.7), QuantileField::constant(16, 0.0), c);
  REQUIRE(res.failure.empty());
  const auto s = res.field->eval(0.0, QuantileField::constant(16, 1.0));
  for (const double v : s.values()) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("picard_block: non-convergence raises with the log") {
  auto c = tiny_config();
  c.max_picard = 1;
  c.min_picard = 1;
  c.picard_tol = 1e-30;
  const auto model = make_tanh_family(1.0, -0.5, 1.0, -0.5);
  TabulatedField f(0.01, 5, 16, make_initial_field(Initialization::zero, model, 0.04, 0.01));
  std::vector<QuantileField> starts(2, QuantileField::constant(16, 0.5));
  try {
    (void)picard_block(f, 2, 4, starts, *model, c, 1);
    FAIL("expected PicardError");
  } catch (const PicardError& e) {
    CHECK(e.log().distances.size() == 1);
    CHECK(e.log().first_node == 2);
  }
}

TEST_CASE("regression gap on synthetic data") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd;
  std::vector<std::vector<double>> feats, zero_mean, shifted;
  for (int r = 0; r < 400; ++r) {
    const double z = nd(rng);
    feats.push_back({1.0, z});
    zero_mean.push_back({nd(rng), nd(rng)});
    shifted.push_back({2.0 * z, 2.0 * z});
  }
  const auto a = regression_gap(feats, zero_mean, 1e-8);
  CHECK(a.gap < 3.0 * a.noise_floor);
  const auto b = regression_gap(feats, shifted, 1e-8);
  CHECK(b.gap == doctest::Approx(std::sqrt(4.0 * 1.0)).epsilon(0.15));
  CHECK(b.noise_floor < 1e-10);
  // duplicate column triggers the ridge path
  for (auto& f : feats) f.push_back(f[1]);
  CHECK(regression_gap(feats, shifted, 1e-8).ridge);
}

TEST_CASE("measure features are cosine coefficients") {
  std::mt19937_64 rng(13);
  const auto q = oracle::random_monotone(rng, 32);
  const auto f = measure_features(q, 5);
  const auto c = oracle::analyze(q, 5);
  CHECK(f[0] == 1.0);
  for (std::size_t k = 0; k < 5; ++k) CHECK(f[k + 1] == doctest::Approx(c[k]).epsilon(1e-12));
}

TEST_CASE("Pontryagin residual and Gateaux derivative: trivial cases") {
  SimulationSpec spec;
  spec.h = 0.01;
  spec.horizon = 0.1;
  spec.paths = 30;
  spec.noise.num_modes = 4;
  spec.store_states = true;
  spec.store_drift = true;
  std::mt19937_64 rng(14);
  const QuantileField x0(oracle::random_monotone(rng, 16));

  SUBCASE("zero costs") {
    const auto u = make_zero_field();
    const auto b = simulate(x0, u.get(), spec);
    const auto r = pontryagin_residual(*u, b, *make_zero_cost(), {});
    CHECK(r.gap == 0.0);
    ControlPath g(30, 10, 16);
    for (std::size_t p = 0; p < 30; ++p) {
      for (std::size_t n = 0; n < 10; ++n) {
        for (auto& v : g.at(p, n)) v = std::normal_distribution<double>()(rng);
      }
    }
    CHECK(gateaux_check(g, b, *make_zero_cost()).mean == 0.0);
  }
  SUBCASE("constant costs with the exact field") {
    const double kappa = 0.4, T = 0.1;
    const auto u = make_time_field([=](double t) { return kappa * (T - t); }, kappa * T);
    const auto b = simulate(x0, u.get(), spec);
    const auto r = pontryagin_residual(*u, b, *make_constant_cost(kappa, 0.0), {});
    CHECK(r.gap <= 3.0 * r.noise_floor + 1e-12);
    CHECK(r.gap < 1e-12);
    ControlPath zero(30, 10, 16);
    CHECK(gateaux_check(zero, b, *make_constant_cost(kappa, 0.0)).mean == 0.0);
  }
  SUBCASE("wrong field is detected") {
    const auto u = make_zero_field();
    const auto b = simulate(x0, u.get(), spec);
    const auto r = pontryagin_residual(*u, b, *make_constant_cost(0.4, 0.0), {});
    CHECK(r.gap > 10.0 * r.noise_floor);
  }
}

TEST_CASE("Gateaux derivative agrees with finite differences of J") {
  SimulationSpec spec;
  spec.h = 0.01;
  spec.horizon = 0.05;
  spec.paths = 6;
  spec.noise.num_modes = 4;
  spec.store_states = true;
  spec.store_drift = true;
  std::mt19937_64 rng(15);
  const auto model = make_tanh_family(1.0, -0.5, 1.0, -0.5);
  const auto u = make_mean_tanh_field(0.3);
  const auto b = simulate(QuantileField(oracle::random_monotone(rng, 16)), u.get(), spec);
  ControlPath g(6, 5, 16);
  for (std::size_t p = 0; p < 6; ++p) {
    for (std::size_t n = 0; n < 5; ++n) {
      for (auto& v : g.at(p, n)) v = std::normal_distribution<double>()(rng);
    }
  }
  // The environment is frozen, so J(-U + eps gamma) is smooth in eps and the
  // central difference approximates the directional derivative.
  const double lhs = gateaux_check(g, b, *model).mean;
  const double central = 0.5 * (gateaux_finite_difference(g, b, *model, 1e-3) +
                                gateaux_finite_difference(g, b, *model, -1e-3));
  CHECK(lhs == doctest::Approx(central).epsilon(1e-5));
}

TEST_CASE("field persistence round trip") {
  auto c = tiny_config();
  const auto model = make_tanh_family(1.0, -0.5, 1.0, -0.5);
  c.max_sweeps = 1;
  c.min_sweeps = 1;
  const auto res = solve_equilibrium(model, QuantileField::constant(16, 0.1), c);
  const auto dir = std::filesystem::temp_directory_path() / "rshe_field_roundtrip";
  std::filesystem::remove_all(dir);
  save_field(dir, *res.field, R"({"note": "test"})");
  const auto back = load_field(dir, make_initial_field(Initialization::zero, model, c.horizon, c.h));
  std::mt19937_64 rng(16);
  for (std::size_t n = 0; n <= 4; ++n) {
    const QuantileField q(oracle::random_monotone(rng, 16));
    const auto a = res.field->eval(0.01 * n, q);
    const auto b = back->eval(0.01 * n, q);
    for (std::size_t i = 0; i < 16; ++i) CHECK(a[i] == b[i]);
  }
  CHECK_THROWS_AS(load_field(dir / "missing", nullptr), IoError);
  CHECK_THROWS_AS(save_field(dir, *res.field, "{not json"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("classical oracle: constant costs and monotone family") {
  const auto x0 = QuantileField({-1.0, 0.0, 0.5, 1.0});
  const auto r = classical_mfg_oracle(*make_constant_cost(0.5, 0.2), x0, 1.0, 0.1);
  CHECK(r.converged);
  CHECK(r.costate[0][0] == doctest::Approx(0.7));
  CHECK(r.flow.back()[0] == doctest::Approx(-1.0 - 0.1 * (0.7 + 0.65 + 0.6 + 0.55 + 0.5 + 0.45 + 0.4 + 0.35 + 0.3 + 0.25)));
  const auto mono = classical_mfg_oracle(*make_clipped_linear_family(1.0, -0.5, 2.0), x0, 0.5, 0.01);
  CHECK(mono.converged);
  CHECK(mono.change < 1e-12);
}
