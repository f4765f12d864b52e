// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "../support/oracles.hpp"
#include "rshe/drift_field.hpp"
#include "rshe/error.hpp"
#include "rshe/rshe_solver.hpp"

using namespace rshe;

namespace {

NoiseModel quiet(std::size_t modes) {
  NoiseModel n;
  n.num_modes = modes;
  n.amplitude = 0.0;
  return n;
}

std::vector<double> smooth_monotone(std::mt19937_64& rng, std::size_t m) {
  // positive combination of increasing low modes: -cos(2 pi k x) increases
  // on [0, 1/2] for k = 1
  std::uniform_real_distribution<double> u(0.1, 1.0);
  const double a = u(rng), b = u(rng) * 0.1, c = u(rng) - 0.5;
  std::vector<double> v(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double x = grid_node(i, m);
    v[i] = c - a * std::cos(2 * std::numbers::pi * x) + b * x;
  }
  return v;
}

}  // namespace

TEST_CASE("constant state is a fixed point without noise") {
  const auto x = QuantileField::constant(32, 1.7);
  const RandomStream rs(0, 0);
  const auto rec = rshe_step(x, GridFunction::constant(32, 0.0), 0.01, quiet(8), rs);
  for (std::size_t i = 0; i < 32; ++i) CHECK(rec.post_rearrange[i] == doctest::Approx(1.7).epsilon(1e-14));
}

TEST_CASE("smooth monotone fields need no rearrangement under heat flow") {
  std::mt19937_64 rng(1);
  const RandomStream rs(0, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const QuantileField x(smooth_monotone(rng, 64));
    const auto rec = rshe_step(x, GridFunction::constant(64, 0.0), 1e-3, quiet(16), rs);
    CHECK(std::vector<double>(rec.pre_rearrange.values().begin(), rec.pre_rearrange.values().end()) ==
          std::vector<double>(rec.post_rearrange.values().begin(), rec.post_rearrange.values().end()));
  }
}

TEST_CASE("noisy step: post is the sorted pre state and norms agree") {
  std::mt19937_64 rng(2);
  NoiseModel n;
  n.num_modes = 16;
  QuantileField x(oracle::random_monotone(rng, 64));
  for (std::uint64_t s = 0; s < 20; ++s) {
    const RandomStream rs(5, 1);
    const auto rec = rshe_step(x, GridFunction::constant(64, 0.3), 1e-3, n, rs, s);
    const std::vector<double> pre(rec.pre_rearrange.values().begin(), rec.pre_rearrange.values().end());
    CHECK(std::vector<double>(rec.post_rearrange.values().begin(), rec.post_rearrange.values().end()) ==
          oracle::merge_sort(pre));
    CHECK(l2_norm(rec.post_rearrange.values()) == doctest::Approx(l2_norm(pre)).epsilon(1e-15));
    x = rec.post_rearrange;
  }
}

TEST_CASE("grid and mode mismatches are rejected") {
  const RandomStream rs(0, 0);
  CHECK_THROWS_AS(rshe_step(QuantileField::constant(8, 0), GridFunction::constant(9, 0), 0.1, quiet(2), rs),
                  DimensionError);
  CHECK_THROWS_AS(rshe_step(QuantileField::constant(8, 0), GridFunction::constant(8, 0), 0.1, quiet(8), rs),
                  DimensionError);
}

TEST_CASE("simulate: zero drift, zero noise is heat flow") {
  std::mt19937_64 rng(3);
  const QuantileField x0(smooth_monotone(rng, 64));
  SimulationSpec spec;
  spec.horizon = 0.05;
  spec.h = 0.01;
  spec.noise = quiet(16);
  spec.store_states = true;
  const auto b = simulate_driftless(x0, spec);
  const CosineBasis basis(64, 16);
  auto s = basis.to_spectral(x0.values());
  s = heat_propagate(s, 0.05);
  const auto expect = basis.from_spectral(s);
  for (std::size_t i = 0; i < 64; ++i) CHECK(b.state(0, 5)[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  for (std::size_t n = 1; n <= 5; ++n) CHECK(b.energy(0, n) <= b.energy(0, n - 1));
}

TEST_CASE("simulate: constant drift moves the mean at rate -c") {
  SimulationSpec spec;
  spec.horizon = 0.2;
  spec.h = 0.01;
  spec.paths = 2000;
  spec.noise.num_modes = 8;
  spec.noise.seed = 11;
  const auto field = make_time_field([](double) { return 1.5; }, 1.5);
  const auto b = simulate(QuantileField::constant(32, 0.0), field.get(), spec);
  std::vector<double> means(b.num_paths());
  for (std::size_t p = 0; p < b.num_paths(); ++p) means[p] = field_mean(b.state(p, b.num_steps()));
  const auto e = estimate(means);
  CHECK(std::abs(e.mean - (-1.5 * 0.2)) < 3 * e.std_error);
  // mode 0 is a Brownian motion with variance t
  CHECK(e.std_error * std::sqrt(2000.0) == doctest::Approx(std::sqrt(0.2)).epsilon(0.1));
}

TEST_CASE("simulate is reproducible across worker counts") {
  SimulationSpec spec;
  spec.horizon = 0.02;
  spec.h = 0.001;
  spec.paths = 12;
  spec.noise.num_modes = 8;
  spec.noise.seed = 5;
  spec.store_states = true;
  const auto field = make_mean_tanh_field(1.0);
  std::mt19937_64 rng(4);
  const QuantileField x0(oracle::random_monotone(rng, 32));
  spec.threads = 1;
  const auto a = simulate(x0, field.get(), spec);
  spec.threads = 4;
  const auto b = simulate(x0, field.get(), spec);
  for (std::size_t p = 0; p < 12; ++p) {
    const auto sa = a.path_states(p), sb = b.path_states(p);
    CHECK(std::equal(sa.begin(), sa.end(), sb.begin()));
  }
  // driftless alias
  const auto c = simulate(x0, nullptr, spec);
  const auto d = simulate_driftless(x0, spec);
  CHECK(std::equal(c.path_states(3).begin(), c.path_states(3).end(), d.path_states(3).begin()));
}

TEST_CASE("simulate rejects a horizon that is not a multiple of h") {
  SimulationSpec spec;
  spec.horizon = 0.105;
  spec.h = 0.01;
  CHECK_THROWS_AS(simulate_driftless(QuantileField::constant(8, 0), spec), ValidationError);
}

TEST_CASE("simulate: drift failures carry path and time") {
  SimulationSpec spec;
  spec.horizon = 0.02;
  spec.h = 0.01;
  spec.noise = quiet(2);
  const AnalyticField bad([](double t, const QuantileField&, std::span<double>) {
    if (t > 0.005) throw DomainError("boom");
  }, 1.0, 1.0, "bad");
  CHECK_THROWS_WITH_AS(simulate(QuantileField::constant(8, 0), &bad, spec), doctest::Contains("path 0"),
                       DomainError);
}

TEST_CASE("deterministic step") {
  std::mt19937_64 rng(6);
  const QuantileField x(oracle::random_monotone(rng, 16));
  CHECK(deterministic_step(x, GridFunction::constant(16, 0.0), 0.1) == x);
  const auto shifted = deterministic_step(x, GridFunction::constant(16, 2.0), 0.1);
  for (std::size_t i = 0; i < 16; ++i) CHECK(shifted[i] == doctest::Approx(x[i] - 0.2));
  const auto v = oracle::random_vector(rng, 16, 50.0);
  const auto y = deterministic_step(x, GridFunction(v), 0.1);
  std::vector<double> euler(16);
  for (std::size_t i = 0; i < 16; ++i) euler[i] = x[i] - 0.1 * v[i];
  CHECK(std::vector<double>(y.values().begin(), y.values().end()) == oracle::merge_sort(euler));
}

TEST_CASE("reflection orthogonality") {
  // two-point swap: pre = [1, 0], post = [0, 1], increment = [-1, 1],
  // <post, increment> = (0 * -1 + 1 * 1) / 2
  RsheStepRecord rec;
  rec.pre_rearrange = GridFunction({1.0, 0.0});
  rec.post_rearrange = QuantileField({0.0, 1.0});
  rec.reflection_increment = {-1.0, 1.0};
  const std::vector<RsheStepRecord> recs{rec};
  CHECK(reflection_orthogonality(recs) == 0.5);

  std::mt19937_64 rng(7);
  SimulationSpec spec;
  spec.horizon = 0.05;
  spec.h = 0.01;
  spec.noise = quiet(8);
  const auto field = make_time_field([](double) { return 0.4; }, 0.4);
  const auto none = simulate_records(QuantileField(smooth_monotone(rng, 32)), field.get(), spec);
  CHECK(reflection_orthogonality(none) == 0.0);
}

// Known to fail: the per-step pairing equals |post - pre|^2 / 2 and does not
// decay fast enough under refinement for the sum to vanish.
TEST_CASE("reflection statistic shrinks under mesh refinement" * doctest::may_fail()) {
  std::mt19937_64 rng(8);
  const QuantileField x0(oracle::random_monotone(rng, 64));
  double prev = INFINITY;
  for (const double h : {0.004, 0.001, 0.00025}) {
    SimulationSpec spec;
    spec.horizon = 0.02;
    spec.h = h;
    spec.paths = 40;
    spec.noise.num_modes = 16;
    spec.noise.seed = 3;
    const auto e = reflection_orthogonality(simulate_driftless(x0, spec));
    CHECK(e.mean >= 0.0);
    MESSAGE("h = " << h << ": sum <post, dEta> = " << e.mean << " +- " << e.std_error);
    CHECK(e.mean < prev);
    prev = e.mean;
  }
}

TEST_CASE("semigroup_apply") {
  SimulationSpec spec;
  spec.h = 0.001;
  spec.paths = 400;
  spec.noise.num_modes = 8;
  spec.noise.seed = 2;
  const DiscreteMeasure mu({{-0.5, 0.5}, {1.0, 0.5}});
  const auto clipped_mean = [](const QuantileField& q) { return std::clamp(field_mean(q.values()), -1.0, 1.0); };
  CHECK(semigroup_apply(clipped_mean, 0.0, mu, 32, spec).mean == 0.25);
  const auto one = semigroup_apply([](const QuantileField&) { return 1.0; }, 0.01, mu, 32, spec);
  CHECK(one.mean == 1.0);
  CHECK(one.std_error == 0.0);
  double prev = INFINITY;
  for (const double t : {0.064, 0.016, 0.004, 0.001}) {
    const double gap = std::abs(semigroup_apply(clipped_mean, t, mu, 32, spec).mean - 0.25);
    CHECK(gap < prev);
    prev = gap;
  }
}
