// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "../support/oracles.hpp"
#include "rshe/cost_models.hpp"
#include "rshe/drift_field.hpp"
#include "rshe/error.hpp"

using namespace rshe;

namespace {

std::shared_ptr<NodeTable> random_table(std::mt19937_64& rng, std::size_t n, std::size_t m) {
  auto t = std::make_shared<NodeTable>();
  for (std::size_t s = 0; s < n; ++s) {
    t->scenarios.push_back(oracle::random_monotone(rng, m));
    t->sections.push_back(oracle::random_monotone(rng, m));
  }
  return t;
}

}  // namespace

TEST_CASE("analytic fields rearrange their output") {
  const AnalyticField f(
      [](double, const QuantileField& mu, std::span<double> out) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = -mu[i];
      },
      1.0, 1.0, "flip");
  const auto s = f.eval(0.0, QuantileField({0.0, 1.0, 2.0}));
  CHECK(s[0] == -2.0);
  CHECK(s[2] == 0.0);
  CHECK(f.kind() == "analytic:flip");
}

TEST_CASE("factory fields") {
  const auto q = QuantileField({-1.0, 0.0, 3.0});
  CHECK(make_zero_field()->eval(0.3, q)[1] == 0.0);
  CHECK(make_time_field([](double t) { return 2.0 * t; }, 1.0)->eval(0.25, q)[2] == 0.5);
  const auto tanh_field = make_mean_tanh_field(0.5);
  CHECK(tanh_field->eval(0.0, q)[0] == doctest::Approx(-0.5 * std::tanh(2.0 / 3.0)));
  CHECK(tanh_field->lipschitz() == 0.5);
  const auto model = make_tanh_family(1.0, -0.5, 2.0, 0.5);
  const auto boot = make_terminal_bootstrap_field(model);
  const auto mu = measure_from_quantile(q);
  for (std::size_t i = 0; i < 3; ++i) CHECK(boot->eval(0.1, q)[i] == doctest::Approx(model->dxg(q[i], mu)));
}

TEST_CASE("interpolation returns the table entry on an exact hit") {
  std::mt19937_64 rng(1);
  const auto t = random_table(rng, 10, 8);
  for (std::size_t s = 0; s < 10; ++s) {
    const auto v = interpolate_section(*t, t->scenarios[s], 3);
    for (std::size_t i = 0; i < 8; ++i) CHECK(v[i] == t->sections[s][i]);
  }
}

TEST_CASE("interpolation is a convex combination with tapered inverse-distance weights") {
  std::mt19937_64 rng(2);
  const auto t = random_table(rng, 6, 4);
  const auto mu = oracle::random_monotone(rng, 4);
  std::vector<std::pair<double, std::size_t>> d;
  for (std::size_t s = 0; s < 6; ++s) {
    double acc = 0.0;
    for (std::size_t i = 0; i < 4; ++i) acc += (t->scenarios[s][i] - mu[i]) * (t->scenarios[s][i] - mu[i]);
    d.push_back({std::sqrt(acc / 4.0), s});
  }
  std::sort(d.begin(), d.end());
  double w[3], total = 0.0;
  for (int j = 0; j < 3; ++j) total += (w[j] = 1.0 / d[j].first - 1.0 / d[3].first);
  const auto v = interpolate_section(*t, mu, 3);
  for (std::size_t i = 0; i < 4; ++i) {
    double expect = 0.0;
    for (int j = 0; j < 3; ++j) expect += w[j] / total * t->sections[d[j].second][i];
    CHECK(v[i] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("interpolation is continuous as a query crosses neighbour sets") {
  std::mt19937_64 rng(3);
  const auto t = random_table(rng, 12, 6);
  const auto a = t->scenarios[0], b = t->scenarios[7];
  std::vector<double> prev;
  double worst = 0.0;
  for (int k = 0; k <= 2000; ++k) {
    const double s = k / 2000.0;
    std::vector<double> q(6);
    for (std::size_t i = 0; i < 6; ++i) q[i] = (1 - s) * a[i] + s * b[i];
    const auto v = interpolate_section(*t, q, 3);
    if (!prev.empty()) worst = std::max(worst, l2_distance(v, prev));
    prev = v;
  }
  CHECK(worst < 0.05);
}

TEST_CASE("tabulated field: node lookup, fallback and shape checks") {
  std::mt19937_64 rng(4);
  TabulatedField f(0.1, 5, 8, make_time_field([](double t) { return t; }, 1.0));
  f.set_node(2, random_table(rng, 4, 8));
  CHECK(f.node_index(0.2) == 2);
  CHECK(f.has_table(2));
  CHECK_FALSE(f.has_table(1));
  const QuantileField q(oracle::random_monotone(rng, 8));
  CHECK(f.eval(0.1, q)[0] == doctest::Approx(0.1));
  const auto s = f.eval(0.2, q);
  for (std::size_t i = 1; i < 8; ++i) CHECK(s[i] >= s[i - 1]);
  CHECK_THROWS_AS(f.set_node(9, random_table(rng, 2, 8)), DimensionError);
  CHECK_THROWS_AS(f.set_node(1, random_table(rng, 2, 4)), DimensionError);
  CHECK_THROWS(f.eval(0.73, q));

  TabulatedField bare(0.1, 3, 8, nullptr);
  CHECK_THROWS_AS(bare.eval(0.0, q), DomainError);
}

TEST_CASE("regression interpolation reproduces sections linear in the features") {
  std::mt19937_64 rng(41);
  const std::size_t m = 16, n = 20, modes = 2;
  // section_i = b0_i + b1_i mu_i + sum_j c_ij a_j(mu), with a_j from the oracle analysis.
  const auto b0 = oracle::random_vector(rng, m), b1 = oracle::random_vector(rng, m);
  const auto c0 = oracle::random_vector(rng, m), c1 = oracle::random_vector(rng, m);
  auto truth = [&](const std::vector<double>& mu) {
    const auto a = oracle::analyze(mu, modes);
    std::vector<double> out(m);
    for (std::size_t i = 0; i < m; ++i) out[i] = b0[i] + b1[i] * mu[i] + c0[i] * a[0] + c1[i] * a[1];
    return out;
  };
  NodeTable table;
  for (std::size_t s = 0; s < n; ++s) {
    table.scenarios.push_back(oracle::random_monotone(rng, m));
    table.sections.push_back(truth(table.scenarios.back()));
  }
  const auto fit = fit_sections(table, modes);
  for (int q = 0; q < 5; ++q) {
    const auto mu = oracle::random_monotone(rng, m);
    const auto got = eval_section_fit(fit, mu);
    const auto want = truth(mu);
    for (std::size_t i = 0; i < m; ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-9));
  }
}

TEST_CASE("regression interpolation on a degenerate library returns the mean section") {
  std::mt19937_64 rng(42);
  const std::size_t m = 8;
  NodeTable table;
  const auto mu = oracle::random_monotone(rng, m);
  std::vector<double> mean(m, 0.0);
  for (int s = 0; s < 6; ++s) {
    table.scenarios.push_back(mu);
    table.sections.push_back(oracle::random_vector(rng, m));
    for (std::size_t i = 0; i < m; ++i) mean[i] += table.sections.back()[i] / 6.0;
  }
  const auto got = eval_section_fit(fit_sections(table, 3), mu);
  for (std::size_t i = 0; i < m; ++i) CHECK(got[i] == doctest::Approx(mean[i]).epsilon(1e-12));

  TabulatedField field(0.1, 2, m, nullptr, InterpolationSpec{3, InterpolationKind::regression, 3});
  field.set_node(0, std::make_shared<NodeTable>(table));
  const auto sorted = rearrange(mean);
  const auto sec = field.eval(0.0, QuantileField(mu));
  for (std::size_t i = 0; i < m; ++i) CHECK(sec[i] == doctest::Approx(sorted[i]).epsilon(1e-12));
}
