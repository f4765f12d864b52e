// SPDX-License-Identifier: Apache-2.0
#include "rshe/drift_field.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "rshe/cost_models.hpp"
#include "rshe/error.hpp"
#include "rshe/spectral_noise.hpp"

namespace rshe {

AnalyticField::AnalyticField(SectionFunction fn, double sup_bound, double lipschitz, std::string label)
    : fn_(std::move(fn)), sup_bound_(sup_bound), lipschitz_(lipschitz), label_(std::move(label)) {}

GridFunction AnalyticField::eval(double t, const QuantileField& mu) const {
  std::vector<double> out(mu.size());
  fn_(t, mu, out);
  return rearrange(std::move(out)).as_grid_function();
}

std::shared_ptr<const DriftField> make_zero_field() {
  return std::make_shared<AnalyticField>(
      [](double, const QuantileField&, std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); },
      0.0, 0.0, "zero");
}

std::shared_ptr<const DriftField> make_time_field(std::function<double(double)> value, double sup_bound) {
  return std::make_shared<AnalyticField>(
      [value = std::move(value)](double t, const QuantileField&, std::span<double> out) {
        std::fill(out.begin(), out.end(), value(t));
      },
      sup_bound, 0.0, "time");
}

std::shared_ptr<const DriftField> make_mean_tanh_field(double amplitude) {
  return std::make_shared<AnalyticField>(
      [amplitude](double, const QuantileField& mu, std::span<double> out) {
        std::fill(out.begin(), out.end(), -amplitude * std::tanh(field_mean(mu.values())));
      },
      std::abs(amplitude), std::abs(amplitude), "mean-tanh");
}

std::shared_ptr<const DriftField> make_terminal_bootstrap_field(std::shared_ptr<const CostModel> model) {
  const double bound = model->bound_const();
  const double lip = model->lip_const();
  return std::make_shared<AnalyticField>(
      [model = std::move(model)](double, const QuantileField& mu, std::span<double> out) {
        model->dxg_section(mu, out);
      },
      bound, lip, "terminal-bootstrap");
}

std::vector<double> interpolate_section(const NodeTable& table, std::span<const double> mu,
                                        std::size_t neighbors) {
  const std::size_t n = table.scenarios.size();
  if (n == 0 || table.sections.size() != n) throw DimensionError("interpolate_section: empty library");
  const std::size_t m = mu.size();
  if (table.sections.front().size() != m) throw DimensionError("interpolate_section: grid size mismatch");

  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t s = 0; s < n; ++s) dist[s] = {l2_distance(table.scenarios[s], mu), s};

  std::vector<double> out(m, 0.0);
  const std::size_t k = std::max<std::size_t>(1, std::min(neighbors, n));
  const std::size_t take = std::min(k + 1, n);
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(take), dist.end());

  if (dist[0].first == 0.0) {
    // Exact hit(s): average every coinciding entry.
    std::size_t hits = 0;
    for (const auto& [d, s] : dist) {
      if (d != 0.0) continue;
      const auto& sec = table.sections[s];
      for (std::size_t i = 0; i < m; ++i) out[i] += sec[i];
      ++hits;
    }
    for (auto& v : out) v /= static_cast<double>(hits);
    return out;
  }

  std::vector<double> weights(k);
  const double cutoff = take > k ? 1.0 / dist[k].first : 0.0;
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    weights[j] = std::max(0.0, 1.0 / dist[j].first - cutoff);
    total += weights[j];
  }
  if (total <= 0.0) {
    // All k neighbours tie with the (k+1)-th: plain inverse distance.
    total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      weights[j] = 1.0 / dist[j].first;
      total += weights[j];
    }
  }
  for (std::size_t j = 0; j < k; ++j) {
    const double w = weights[j] / total;
    if (w == 0.0) continue;
    const auto& sec = table.sections[dist[j].second];
    for (std::size_t i = 0; i < m; ++i) out[i] += w * sec[i];
  }
  return out;
}

namespace {

void section_features(std::span<const double> mu, std::size_t i, std::size_t modes,
                      const std::vector<double>& coeffs, double* out) {
  out[0] = 1.0;
  out[1] = mu[i];
  for (std::size_t j = 0; j < modes; ++j) out[2 + j] = coeffs[j];
}

std::vector<double> cosine_coefficients(std::span<const double> mu, std::size_t modes) {
  const std::size_t m = mu.size();
  std::vector<double> a(modes, 0.0);
  for (std::size_t j = 0; j < modes; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += mu[i] * basis_eval(j, grid_node(i, m));
    a[j] = s / static_cast<double>(m);
  }
  return a;
}

}  // namespace

SectionFit fit_sections(const NodeTable& table, std::size_t modes) {
  const std::size_t n = table.scenarios.size();
  if (n == 0 || table.sections.size() != n) throw DimensionError("fit_sections: empty library");
  const std::size_t m = table.scenarios.front().size();
  const std::size_t p = modes + 2;
  std::vector<std::vector<double>> coeffs(n);
  for (std::size_t s = 0; s < n; ++s) coeffs[s] = cosine_coefficients(table.scenarios[s], modes);

  SectionFit fit;
  fit.modes = modes;
  fit.beta.assign(m, std::vector<double>(p, 0.0));
  Eigen::MatrixXd x(n, p);
  Eigen::VectorXd y(n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t s = 0; s < n; ++s) {
      const auto si = static_cast<Eigen::Index>(s);
      y(si) = table.sections[s][i];
      x(si, 0) = 1.0;
      x(si, 1) = table.scenarios[s][i];
      for (std::size_t j = 0; j < modes; ++j) x(si, static_cast<Eigen::Index>(2 + j)) = coeffs[s][j];
    }
    // Centre and scale so the rank threshold is meaningful; the intercept
    // absorbs the centring.
    Eigen::VectorXd mean = x.colwise().mean();
    Eigen::VectorXd scale = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(p));
    Eigen::MatrixXd z = x;
    for (Eigen::Index c = 1; c < static_cast<Eigen::Index>(p); ++c) {
      z.col(c).array() -= mean(c);
      const double sd = z.col(c).norm() / std::sqrt(static_cast<double>(n));
      scale(c) = sd > 1e-12 ? sd : 0.0;
      if (scale(c) > 0.0) z.col(c) /= scale(c);
      else z.col(c).setZero();
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(z);
    qr.setThreshold(1e-8);
    const Eigen::VectorXd b = qr.solve(y);
    auto& beta = fit.beta[i];
    beta[0] = b(0);
    for (Eigen::Index c = 1; c < static_cast<Eigen::Index>(p); ++c) {
      if (scale(c) == 0.0) continue;
      beta[static_cast<std::size_t>(c)] = b(c) / scale(c);
      beta[0] -= b(c) * mean(c) / scale(c);
    }
  }
  return fit;
}

std::vector<double> eval_section_fit(const SectionFit& fit, std::span<const double> mu) {
  const std::size_t m = mu.size();
  if (fit.beta.size() != m) throw DimensionError("eval_section_fit: grid size mismatch");
  const auto coeffs = cosine_coefficients(mu, fit.modes);
  std::vector<double> f(fit.modes + 2), out(m);
  for (std::size_t i = 0; i < m; ++i) {
    section_features(mu, i, fit.modes, coeffs, f.data());
    double v = 0.0;
    for (std::size_t c = 0; c < f.size(); ++c) v += fit.beta[i][c] * f[c];
    out[i] = v;
  }
  return out;
}

TabulatedField::TabulatedField(double h, std::size_t num_nodes, std::size_t grid_size,
                               std::shared_ptr<const DriftField> fallback, InterpolationSpec interp)
    : h_(h), grid_size_(grid_size), tables_(num_nodes), fits_(num_nodes), fallback_(std::move(fallback)), interp_(interp) {
  if (!(h > 0.0)) throw DomainError("TabulatedField: step must be positive");
  if (fallback_) {
    sup_bound_ = fallback_->sup_bound();
    lipschitz_ = fallback_->lipschitz();
  }
}

std::size_t TabulatedField::node_index(double t) const {
  const double r = std::round(t / h_);
  if (r < 0.0 || std::abs(r * h_ - t) > 1e-6 * h_ || r >= static_cast<double>(tables_.size())) {
    throw DomainError("TabulatedField: t = " + std::to_string(t) + " is not a mesh node");
  }
  return static_cast<std::size_t>(r);
}

void TabulatedField::set_node(std::size_t node, std::shared_ptr<const NodeTable> table) {
  if (node >= tables_.size()) throw DimensionError("TabulatedField::set_node: node out of range");
  if (table) {
    if (table->scenarios.empty() || table->scenarios.size() != table->sections.size()) {
      throw DimensionError("TabulatedField::set_node: malformed library");
    }
    for (std::size_t s = 0; s < table->scenarios.size(); ++s) {
      if (table->scenarios[s].size() != grid_size_ || table->sections[s].size() != grid_size_) {
        throw DimensionError("TabulatedField::set_node: grid size mismatch");
      }
    }
  }
  fits_[node] = table && interp_.kind == InterpolationKind::regression
                    ? std::make_shared<const SectionFit>(fit_sections(*table, interp_.modes))
                    : nullptr;
  tables_[node] = std::move(table);
}

std::shared_ptr<const NodeTable> TabulatedField::node(std::size_t node) const {
  return node < tables_.size() ? tables_[node] : nullptr;
}

GridFunction TabulatedField::eval(double t, const QuantileField& mu) const {
  const std::size_t n = node_index(t);
  if (tables_[n]) {
    if (mu.size() != grid_size_) throw DimensionError("TabulatedField::eval: grid size mismatch");
    if (fits_[n]) return rearrange(eval_section_fit(*fits_[n], mu.values())).as_grid_function();
    return rearrange(interpolate_section(*tables_[n], mu.values(), interp_.neighbors)).as_grid_function();
  }
  if (!fallback_) throw DomainError("TabulatedField::eval: no table at node " + std::to_string(n));
  return fallback_->eval(t, mu);
}

}  // namespace rshe
