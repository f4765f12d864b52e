// SPDX-License-Identifier: Apache-2.0
//
// Drift fields V(t, x, mu): for each time and law, a monotone section over
// the half-torus grid. Analytic closures and tabulated scenario libraries
// share one evaluator contract.
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <memory>
#include <string>
#include <vector>

#include "rshe/quantile_space.hpp"

namespace rshe {

class CostModel;

class DriftField {
 public:
  virtual ~DriftField() = default;

  // Section x -> V(t, x, Leb o mu^{-1}) on the grid of mu.
  virtual GridFunction eval(double t, const QuantileField& mu) const = 0;
  GridFunction eval(double t, const DiscreteMeasure& mu, std::size_t grid_size) const {
    return eval(t, quantile_from_measure(mu, grid_size));
  }

  // Declared sup bound and declared L2-Lipschitz constant in mu.
  virtual double sup_bound() const = 0;
  virtual double lipschitz() const = 0;
  virtual std::string kind() const = 0;
};

using SectionFunction = std::function<void(double t, const QuantileField& mu, std::span<double> out)>;

// Closure-backed field. The section is rearranged after evaluation.
class AnalyticField final : public DriftField {
 public:
  AnalyticField(SectionFunction fn, double sup_bound, double lipschitz, std::string label);

  GridFunction eval(double t, const QuantileField& mu) const override;
  double sup_bound() const override { return sup_bound_; }
  double lipschitz() const override { return lipschitz_; }
  std::string kind() const override { return "analytic:" + label_; }

 private:
  SectionFunction fn_;
  double sup_bound_;
  double lipschitz_;
  std::string label_;
};

std::shared_ptr<const DriftField> make_zero_field();
// V(t, x, mu) = value(t), constant in x and mu.
std::shared_ptr<const DriftField> make_time_field(std::function<double(double)> value, double sup_bound);
// V(t, x, mu) = -amplitude * tanh(m1(mu)): constant in x, L2-Lipschitz in mu
// with constant |amplitude|. Pushes the mean away from 0 at rate <= |amplitude|.
std::shared_ptr<const DriftField> make_mean_tanh_field(double amplitude);
// V(t, x, mu) = d_x g(F_mu^{-1}(x), mu) for every t (terminal-cost bootstrap).
std::shared_ptr<const DriftField> make_terminal_bootstrap_field(std::shared_ptr<const CostModel> model);

// Scenario library at one time node: quantile vectors and the field sections
// attached to them.
struct NodeTable {
  std::vector<std::vector<double>> scenarios;
  std::vector<std::vector<double>> sections;
};

enum class InterpolationKind {
  nearest,     // tapered inverse-distance over the k nearest library points
  regression,  // per grid node, least squares on (1, mu(x_i), a_0 .. a_{p-1})
};

struct InterpolationSpec {
  std::size_t neighbors = 3;
  InterpolationKind kind = InterpolationKind::nearest;
  std::size_t modes = 3;  // cosine coefficients a_j in the regression features
};

// Regression coefficients of one library, one row per grid node.
struct SectionFit {
  std::size_t modes = 0;
  std::vector<std::vector<double>> beta;
};

SectionFit fit_sections(const NodeTable& table, std::size_t modes);
std::vector<double> eval_section_fit(const SectionFit& fit, std::span<const double> mu);

// Tabulated field on the uniform mesh t_n = n h, n = 0..num_nodes-1. Nodes
// without a table defer to the fallback field. Nearest interpolation: the k
// nearest library points in the L2 (= W2) quantile metric, weights
// 1/d_i - 1/d_{k+1} (inverse distance tapered to zero at the (k+1)-th
// neighbour, which keeps the interpolant continuous in mu and in the
// library). Regression interpolation evaluates a per-node linear fit over
// the whole library. Either way the result is rearranged.
class TabulatedField final : public DriftField {
 public:
  TabulatedField(double h, std::size_t num_nodes, std::size_t grid_size,
                 std::shared_ptr<const DriftField> fallback, InterpolationSpec interp = {});

  GridFunction eval(double t, const QuantileField& mu) const override;
  double sup_bound() const override { return sup_bound_; }
  double lipschitz() const override { return lipschitz_; }
  std::string kind() const override { return "tabulated"; }

  void set_node(std::size_t node, std::shared_ptr<const NodeTable> table);
  std::shared_ptr<const NodeTable> node(std::size_t node) const;
  bool has_table(std::size_t node) const { return node < tables_.size() && tables_[node] != nullptr; }
  std::size_t node_index(double t) const;

  void set_declared_bounds(double sup_bound, double lipschitz) {
    sup_bound_ = sup_bound;
    lipschitz_ = lipschitz;
  }

  double step() const noexcept { return h_; }
  std::size_t num_nodes() const noexcept { return tables_.size(); }
  std::size_t grid_size() const noexcept { return grid_size_; }
  const InterpolationSpec& interpolation() const noexcept { return interp_; }
  std::shared_ptr<const DriftField> fallback() const { return fallback_; }

 private:
  double h_;
  std::size_t grid_size_;
  std::vector<std::shared_ptr<const NodeTable>> tables_;
  std::vector<std::shared_ptr<const SectionFit>> fits_;
  std::shared_ptr<const DriftField> fallback_;
  InterpolationSpec interp_;
  double sup_bound_ = 0.0;
  double lipschitz_ = 0.0;
};

// Weighted k-nearest-neighbour interpolation inside one library.
std::vector<double> interpolate_section(const NodeTable& table, std::span<const double> mu,
                                        std::size_t neighbors);

}  // namespace rshe
