// SPDX-License-Identifier: Apache-2.0
//
// Discrete periodic quantile functions. Elements are stored on the half
// torus [0, 1/2] at mid-point nodes x_i = (i + 1/2) / (2M); the symmetric
// half [-1/2, 0] is implicit. A non-decreasing sample vector is the
// quantile function of the empirical law that puts mass 1/M on each value,
// so the L2 distance between two fields is their W2 distance.
#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace rshe {

double grid_node(std::size_t i, std::size_t grid_size);

// Symmetric grid function, not necessarily monotone (pre-rearrangement
// states, drift sections before projection).
class GridFunction {
 public:
  GridFunction() = default;
  explicit GridFunction(std::vector<double> values);

  static GridFunction constant(std::size_t grid_size, double value);

  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::vector<double> release() && { return std::move(values_); }

  friend bool operator==(const GridFunction&, const GridFunction&) = default;

 private:
  std::vector<double> values_;
};

// Element of U2(S): finite, non-decreasing samples.
class QuantileField {
 public:
  QuantileField() = default;
  explicit QuantileField(std::vector<double> values);

  static QuantileField constant(std::size_t grid_size, double value);

  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  GridFunction as_grid_function() const { return GridFunction(values_); }
  std::vector<double> release() && { return std::move(values_); }

  friend bool operator==(const QuantileField&, const QuantileField&) = default;

 private:
  std::vector<double> values_;
};

struct Atom {
  double location;
  double weight;
};

class DiscreteMeasure {
 public:
  DiscreteMeasure() = default;
  explicit DiscreteMeasure(std::vector<Atom> atoms);

  static DiscreteMeasure dirac(double location);

  std::span<const Atom> atoms() const noexcept { return atoms_; }
  std::size_t size() const noexcept { return atoms_.size(); }
  double mean() const;
  double second_moment() const;

 private:
  std::vector<Atom> atoms_;
};

// Ascending sort. Throws DomainError on non-finite entries.
QuantileField rearrange(const GridFunction& g);
QuantileField rearrange(std::vector<double> values);

// values[i] = inf{t : F(t) >= (i + 1/2) / M}.
QuantileField quantile_from_measure(const DiscreteMeasure& mu, std::size_t grid_size);

// Atoms (values[i], 1/M); runs of exactly equal values are merged.
DiscreteMeasure measure_from_quantile(const QuantileField& q);

// ((1/M) sum (a_i - b_i)^2)^(1/2), the L2(S) distance of the symmetric
// extensions.
double l2_distance(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);
double w2_distance(const QuantileField& a, const QuantileField& b);

// (1/M) #{i : values[i] <= y}
double cdf_eval(const QuantileField& q, double y);
std::size_t count_at_or_below(const QuantileField& q, double y);

// 2M * sum_{i < M-1} (values[i+1] - values[i])^2: the half-torus integral of
// the squared forward difference quotient. Zero when M = 1.
double grad_norm_sq(const QuantileField& q);

double field_mean(std::span<const double> values);

// (1/M^2) #{(i, j) : v_i = v_j} for a sorted vector, from run lengths.
double tie_fraction(std::span<const double> sorted_values);

// CSV: a field is one row of M comma-separated values; a measure is one
// "location,weight" row per atom.
void write_csv_row(std::ostream& out, std::span<const double> values);
std::vector<double> parse_csv_row(const std::string& line);
void write_measure_csv(std::ostream& out, const DiscreteMeasure& mu);
DiscreteMeasure read_measure_csv(std::istream& in);

}  // namespace rshe
