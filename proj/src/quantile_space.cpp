// SPDX-License-Identifier: Apache-2.0
#include "rshe/quantile_space.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "rshe/error.hpp"

namespace rshe {

namespace {

void require_finite(std::span<const double> values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw DomainError(std::string(what) + ": non-finite entry at index " + std::to_string(i));
    }
  }
}

void require_nonempty(std::span<const double> values, const char* what) {
  if (values.empty()) throw DomainError(std::string(what) + ": grid size must be positive");
}

}  // namespace

double grid_node(std::size_t i, std::size_t grid_size) {
  return (static_cast<double>(i) + 0.5) / (2.0 * static_cast<double>(grid_size));
}

GridFunction::GridFunction(std::vector<double> values) : values_(std::move(values)) {
  require_nonempty(values_, "GridFunction");
  require_finite(values_, "GridFunction");
}

GridFunction GridFunction::constant(std::size_t grid_size, double value) {
  return GridFunction(std::vector<double>(grid_size, value));
}

QuantileField::QuantileField(std::vector<double> values) : values_(std::move(values)) {
  require_nonempty(values_, "QuantileField");
  require_finite(values_, "QuantileField");
  for (std::size_t i = 1; i < values_.size(); ++i) {
    if (values_[i] < values_[i - 1]) {
      throw DomainError("QuantileField: values decrease at index " + std::to_string(i));
    }
  }
}

QuantileField QuantileField::constant(std::size_t grid_size, double value) {
  return QuantileField(std::vector<double>(grid_size, value));
}

DiscreteMeasure::DiscreteMeasure(std::vector<Atom> atoms) : atoms_(std::move(atoms)) {
  if (atoms_.empty()) throw DomainError("DiscreteMeasure: no atoms");
  double total = 0.0;
  for (const auto& a : atoms_) {
    if (!std::isfinite(a.location)) throw DomainError("DiscreteMeasure: non-finite location");
    if (!(a.weight > 0.0 && a.weight <= 1.0)) {
      throw DomainError("DiscreteMeasure: weight outside (0, 1]");
    }
    total += a.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw DomainError("DiscreteMeasure: weights sum to " + std::to_string(total));
  }
}

DiscreteMeasure DiscreteMeasure::dirac(double location) {
  return DiscreteMeasure({{location, 1.0}});
}

double DiscreteMeasure::mean() const {
  double m = 0.0;
  for (const auto& a : atoms_) m += a.weight * a.location;
  return m;
}

double DiscreteMeasure::second_moment() const {
  double m = 0.0;
  for (const auto& a : atoms_) m += a.weight * a.location * a.location;
  return m;
}

QuantileField rearrange(const GridFunction& g) {
  return rearrange(std::vector<double>(g.values().begin(), g.values().end()));
}

QuantileField rearrange(std::vector<double> values) {
  require_finite(values, "rearrange");
  std::sort(values.begin(), values.end());
  return QuantileField(std::move(values));
}

QuantileField quantile_from_measure(const DiscreteMeasure& mu, std::size_t grid_size) {
  if (grid_size == 0) throw DomainError("quantile_from_measure: grid size must be positive");
  std::vector<Atom> sorted(mu.atoms().begin(), mu.atoms().end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const Atom& a, const Atom& b) { return a.location < b.location; });
  std::vector<double> cumulative(sorted.size());
  double acc = 0.0;
  for (std::size_t j = 0; j < sorted.size(); ++j) {
    acc += sorted[j].weight;
    cumulative[j] = acc;
  }
  // Absorb the summation error so that the last atom always covers p < 1.
  cumulative.back() = std::max(cumulative.back(), 1.0);

  std::vector<double> values(grid_size);
  const auto m = static_cast<double>(grid_size);
  for (std::size_t i = 0; i < grid_size; ++i) {
    const double p = (static_cast<double>(i) + 0.5) / m;
    const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), p);
    values[i] = sorted[static_cast<std::size_t>(it - cumulative.begin())].location;
  }
  return QuantileField(std::move(values));
}

DiscreteMeasure measure_from_quantile(const QuantileField& q) {
  const auto v = q.values();
  const double w = 1.0 / static_cast<double>(v.size());
  std::vector<Atom> atoms;
  std::size_t i = 0;
  while (i < v.size()) {
    std::size_t j = i + 1;
    while (j < v.size() && v[j] == v[i]) ++j;
    atoms.push_back({v[i], static_cast<double>(j - i) * w});
    i = j;
  }
  return DiscreteMeasure(std::move(atoms));
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("l2_distance: grid sizes " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  if (a.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(a.size()));
}

double l2_norm(std::span<const double> a) {
  if (a.empty()) return 0.0;
  double s = 0.0;
  for (const double x : a) s += x * x;
  return std::sqrt(s / static_cast<double>(a.size()));
}

double w2_distance(const QuantileField& a, const QuantileField& b) {
  return l2_distance(a.values(), b.values());
}

std::size_t count_at_or_below(const QuantileField& q, double y) {
  const auto v = q.values();
  return static_cast<std::size_t>(std::upper_bound(v.begin(), v.end(), y) - v.begin());
}

double cdf_eval(const QuantileField& q, double y) {
  return static_cast<double>(count_at_or_below(q, y)) / static_cast<double>(q.size());
}

double grad_norm_sq(const QuantileField& q) {
  const auto v = q.values();
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < v.size(); ++i) {
    const double d = v[i + 1] - v[i];
    s += d * d;
  }
  return 2.0 * static_cast<double>(v.size()) * s;
}

double field_mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double tie_fraction(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double pairs = 0.0;
  std::size_t i = 0;
  while (i < v.size()) {
    std::size_t j = i + 1;
    while (j < v.size() && v[j] == v[i]) ++j;
    const auto run = static_cast<double>(j - i);
    pairs += run * run;
    i = j;
  }
  const auto m = static_cast<double>(v.size());
  return pairs / (m * m);
}

void write_csv_row(std::ostream& out, std::span<const double> values) {
  char buf[32];
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out << ',';
    const auto res = std::to_chars(buf, buf + sizeof(buf), values[i]);
    out.write(buf, res.ptr - buf);
  }
  out << '\n';
}

std::vector<double> parse_csv_row(const std::string& line) {
  std::vector<double> values;
  std::size_t pos = 0;
  while (pos <= line.size()) {
    auto end = line.find(',', pos);
    if (end == std::string::npos) end = line.size();
    std::string cell = line.substr(pos, end - pos);
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    std::size_t start = 0;
    while (start < cell.size() && cell[start] == ' ') ++start;
    double x = 0.0;
    const auto res = std::from_chars(cell.data() + start, cell.data() + cell.size(), x);
    if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size()) {
      throw IoError("parse_csv_row: cannot parse '" + cell + "'");
    }
    values.push_back(x);
    pos = end + 1;
  }
  return values;
}

void write_measure_csv(std::ostream& out, const DiscreteMeasure& mu) {
  for (const auto& a : mu.atoms()) {
    const double row[2] = {a.location, a.weight};
    write_csv_row(out, row);
  }
}

DiscreteMeasure read_measure_csv(std::istream& in) {
  std::vector<Atom> atoms;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto row = parse_csv_row(line);
    if (row.size() != 2) throw IoError("read_measure_csv: expected 'location,weight' rows");
    atoms.push_back({row[0], row[1]});
  }
  return DiscreteMeasure(std::move(atoms));
}

}  // namespace rshe
