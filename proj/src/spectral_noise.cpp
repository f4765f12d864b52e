// SPDX-License-Identifier: Apache-2.0
#include "rshe/spectral_noise.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "rshe/error.hpp"
#include "rshe/quantile_space.hpp"

namespace rshe {

void NoiseModel::validate() const {
  if (!(lambda > 0.5 && lambda < 1.0)) {
    throw ValidationError("noise.lambda = " + std::to_string(lambda) +
                          " outside the admissible range (1/2, 1)");
  }
  if (num_modes < 1) throw ValidationError("noise: number of modes K must be >= 1");
  if (!(amplitude >= 0.0) || !std::isfinite(amplitude)) {
    throw ValidationError("noise.amplitude must be finite and >= 0");
  }
}

double NoiseModel::mode_scale(std::size_t k) const {
  if (k == 0) return amplitude;
  return amplitude * std::pow(static_cast<double>(k), -lambda);
}

double basis_eval(std::size_t k, double x) {
  if (k == 0) return 1.0;
  return std::numbers::sqrt2 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) * x);
}

double mode_rate(std::size_t k) {
  const double w = 2.0 * std::numbers::pi * static_cast<double>(k);
  return w * w;
}

CosineBasis::CosineBasis(std::size_t grid_size, std::size_t num_modes)
    : grid_size_(grid_size), num_modes_(num_modes) {
  if (num_modes >= grid_size) {
    throw DimensionError("CosineBasis: K = " + std::to_string(num_modes) +
                         " must be below the grid size M = " + std::to_string(grid_size) +
                         " (aliasing)");
  }
  synthesis_.resize(static_cast<Eigen::Index>(grid_size), static_cast<Eigen::Index>(num_modes + 1));
  for (std::size_t i = 0; i < grid_size; ++i) {
    const double x = grid_node(i, grid_size);
    for (std::size_t k = 0; k <= num_modes; ++k) {
      synthesis_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = basis_eval(k, x);
    }
  }
}

void CosineBasis::analyze(std::span<const double> grid, std::span<double> coeffs) const {
  if (grid.size() != grid_size_ || coeffs.size() != num_modes_ + 1) {
    throw DimensionError("CosineBasis::analyze: shape mismatch");
  }
  Eigen::Map<const Eigen::VectorXd> g(grid.data(), static_cast<Eigen::Index>(grid.size()));
  Eigen::Map<Eigen::VectorXd> a(coeffs.data(), static_cast<Eigen::Index>(coeffs.size()));
  a.noalias() = synthesis_.transpose() * g;
  a /= static_cast<double>(grid_size_);
}

void CosineBasis::synthesize(std::span<const double> coeffs, std::span<double> grid) const {
  if (grid.size() != grid_size_ || coeffs.size() != num_modes_ + 1) {
    throw DimensionError("CosineBasis::synthesize: shape mismatch");
  }
  Eigen::Map<const Eigen::VectorXd> a(coeffs.data(), static_cast<Eigen::Index>(coeffs.size()));
  Eigen::Map<Eigen::VectorXd> g(grid.data(), static_cast<Eigen::Index>(grid.size()));
  g.noalias() = synthesis_ * a;
}

SpectralState CosineBasis::to_spectral(std::span<const double> grid) const {
  SpectralState s{std::vector<double>(num_modes_ + 1)};
  analyze(grid, s.coeffs);
  return s;
}

std::vector<double> CosineBasis::from_spectral(const SpectralState& s) const {
  std::vector<double> grid(grid_size_);
  synthesize(s.coeffs, grid);
  return grid;
}

SpectralState heat_propagate(const SpectralState& s, double t) {
  if (!(t >= 0.0)) throw DomainError("heat_propagate: negative time");
  SpectralState out = s;
  for (std::size_t k = 1; k < out.coeffs.size(); ++k) out.coeffs[k] *= std::exp(-mode_rate(k) * t);
  return out;
}

OuPropagator::OuPropagator(const NoiseModel& noise, double h) : h_(h) {
  if (!(h > 0.0)) throw DomainError("OU step: h must be positive");
  const std::size_t n = noise.num_modes + 1;
  decay_.resize(n);
  forcing_.resize(n);
  noise_sd_.resize(n);
  decay_[0] = 1.0;
  forcing_[0] = h;
  noise_sd_[0] = noise.mode_scale(0) * std::sqrt(h);
  for (std::size_t k = 1; k < n; ++k) {
    const double w = mode_rate(k);
    decay_[k] = std::exp(-w * h);
    forcing_[k] = -std::expm1(-w * h) / w;
    const double q = noise.mode_scale(k);
    noise_sd_[k] = q * std::sqrt(-std::expm1(-2.0 * w * h) / (2.0 * w));
  }
}

void OuPropagator::apply(std::span<double> coeffs, std::span<const double> drift,
                         const RandomStream& stream, std::uint64_t step) const {
  if (coeffs.size() != decay_.size() || (!drift.empty() && drift.size() != decay_.size())) {
    throw DimensionError("OU step: mode count mismatch");
  }
  for (std::size_t k = 0; k < coeffs.size(); ++k) {
    double a = decay_[k] * coeffs[k];
    if (!drift.empty()) a += forcing_[k] * drift[k];
    if (noise_sd_[k] != 0.0) a += noise_sd_[k] * stream.normal(step, static_cast<std::uint32_t>(k));
    coeffs[k] = a;
  }
}

SpectralState ou_step(const SpectralState& s, const SpectralState& drift_coeffs, double h,
                      const NoiseModel& noise, const RandomStream& stream, std::uint64_t step) {
  const OuPropagator prop(noise, h);
  if (s.coeffs.size() != noise.num_modes + 1) {
    throw DimensionError("ou_step: state has " + std::to_string(s.coeffs.size()) +
                         " modes, noise model expects " + std::to_string(noise.num_modes + 1));
  }
  SpectralState out = s;
  prop.apply(out.coeffs, drift_coeffs.coeffs, stream, step);
  return out;
}

}  // namespace rshe
