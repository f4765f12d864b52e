// SPDX-License-Identifier: Apache-2.0
//
// Cosine eigenbasis of the Laplacian on the torus, the Q-Wiener forcing with
// coefficients (1 v k)^(-lambda), and exact per-mode Ornstein-Uhlenbeck
// updates between rearrangement times.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "rshe/rng.hpp"

namespace rshe {

struct NoiseModel {
  double lambda = 0.75;
  std::size_t num_modes = 64;  // K: modes 0..K are resolved
  std::uint64_t seed = 0;
  // Multiplies every Q e_k. Zero gives the noiseless heat flow.
  double amplitude = 1.0;

  void validate() const;
  // (1 v k)^(-lambda) * amplitude
  double mode_scale(std::size_t k) const;
};

// e_0 = 1, e_k = sqrt(2) cos(2 pi k x).
double basis_eval(std::size_t k, double x);

// Eigenvalue of -Laplacian on e_k: (2 pi k)^2.
double mode_rate(std::size_t k);

struct SpectralState {
  std::vector<double> coeffs;  // a_0..a_K
};

// Analysis/synthesis between mid-point grid samples and modes 0..K.
// The sampled basis is orthonormal for the grid inner product (1/M) sum,
// so to_spectral is the exact projection onto span(e_0..e_K) when K < M.
class CosineBasis {
 public:
  CosineBasis(std::size_t grid_size, std::size_t num_modes);

  std::size_t grid_size() const noexcept { return grid_size_; }
  std::size_t num_modes() const noexcept { return num_modes_; }

  SpectralState to_spectral(std::span<const double> grid) const;
  std::vector<double> from_spectral(const SpectralState& s) const;

  // Allocation-free variants for the stepping loop.
  void analyze(std::span<const double> grid, std::span<double> coeffs) const;
  void synthesize(std::span<const double> coeffs, std::span<double> grid) const;

 private:
  std::size_t grid_size_;
  std::size_t num_modes_;
  Eigen::MatrixXd synthesis_;  // M x (K+1), entry (i, k) = e_k(x_i)
};

SpectralState heat_propagate(const SpectralState& s, double t);

// Precomputed per-mode factors of the exact OU update over one step h.
class OuPropagator {
 public:
  OuPropagator(const NoiseModel& noise, double h);

  double step_size() const noexcept { return h_; }
  std::size_t num_modes() const noexcept { return decay_.size() - 1; }

  // coeffs <- decay * coeffs + forcing * drift + sd * xi, with xi drawn from
  // stream at (step, mode). drift may be empty (zero drift).
  void apply(std::span<double> coeffs, std::span<const double> drift, const RandomStream& stream,
             std::uint64_t step) const;

  double decay(std::size_t k) const { return decay_[k]; }
  double forcing(std::size_t k) const { return forcing_[k]; }
  double noise_sd(std::size_t k) const { return noise_sd_[k]; }

 private:
  double h_;
  std::vector<double> decay_;
  std::vector<double> forcing_;
  std::vector<double> noise_sd_;
};

// a_k <- e^{-w_k h} a_k + v_k (1 - e^{-w_k h}) / w_k + xi_k for k >= 1 and
// a_0 <- a_0 + v_0 h + xi_0. drift_coeffs are the cosine coefficients of the
// (frozen) drift term, i.e. of -V.
SpectralState ou_step(const SpectralState& s, const SpectralState& drift_coeffs, double h,
                      const NoiseModel& noise, const RandomStream& stream, std::uint64_t step);

}  // namespace rshe
