// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

namespace rshe {

// Sample mean with its standard error (sample sd / sqrt(n)).
struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
};

Estimate estimate(std::span<const double> samples);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

// Ordinary least squares y ~ slope * x + intercept.
LineFit fit_line(std::span<const double> x, std::span<const double> y);

}  // namespace rshe
