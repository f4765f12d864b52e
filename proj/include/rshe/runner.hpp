// SPDX-License-Identifier: Apache-2.0
//
// Configuration-driven experiments. One INI file describes one run; every
// artifact lands in the output directory next to a manifest that echoes the
// configuration and its content hash.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rshe/mfg_fixed_point.hpp"
#include "rshe/spectral_noise.hpp"

namespace rshe {

enum class Experiment { simulate_rshe, solve_mfg, pontryagin_check, feedback_check, diagnostics, deterministic_benchmark };

std::string to_string(Experiment e);

struct CostSpec {
  std::string family = "tanh";  // zero | constant | tanh | clipped-linear
  double a = 1.0, b = -0.5, c_g = 1.0, b_g = -0.5;
  double clip = 2.0;
  double kappa_f = 0.0, kappa_g = 0.0;
};

struct InitialSpec {
  std::string kind = "linear";  // constant | linear | two-step | three-level
  double value = 0.0;
  double low = -1.0, high = 1.0;
};

struct RunConfig {
  Experiment experiment = Experiment::simulate_rshe;
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool dump_states = false;

  std::size_t grid_size = 128;
  double h = 0.01;
  double horizon = 0.27;
  NoiseModel noise;
  CostSpec cost;
  InitialSpec initial;

  // simulate-rshe / feedback-check
  std::size_t paths = 100;
  std::string drift = "zero";  // zero | mean-tanh | terminal | solve
  double drift_amplitude = 1.0;
  std::string dynamics = "rshe";  // rshe | transport

  SolverConfig solver;

  // pontryagin-check
  std::size_t check_paths = 64;
  std::size_t perturbations = 20;

  // diagnostics
  std::vector<std::string> diagnostics{"energy", "exp-moment", "gronwall", "smoothing"};
  std::size_t window_lo_steps = 5;
  std::size_t window_hi_steps = 50;
  double exp_eps = 0.1;
  double gronwall_horizon = 0.5;
  std::size_t smoothing_paths = 2000;
  std::size_t smoothing_trials = 3;
  double smoothing_h = 1e-4;

  std::string source_text;  // the file as read
  std::map<std::string, std::string> echo;  // "section.key" -> value as given
};

// Parses and validates; throws ValidationError with the offending key.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
void validate_config(const RunConfig& config);

QuantileField make_initial_state(const InitialSpec& spec, std::size_t grid_size);
std::shared_ptr<const CostModel> make_cost(const CostSpec& spec);

struct RunOutcome {
  int exit_code = 0;  // 0 ok, 2 validation, 3 numerical, 1 other
  std::string message;
  std::filesystem::path output_dir;
  std::string summary_json;
};

// Never throws; failures are reported through the outcome and the manifest.
RunOutcome run_experiment(const RunConfig& config, const std::optional<std::filesystem::path>& output_override = {});
RunOutcome run_file(const std::filesystem::path& config_path,
                    const std::optional<std::filesystem::path>& output_override = {});
RunOutcome validate_file(const std::filesystem::path& config_path);
// Re-runs the configuration echoed in a manifest after checking its hash.
RunOutcome replay_manifest(const std::filesystem::path& manifest_path,
                           const std::optional<std::filesystem::path>& output_override = {});

// SHA-1 of "blob <size>\0<content>", as git computes it.
std::string git_blob_sha1(const std::string& content);

}  // namespace rshe
