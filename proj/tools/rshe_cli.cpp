// SPDX-License-Identifier: Apache-2.0
// Command-line front end. Talks to the library only through rshe.h.
#include <cstdio>
#include <cstdlib>
#include <string>

#include <CLI11.hpp>

#include "rshe/rshe.h"

namespace {

// Only the output directory may come from the environment.
const char* output_override() {
  const char* v = std::getenv("RSHE_OUTPUT_DIR");
  return (v != nullptr && *v != '\0') ? v : nullptr;
}

int report(rshe_status status, rshe_result* result) {
  int code = static_cast<int>(status);
  if (result != nullptr) {
    code = rshe_result_exit_code(result);
    std::printf("%s\n", rshe_result_summary(result));
    std::fprintf(code == 0 ? stdout : stderr, "%s: %s\n", code == 0 ? "done" : "error", rshe_result_message(result));
    if (*rshe_result_output_dir(result) != '\0') std::fprintf(stderr, "output: %s\n", rshe_result_output_dir(result));
    rshe_result_free(result);
  } else {
    std::fprintf(stderr, "error: %s\n", rshe_last_error());
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rearranged stochastic heat equation and common-noise MFG experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(rshe_version()));

  std::string config_path, manifest_path;
  auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
  run->add_option("config", config_path, "INI configuration")->required();
  auto* validate = app.add_subcommand("validate", "Check a config file without running it");
  validate->add_option("config", config_path, "INI configuration")->required();
  auto* replay = app.add_subcommand("replay", "Re-run from a manifest and compare artifacts");
  replay->add_option("manifest", manifest_path, "manifest.json of a previous run")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*run) {
    rshe_result* result = nullptr;
    const auto s = rshe_run_file(config_path.c_str(), output_override(), &result);
    return report(s, result);
  }
  if (*validate) {
    const auto s = rshe_validate_file(config_path.c_str());
    if (s == RSHE_OK) {
      std::printf("ok: %s\n", config_path.c_str());
    } else {
      std::fprintf(stderr, "invalid: %s\n", rshe_last_error());
    }
    return static_cast<int>(s);
  }
  rshe_result* result = nullptr;
  const auto s = rshe_replay(manifest_path.c_str(), output_override(), &result);
  return report(s, result);
}
