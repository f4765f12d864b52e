// SPDX-License-Identifier: Apache-2.0
#include "rshe/rshe.h"

#include <algorithm>
#include <optional>
#include <string>

#include "rshe/error.hpp"
#include "rshe/quantile_space.hpp"
#include "rshe/runner.hpp"

struct rshe_config {
  rshe::RunConfig config;
  std::string experiment;
  std::string output_dir;
};

struct rshe_result {
  rshe::RunOutcome outcome;
  std::string output_dir;
};

namespace {

thread_local std::string last_error;

rshe_status fail(rshe_status s, const std::string& msg) {
  last_error = msg;
  return s;
}

rshe_status from_exit_code(int code) {
  switch (code) {
    case 0: return RSHE_OK;
    case 2: return RSHE_VALIDATION_ERROR;
    case 3: return RSHE_NUMERICAL_ERROR;
    default: return RSHE_ERROR;
  }
}

template <class F>
rshe_status guarded(F&& f) {
  try {
    last_error.clear();
    return f();
  } catch (const rshe::ValidationError& e) {
    return fail(RSHE_VALIDATION_ERROR, e.what());
  } catch (const rshe::NumericalError& e) {
    return fail(RSHE_NUMERICAL_ERROR, e.what());
  } catch (const rshe::DomainError& e) {
    return fail(RSHE_INVALID_ARGUMENT, e.what());
  } catch (const rshe::DimensionError& e) {
    return fail(RSHE_INVALID_ARGUMENT, e.what());
  } catch (const std::exception& e) {
    return fail(RSHE_ERROR, e.what());
  } catch (...) {
    return fail(RSHE_ERROR, "unknown error");
  }
}

std::optional<std::filesystem::path> opt_path(const char* p) {
  if (p == nullptr || *p == '\0') return std::nullopt;
  return std::filesystem::path(p);
}

rshe_status wrap_outcome(rshe::RunOutcome outcome, rshe_result** out) {
  auto* r = new rshe_result{std::move(outcome), {}};
  r->output_dir = r->outcome.output_dir.string();
  *out = r;
  const auto s = from_exit_code(r->outcome.exit_code);
  if (s != RSHE_OK) last_error = r->outcome.message;
  return s;
}

rshe_config* make_handle(rshe::RunConfig c) {
  auto* h = new rshe_config{std::move(c), {}, {}};
  h->experiment = rshe::to_string(h->config.experiment);
  h->output_dir = h->config.output_dir.string();
  return h;
}

}  // namespace

extern "C" {

const char* rshe_version(void) { return "0.1.0"; }

const char* rshe_last_error(void) { return last_error.c_str(); }

rshe_status rshe_config_load(const char* path, rshe_config** out) {
  if (path == nullptr || out == nullptr) return fail(RSHE_INVALID_ARGUMENT, "rshe_config_load: null argument");
  *out = nullptr;
  return guarded([&] {
    *out = make_handle(rshe::load_config(path));
    return RSHE_OK;
  });
}

rshe_status rshe_config_parse(const char* text, rshe_config** out) {
  if (text == nullptr || out == nullptr) return fail(RSHE_INVALID_ARGUMENT, "rshe_config_parse: null argument");
  *out = nullptr;
  return guarded([&] {
    *out = make_handle(rshe::parse_config(text));
    return RSHE_OK;
  });
}

void rshe_config_free(rshe_config* config) { delete config; }

const char* rshe_config_experiment(const rshe_config* config) {
  return config == nullptr ? "" : config->experiment.c_str();
}

const char* rshe_config_output_dir(const rshe_config* config) {
  return config == nullptr ? "" : config->output_dir.c_str();
}

rshe_status rshe_run(const rshe_config* config, const char* output_dir, rshe_result** out) {
  if (config == nullptr || out == nullptr) return fail(RSHE_INVALID_ARGUMENT, "rshe_run: null argument");
  *out = nullptr;
  return guarded([&] { return wrap_outcome(rshe::run_experiment(config->config, opt_path(output_dir)), out); });
}

rshe_status rshe_run_file(const char* path, const char* output_dir, rshe_result** out) {
  if (path == nullptr || out == nullptr) return fail(RSHE_INVALID_ARGUMENT, "rshe_run_file: null argument");
  *out = nullptr;
  return guarded([&] { return wrap_outcome(rshe::run_file(path, opt_path(output_dir)), out); });
}

rshe_status rshe_validate_file(const char* path) {
  if (path == nullptr) return fail(RSHE_INVALID_ARGUMENT, "rshe_validate_file: null argument");
  return guarded([&] {
    const auto o = rshe::validate_file(path);
    const auto s = from_exit_code(o.exit_code);
    if (s != RSHE_OK) last_error = o.message;
    return s;
  });
}

rshe_status rshe_replay(const char* manifest_path, const char* output_dir, rshe_result** out) {
  if (manifest_path == nullptr || out == nullptr) return fail(RSHE_INVALID_ARGUMENT, "rshe_replay: null argument");
  *out = nullptr;
  return guarded([&] { return wrap_outcome(rshe::replay_manifest(manifest_path, opt_path(output_dir)), out); });
}

int rshe_result_exit_code(const rshe_result* result) { return result == nullptr ? 1 : result->outcome.exit_code; }

const char* rshe_result_message(const rshe_result* result) {
  return result == nullptr ? "" : result->outcome.message.c_str();
}

const char* rshe_result_output_dir(const rshe_result* result) {
  return result == nullptr ? "" : result->output_dir.c_str();
}

const char* rshe_result_summary(const rshe_result* result) {
  return result == nullptr ? "{}" : result->outcome.summary_json.c_str();
}

void rshe_result_free(rshe_result* result) { delete result; }

rshe_status rshe_rearrange(double* values, size_t n) {
  if (values == nullptr && n > 0) return fail(RSHE_INVALID_ARGUMENT, "rshe_rearrange: null values");
  return guarded([&] {
    if (n == 0) return RSHE_OK;
    const auto q = rshe::rearrange(std::vector<double>(values, values + n));
    std::copy(q.values().begin(), q.values().end(), values);
    return RSHE_OK;
  });
}

rshe_status rshe_w2_distance(const double* a, const double* b, size_t n, double* out) {
  if (a == nullptr || b == nullptr || out == nullptr || n == 0) {
    return fail(RSHE_INVALID_ARGUMENT, "rshe_w2_distance: null or empty argument");
  }
  return guarded([&] {
    const rshe::QuantileField qa(std::vector<double>(a, a + n)), qb(std::vector<double>(b, b + n));
    *out = rshe::w2_distance(qa, qb);
    return RSHE_OK;
  });
}

}  // extern "C"
