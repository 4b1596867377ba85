#include "frn/frn.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <mutex>
#include <string>

#include <json.hpp>

#include "experiment/commands.hpp"
#include "simdata/io.hpp"
#include "simdata/scene.hpp"

using nlohmann::json;
using namespace frn;

struct frn_cube {
  simdata::SpectralCube cube;
};

struct frn_model {
  experiment::ExperimentConfig config;
  std::unique_ptr<fractal::FrnModel> model;
};

namespace {

thread_local std::string g_error;

std::mutex g_log_mutex;
frn_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;

frn_status status_of(ErrorKind k) {
  switch (k) {
    case ErrorKind::dimension: return FRN_ERR_DIMENSION;
    case ErrorKind::contract: return FRN_ERR_CONTRACT;
    case ErrorKind::format: return FRN_ERR_FORMAT;
    case ErrorKind::truncated: return FRN_ERR_TRUNCATED;
    case ErrorKind::overflow: return FRN_ERR_OVERFLOW;
    case ErrorKind::config: return FRN_ERR_CONFIG;
    case ErrorKind::data: return FRN_ERR_DATA;
    case ErrorKind::numeric: return FRN_ERR_NUMERIC;
    case ErrorKind::io: return FRN_ERR_IO;
  }
  return FRN_ERR_INTERNAL;
}

// Runs `f`, translating exceptions into a status and the thread's message.
template <class F>
frn_status guarded(F&& f) {
  try {
    f();
    g_error.clear();
    return FRN_OK;
  } catch (const Error& e) {
    g_error = e.what();
    return status_of(e.kind());
  } catch (const json::exception& e) {
    g_error = std::string("invalid JSON argument: ") + e.what();
    return FRN_ERR_CONFIG;
  } catch (const std::bad_alloc&) {
    g_error = "out of memory";
    return FRN_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_error = e.what();
    return FRN_ERR_INTERNAL;
  }
}

frn_status null_arg(const char* what) {
  g_error = std::string(what) + " must not be NULL";
  return FRN_ERR_ARGUMENT;
}

json parse_args(const char* text) {
  if (!text || !*text) return json::object();
  json j = json::parse(text, nullptr, false);
  require(!j.is_discarded() && j.is_object(), ErrorKind::config, "arguments must be a JSON object");
  return j;
}

template <class T>
T arg(const json& args, const char* key, T fallback) {
  if (!args.contains(key) || args[key].is_null()) return fallback;
  try {
    return args[key].get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::config, std::string("argument '") + key + "' has the wrong type");
  }
}

void log_line(const std::string& line) {
  std::lock_guard<std::mutex> lock(g_log_mutex);
  if (g_log_fn) g_log_fn(line.c_str(), g_log_user);
}

char* dup_string(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

// {"config": path, "overrides": {...}} -> merged config.
experiment::ExperimentConfig resolve(const json& args) {
  const std::string path = arg<std::string>(args, "config", "");
  experiment::ExperimentConfig c = path.empty() ? experiment::ExperimentConfig{} : experiment::load_config(path);
  if (args.contains("overrides")) {
    const json& o = args["overrides"];
    require(o.is_object(), ErrorKind::config, "overrides must be an object");
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& [k, v] : o.items()) pairs.emplace_back(k, v.is_string() ? v.get<std::string>() : v.dump());
    experiment::apply_overrides(c, pairs);
  }
  return c;
}

template <class F>
frn_status run_command(const char* args_json, char** result_json, F&& body) {
  if (!result_json) return null_arg("result_json");
  *result_json = nullptr;
  return guarded([&] { *result_json = dup_string(body(parse_args(args_json)).dump(2)); });
}

}  // namespace

extern "C" {

const char* frn_last_error(void) { return g_error.c_str(); }

const char* frn_status_name(frn_status s) {
  switch (s) {
    case FRN_OK: return "ok";
    case FRN_ERR_DIMENSION: return "dimension";
    case FRN_ERR_CONTRACT: return "contract";
    case FRN_ERR_FORMAT: return "format";
    case FRN_ERR_TRUNCATED: return "truncated";
    case FRN_ERR_OVERFLOW: return "overflow";
    case FRN_ERR_CONFIG: return "config";
    case FRN_ERR_DATA: return "data";
    case FRN_ERR_NUMERIC: return "numeric";
    case FRN_ERR_IO: return "io";
    case FRN_ERR_ARGUMENT: return "argument";
    case FRN_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

int frn_exit_code(frn_status s) {
  switch (s) {
    case FRN_OK: return 0;
    case FRN_ERR_CONFIG:
    case FRN_ERR_CONTRACT:
    case FRN_ERR_ARGUMENT: return 2;
    case FRN_ERR_NUMERIC: return 4;
    case FRN_ERR_INTERNAL: return 1;
    default: return 3;
  }
}

const char* frn_version(void) { return "1.0.0"; }

frn_status frn_cube_create(uint32_t bands, uint32_t height, uint32_t width, const float* data, frn_cube** out) {
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] {
    require(bands > 0 && height > 0 && width > 0, ErrorKind::contract, "cube dimensions must be positive");
    auto c = std::make_unique<frn_cube>();
    c->cube = simdata::SpectralCube(bands, height, width);
    if (data) std::memcpy(c->cube.data.data(), data, c->cube.data.size() * sizeof(float));
    *out = c.release();
  });
}

frn_status frn_cube_load(const char* path, frn_cube** out) {
  if (!out) return null_arg("out");
  *out = nullptr;
  if (!path) return null_arg("path");
  return guarded([&] {
    auto c = std::make_unique<frn_cube>();
    c->cube = simdata::load_cube(path);
    *out = c.release();
  });
}

frn_status frn_cube_save(const frn_cube* cube, const char* path) {
  if (!cube) return null_arg("cube");
  if (!path) return null_arg("path");
  return guarded([&] { simdata::save_cube(path, cube->cube); });
}

frn_status frn_cube_shape(const frn_cube* cube, uint32_t* bands, uint32_t* height, uint32_t* width) {
  if (!cube) return null_arg("cube");
  if (bands) *bands = static_cast<uint32_t>(cube->cube.bands);
  if (height) *height = static_cast<uint32_t>(cube->cube.height);
  if (width) *width = static_cast<uint32_t>(cube->cube.width);
  return FRN_OK;
}

const float* frn_cube_data(const frn_cube* cube) { return cube ? cube->cube.data.data() : nullptr; }

void frn_cube_free(frn_cube* cube) { delete cube; }

frn_status frn_synth_scene(uint32_t bands, uint32_t size, uint32_t endmembers, uint64_t seed, frn_cube** out) {
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] {
    simdata::SceneSpec spec;
    spec.endmembers = endmembers;
    spec.seed = seed;
    auto c = std::make_unique<frn_cube>();
    c->cube = simdata::synth_scene(spec, bands, size, size);
    *out = c.release();
  });
}

frn_status frn_project_rgb(const frn_cube* cube, frn_cube** rgb_out) {
  if (!rgb_out) return null_arg("rgb_out");
  *rgb_out = nullptr;
  if (!cube) return null_arg("cube");
  return guarded([&] {
    auto c = std::make_unique<frn_cube>();
    c->cube = simdata::crf_project(cube->cube, simdata::gaussian_crf(cube->cube.bands));
    *rgb_out = c.release();
  });
}

frn_status frn_pinv_upsample(const frn_cube* rgb, uint32_t bands, frn_cube** out) {
  if (!out) return null_arg("out");
  *out = nullptr;
  if (!rgb) return null_arg("rgb");
  return guarded([&] {
    require(bands >= 3, ErrorKind::contract, "pinv: need at least 3 bands");
    auto c = std::make_unique<frn_cube>();
    c->cube = simdata::pinv_upsample(rgb->cube, simdata::gaussian_crf(bands));
    *out = c.release();
  });
}

frn_status frn_evaluate(const frn_cube* pred, const frn_cube* gt, frn_metrics* out) {
  if (!pred) return null_arg("pred");
  if (!gt) return null_arg("gt");
  if (!out) return null_arg("out");
  return guarded([&] {
    auto m = metrics::evaluate_metrics(pred->cube, gt->cube);
    *out = {m.psnr_db, m.rmse_255, m.ssim, m.uiqi};
  });
}

frn_status frn_model_create(const char* config_json, frn_model** out) {
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] {
    auto m = std::make_unique<frn_model>();
    m->config = experiment::from_json(parse_args(config_json));
    m->config.validate();
    m->model = std::make_unique<fractal::FrnModel>(m->config.model, m->config.train.seed);
    *out = m.release();
  });
}

frn_status frn_model_load(const char* checkpoint_path, frn_model** out) {
  if (!out) return null_arg("out");
  *out = nullptr;
  if (!checkpoint_path) return null_arg("checkpoint_path");
  return guarded([&] {
    auto ckpt = train::load_checkpoint(checkpoint_path);
    const std::string text = train::checkpoint_config(ckpt);
    require(!text.empty(), ErrorKind::data, "checkpoint carries no config record");
    auto m = std::make_unique<frn_model>();
    m->config = experiment::from_json(json::parse(text));
    m->model = std::make_unique<fractal::FrnModel>(m->config.model, m->config.train.seed);
    train::restore_checkpoint(ckpt, m->model->params(), nullptr);
    *out = m.release();
  });
}

frn_status frn_model_param_count(const frn_model* model, uint64_t* out) {
  if (!model) return null_arg("model");
  if (!out) return null_arg("out");
  *out = model->model->params().scalar_count();
  return FRN_OK;
}

frn_status frn_model_predict(const frn_model* model, const frn_cube* rgb, frn_cube** out) {
  if (!out) return null_arg("out");
  *out = nullptr;
  if (!model) return null_arg("model");
  if (!rgb) return null_arg("rgb");
  return guarded([&] {
    auto c = std::make_unique<frn_cube>();
    c->cube = train::predict_tiled(*model->model, rgb->cube, {model->config.eval.tile, model->config.eval.overlap});
    *out = c.release();
  });
}

void frn_model_free(frn_model* model) { delete model; }

void frn_set_log_callback(frn_log_fn fn, void* user) {
  std::lock_guard<std::mutex> lock(g_log_mutex);
  g_log_fn = fn;
  g_log_user = user;
}

frn_status frn_cmd_synth(const char* args_json, char** result_json) {
  return run_command(args_json, result_json, [](const json& a) {
    for (const auto& [k, v] : a.items())
      require(k == "scenes" || k == "bands" || k == "size" || k == "seed" || k == "endmembers" || k == "out",
              ErrorKind::config, "unknown synth argument '" + k + "'");
    experiment::SynthOptions o;
    o.scenes = arg(a, "scenes", o.scenes);
    o.bands = arg(a, "bands", o.bands);
    o.size = arg(a, "size", o.size);
    o.seed = arg(a, "seed", o.seed);
    o.endmembers = arg(a, "endmembers", o.endmembers);
    o.out = arg<std::string>(a, "out", "");
    return experiment::cmd_synth(o, log_line);
  });
}

frn_status frn_cmd_train(const char* args_json, char** result_json) {
  return run_command(args_json, result_json,
                     [](const json& a) { return experiment::cmd_train(resolve(a), log_line); });
}

frn_status frn_cmd_eval(const char* args_json, char** result_json) {
  return run_command(args_json, result_json, [](const json& a) {
    experiment::EvalOptions o;
    o.checkpoint = arg<std::string>(a, "checkpoint", "");
    o.data = arg<std::string>(a, "data", "");
    o.out = arg<std::string>(a, "out", "");
    o.holdout = arg(a, "holdout", o.holdout);
    o.tile = arg(a, "tile", o.tile);
    o.overlap = arg(a, "overlap", o.overlap);
    o.per_band = arg(a, "per_band", o.per_band);
    o.probes = arg(a, "probes", o.probes);
    return experiment::cmd_eval(o, log_line);
  });
}

frn_status frn_cmd_ablate(const char* args_json, char** result_json) {
  return run_command(args_json, result_json, [](const json& a) {
    experiment::AblateOptions o;
    o.axis = arg<std::string>(a, "axis", "");
    o.values = arg<std::vector<std::string>>(a, "values", {});
    o.base = resolve(a);
    return experiment::cmd_ablate(o, log_line);
  });
}

frn_status frn_config_resolve(const char* args_json, char** result_json) {
  return run_command(args_json, result_json, [](const json& a) {
    auto c = resolve(a);
    c.validate();
    return experiment::to_json(c);
  });
}

void frn_string_free(char* s) { std::free(s); }

}  // extern "C"
