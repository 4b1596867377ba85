// Command-line front end. Talks to the library only through frn/frn.h.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "frn/frn.h"

using nlohmann::json;

namespace {

void print_log(const char* line, void*) { std::fprintf(stderr, "%s\n", line); }

// Turns leftover "--a.b value" / "--a.b=value" tokens into an overrides
// object. A flag with no value means true.
bool collect_overrides(const std::vector<std::string>& extras, json& overrides) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& tok = extras[i];
    if (tok.rfind("--", 0) != 0 || tok.size() < 3) {
      std::fprintf(stderr, "error: unexpected argument '%s'\n", tok.c_str());
      return false;
    }
    std::string key = tok.substr(2), value = "true";
    if (auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    } else if (i + 1 < extras.size() && extras[i + 1].rfind("--", 0) != 0) {
      value = extras[++i];
    }
    overrides[key] = value;
  }
  return true;
}

using Command = frn_status (*)(const char*, char**);

int run(Command cmd, const json& args, bool print_table = false) {
  char* result = nullptr;
  const frn_status st = cmd(args.dump().c_str(), &result);
  if (st != FRN_OK) {
    std::fprintf(stderr, "error (%s): %s\n", frn_status_name(st), frn_last_error());
    return frn_exit_code(st);
  }
  json doc = json::parse(result);
  frn_string_free(result);
  if (print_table && doc.contains("table_md")) {
    std::cout << doc["table_md"].get<std::string>();
    doc.erase("table_md");
  }
  std::cout << doc.dump(2) << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral reconstruction from RGB with a recursive band-aware state-space network"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(frn_version()));
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress lines");

  auto* synth = app.add_subcommand("synth", "Write synthetic scenes, RGB companions and the CRF");
  unsigned long scenes = 10, bands = 32, size = 96, endmembers = 4;
  unsigned long long seed = 0;
  std::string synth_out;
  synth->add_option("--scenes", scenes, "Number of scenes")->capture_default_str();
  synth->add_option("--bands", bands, "Bands per cube")->capture_default_str();
  synth->add_option("--size", size, "Height and width")->capture_default_str();
  synth->add_option("--endmembers", endmembers, "Materials per scene")->capture_default_str();
  synth->add_option("--seed", seed, "Generator seed")->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train one run; any config field can be set as --section.key value");
  std::string train_config;
  train->add_option("--config", train_config, "Experiment config JSON");
  train->allow_extras();

  auto* config = app.add_subcommand("config", "Print the merged config without running it");
  std::string config_path;
  config->add_option("--config", config_path, "Experiment config JSON");
  config->allow_extras();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and export images and spectral curves");
  std::string ckpt, eval_data, eval_out;
  unsigned long holdout = 0, tile = 64, overlap = 8, probes = 4;
  bool per_band = false;
  eval->add_option("--checkpoint", ckpt, "Checkpoint written by train")->required();
  eval->add_option("--data", eval_data, "Scene directory (defaults to the training data)");
  eval->add_option("--out", eval_out, "Output directory")->required();
  eval->add_option("--holdout", holdout, "Evaluate only the last N scenes")->capture_default_str();
  eval->add_option("--tile", tile, "Inference tile size")->capture_default_str();
  eval->add_option("--overlap", overlap, "Tile overlap")->capture_default_str();
  eval->add_option("--probes", probes, "Spectral-curve probe pixels")->capture_default_str();
  eval->add_flag("--per-band", per_band, "Report per-band metrics");

  auto* ablate = app.add_subcommand("ablate", "Train one run per axis value and tabulate the metrics");
  std::string axis, values, ablate_config;
  ablate->add_option("--axis", axis, "alpha, levels or refs")->required();
  ablate->add_option("--values", values, "Comma-separated values (default: the standard rows for the axis)");
  ablate->add_option("--config", ablate_config, "Base experiment config JSON");
  ablate->allow_extras();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (!quiet) frn_set_log_callback(print_log, nullptr);

  if (*synth)
    return run(frn_cmd_synth, {{"scenes", scenes},
                               {"bands", bands},
                               {"size", size},
                               {"endmembers", endmembers},
                               {"seed", seed},
                               {"out", synth_out}});
  if (*eval)
    return run(frn_cmd_eval, {{"checkpoint", ckpt},
                              {"data", eval_data},
                              {"out", eval_out},
                              {"holdout", holdout},
                              {"tile", tile},
                              {"overlap", overlap},
                              {"probes", probes},
                              {"per_band", per_band}});

  CLI::App* sub = *train ? train : *config ? config : ablate;
  json overrides = json::object();
  if (!collect_overrides(sub->remaining(), overrides)) return 2;
  if (*train) return run(frn_cmd_train, {{"config", train_config}, {"overrides", overrides}});
  if (*config) return run(frn_config_resolve, {{"config", config_path}, {"overrides", overrides}});

  json list = json::array();
  for (std::size_t p = 0; !values.empty() && p != std::string::npos;) {
    const std::size_t q = values.find(',', p);
    list.push_back(values.substr(p, q == std::string::npos ? q : q - p));
    p = q == std::string::npos ? q : q + 1;
  }
  return run(frn_cmd_ablate,
             {{"axis", axis}, {"values", list}, {"config", ablate_config}, {"overrides", overrides}}, true);
}
