#include "experiment/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "experiment/data.hpp"
#include "simdata/io.hpp"
#include "simdata/scene.hpp"

namespace frn::experiment {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void emit(const LogSink& log, const std::string& line) {
  if (log) log(line);
}

void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  require(!ec && fs::is_directory(p), ErrorKind::io, "cannot create directory " + p.string());
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  require(f.good(), ErrorKind::io, "cannot write " + p.string());
  f << text;
  require(f.good(), ErrorKind::io, "write failed for " + p.string());
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

json metrics_json(const metrics::MetricReport& m) {
  json j = {{"psnr_db", m.psnr_db}, {"rmse_255", m.rmse_255}, {"ssim", m.ssim}, {"uiqi", m.uiqi}};
  if (!m.per_band_psnr.empty()) {
    j["per_band_psnr"] = m.per_band_psnr;
    j["per_band_ssim"] = m.per_band_ssim;
    j["per_band_uiqi"] = m.per_band_uiqi;
  }
  return j;
}

json report_json(const train::EvalReport& r) {
  json rows = json::array();
  for (const auto& s : r.scenes) {
    json row = metrics_json(s.metrics);
    row["scene"] = s.name;
    rows.push_back(row);
  }
  json j = metrics_json(r.mean);
  j["scenes"] = rows;
  return j;
}

train::EvalReport pinv_baseline(const train::Dataset& data, const simdata::CRF& crf) {
  std::vector<train::SceneReport> rows;
  for (const auto& s : data)
    rows.push_back({s.name, metrics::evaluate_metrics(simdata::pinv_upsample(s.rgb, crf), s.cube)});
  return train::aggregate(std::move(rows));
}

std::string step_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06zu.frnw", step);
  return buf;
}

// Step records from an earlier run that precede `start`; later lines are
// replayed by the resumed run.
std::string log_prefix(const fs::path& log_path, std::size_t start) {
  if (start == 0 || !fs::exists(log_path)) return {};
  std::istringstream in(read_text(log_path));
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("step")) continue;
    if (j["step"].get<std::size_t>() < start) kept += line + "\n";
  }
  return kept;
}

fractal::FrnModel& restore_model(std::unique_ptr<fractal::FrnModel>& holder, const train::Checkpoint& ckpt,
                                 ExperimentConfig& config) {
  const std::string text = train::checkpoint_config(ckpt);
  require(!text.empty(), ErrorKind::data, "checkpoint carries no config record");
  json doc = json::parse(text, nullptr, false);
  require(!doc.is_discarded(), ErrorKind::data, "checkpoint config record is not valid JSON");
  config = from_json(doc);
  holder = std::make_unique<fractal::FrnModel>(config.model, config.train.seed);
  try {
    train::restore_checkpoint(ckpt, holder->params(), nullptr);
  } catch (const Error& e) {
    fail(ErrorKind::data, std::string("checkpoint does not match its config: ") + e.what());
  }
  return *holder;
}

}  // namespace

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::contract:
      return 2;
    case ErrorKind::numeric:
      return 4;
    default:
      return 3;
  }
}

json cmd_synth(const SynthOptions& opt, const LogSink& log) {
  require(opt.scenes >= 1 && opt.bands >= 3 && opt.size >= 1 && opt.endmembers >= 1, ErrorKind::config,
          "synth: scenes, size and endmembers must be positive and bands at least 3");
  require(!opt.out.empty(), ErrorKind::config, "synth: --out is required");
  const fs::path out(opt.out);
  make_dirs(out);
  const auto crf = simdata::gaussian_crf(opt.bands);
  simdata::save_crf_csv(out / "crf.csv", crf);
  json files = json::array({"crf.csv"});
  for (std::size_t i = 0; i < opt.scenes; ++i) {
    simdata::SceneSpec spec;
    spec.endmembers = opt.endmembers;
    spec.seed = opt.seed * 1000003u + i;
    spec.library_seed = opt.seed + 1;
    auto cube = simdata::synth_scene(spec, opt.bands, opt.size, opt.size);
    char name[32];
    std::snprintf(name, sizeof name, "scene_%03zu", i);
    simdata::save_cube(out / (std::string(name) + ".frnc"), cube);
    simdata::save_cube(out / (std::string(name) + "_rgb.frnc"), simdata::crf_project(cube, crf));
    files.push_back(std::string(name) + ".frnc");
    files.push_back(std::string(name) + "_rgb.frnc");
    emit(log, std::string("wrote ") + name);
  }
  return {{"out", out.string()}, {"bands", opt.bands}, {"size", opt.size}, {"scenes", opt.scenes}, {"files", files}};
}

json cmd_train(const ExperimentConfig& config, const LogSink& log) {
  config.validate();
  const auto t_start = std::chrono::steady_clock::now();
  LoadedData loaded = load_dataset(config.data, config.model.bands);
  auto [train_set, held] = split_holdout(loaded.scenes, config.data.holdout);
  const bool has_holdout = !held.empty();
  const train::Dataset& eval_set = has_holdout ? held : train_set;

  const fs::path out(config.out);
  make_dirs(out / "ckpt");
  make_dirs(out / "img");
  const std::string config_text = to_json(config).dump(2) + "\n";
  write_text(out / "config.json", config_text);

  fractal::FrnModel model(config.model, config.train.seed);
  train::Trainer trainer(model, config.train, train_set);
  if (!config.resume.empty()) {
    train::Checkpoint ckpt;
    try {
      ckpt = train::load_checkpoint(config.resume);
      trainer.resume(ckpt);
    } catch (const Error& e) {
      fail(ErrorKind::data, "cannot resume from " + config.resume + ": " + e.what());
    }
    emit(log, "resumed at step " + std::to_string(ckpt.step));
  }
  const fs::path log_path = out / "log.jsonl";
  std::string prefix = log_prefix(log_path, trainer.current_step());
  std::ofstream log_file(log_path, std::ios::binary | std::ios::trunc);
  require(log_file.good(), ErrorKind::io, "cannot write " + log_path.string());
  log_file << prefix;

  emit(log, "training " + std::to_string(model.params().scalar_count()) + " parameters on " +
                std::to_string(train_set.size()) + " scenes");
  const train::TileOptions tiles{config.eval.tile, config.eval.overlap};
  double last_loss = std::nan("");
  while (trainer.current_step() < config.train.total_steps) {
    train::StepRecord r;
    try {
      r = trainer.step();
    } catch (...) {
      log_file.flush();
      throw;
    }
    last_loss = r.loss;
    json line = {{"kind", "step"}, {"step", r.step}, {"lr", r.lr}, {"loss", r.loss}, {"grad_norm", r.grad_norm}};
    if (!r.epsilon.empty()) {
      double s = 0;
      for (double e : r.epsilon) s += e;
      line["epsilon"] = {{"count", r.epsilon.size()},
                         {"mean", s / static_cast<double>(r.epsilon.size())},
                         {"min", *std::min_element(r.epsilon.begin(), r.epsilon.end())},
                         {"max", *std::max_element(r.epsilon.begin(), r.epsilon.end())}};
    }
    line["wall_ms"] = config.deterministic ? 0.0 : r.wall_ms;
    log_file << line.dump() << "\n";
    const std::size_t done = trainer.current_step();
    if (config.train.checkpoint_every && done % config.train.checkpoint_every == 0)
      train::save_checkpoint(out / "ckpt" / step_name(done), trainer.checkpoint(config_text));
    if (config.train.eval_every && done % config.train.eval_every == 0 && done < config.train.total_steps) {
      auto rep = train::evaluate(model, eval_set, tiles);
      log_file << json({{"kind", "eval"}, {"step", r.step}, {"eval", metrics_json(rep.mean)}}).dump() << "\n";
      emit(log, "step " + std::to_string(done) + " eval psnr " + format("%.3f", rep.mean.psnr_db));
    }
    if (done % std::max<std::size_t>(1, config.train.total_steps / 10) == 0)
      emit(log, "step " + std::to_string(done) + "/" + std::to_string(config.train.total_steps) + " loss " +
                    format("%.5f", r.loss) + " lr " + format("%.2e", r.lr));
  }
  log_file.close();
  train::save_checkpoint(out / "ckpt" / "final.frnw", trainer.checkpoint(config_text));

  auto rep = train::evaluate(model, eval_set, tiles, config.eval.per_band);
  json report = {{"split", has_holdout ? "holdout" : "train"},
                 {"steps", trainer.current_step()},
                 {"final_loss", last_loss},
                 {"param_count", model.params().scalar_count()},
                 {"eval", report_json(rep)}};
  if (loaded.crf) report["baseline_pinv"] = report_json(pinv_baseline(eval_set, *loaded.crf));
  const auto& first = eval_set.front();
  export_scene(out / "img" / first.name, out / "img" / "curves", first.name,
               train::predict_tiled(model, first.rgb, tiles), first.cube, config.eval.probes);
  report["wall_s"] = config.deterministic
                         ? 0.0
                         : std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  write_text(out / "report.json", report.dump(2) + "\n");
  emit(log, "eval psnr " + format("%.3f", rep.mean.psnr_db) + " dB on " + std::to_string(eval_set.size()) +
                " scenes");
  return report;
}

std::vector<std::pair<std::size_t, std::size_t>> probe_pixels(std::size_t height, std::size_t width,
                                                              std::size_t count) {
  std::vector<std::pair<std::size_t, std::size_t>> p;
  for (std::size_t i = 0; i < count; ++i)
    p.emplace_back((2 * i + 1) * height / (2 * count), (2 * i + 1) * width / (2 * count));
  return p;
}

void export_scene(const fs::path& img_dir, const fs::path& curve_dir, const std::string& name,
                  const simdata::SpectralCube& pred, const simdata::SpectralCube& gt, std::size_t probes) {
  require(pred.bands == gt.bands && pred.height == gt.height && pred.width == gt.width, ErrorKind::dimension,
          "export: prediction and ground truth differ in shape");
  make_dirs(img_dir);
  const std::size_t plane = gt.plane();
  std::vector<float> clamped(plane), residual(plane);
  for (std::size_t l = 0; l < gt.bands; ++l) {
    const float* p = pred.data.data() + l * plane;
    const float* g = gt.data.data() + l * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      clamped[i] = std::clamp(p[i], 0.0f, 1.0f);
      residual[i] = std::abs(clamped[i] - std::clamp(g[i], 0.0f, 1.0f));
    }
    char stem[32];
    std::snprintf(stem, sizeof stem, "band_%02zu_", l);
    const std::pair<const char*, const float*> planes[] = {
        {"pred", clamped.data()}, {"gt", g}, {"residual", residual.data()}};
    for (const auto& [kind, data] : planes) {
      const fs::path base = img_dir / (std::string(stem) + kind);
      simdata::save_pgm16(fs::path(base).replace_extension(".pgm"), data, gt.height, gt.width);
      simdata::save_png16(fs::path(base).replace_extension(".png"), data, gt.height, gt.width);
    }
  }
  if (probes == 0) return;
  make_dirs(curve_dir);
  auto wl = gt.wavelengths.size() == gt.bands ? std::vector<double>(gt.wavelengths.begin(), gt.wavelengths.end())
                                              : simdata::linear_wavelengths(gt.bands);
  for (auto [y, x] : probe_pixels(gt.height, gt.width, probes)) {
    std::ostringstream os;
    os << "wavelength_nm,gt,pred\n";
    for (std::size_t l = 0; l < gt.bands; ++l)
      os << format("%.3f", wl[l]) << "," << format("%.6f", gt.at(l, y, x)) << ","
         << format("%.6f", pred.at(l, y, x)) << "\n";
    write_text(curve_dir / (name + "_y" + std::to_string(y) + "_x" + std::to_string(x) + ".csv"), os.str());
  }
}

json cmd_eval(const EvalOptions& opt, const LogSink& log) {
  require(!opt.checkpoint.empty(), ErrorKind::config, "eval: --checkpoint is required");
  require(!opt.out.empty(), ErrorKind::config, "eval: --out is required");
  require(opt.tile >= 1 && opt.overlap < opt.tile, ErrorKind::config, "eval: overlap must be below tile");
  train::Checkpoint ckpt;
  try {
    ckpt = train::load_checkpoint(opt.checkpoint);
  } catch (const Error& e) {
    fail(ErrorKind::data, "cannot load checkpoint " + opt.checkpoint + ": " + e.what());
  }
  ExperimentConfig config;
  std::unique_ptr<fractal::FrnModel> holder;
  fractal::FrnModel& model = restore_model(holder, ckpt, config);
  DataConfig data = config.data;
  if (!opt.data.empty()) {
    data.dir = opt.data;
    data.crf.clear();
  }
  LoadedData loaded = load_dataset(data, config.model.bands);
  train::Dataset scenes = loaded.scenes;
  if (opt.holdout > 0 && opt.holdout < scenes.size()) scenes = split_holdout(scenes, opt.holdout).second;

  const fs::path out(opt.out);
  make_dirs(out);
  const train::TileOptions tiles{opt.tile, opt.overlap};
  std::vector<train::SceneReport> rows;
  for (const auto& s : scenes) {
    auto pred = train::predict_tiled(model, s.rgb, tiles);
    rows.push_back({s.name, metrics::evaluate_metrics(pred, s.cube, opt.per_band)});
    export_scene(out / "img" / s.name, out / "curves", s.name, pred, s.cube, opt.probes);
    emit(log, s.name + " psnr " + format("%.3f", rows.back().metrics.psnr_db));
  }
  json result = report_json(train::aggregate(std::move(rows)));
  result["checkpoint_step"] = ckpt.step;
  if (loaded.crf) result["baseline_pinv"] = report_json(pinv_baseline(scenes, *loaded.crf));
  write_text(out / "metrics.json", result.dump(2) + "\n");
  return result;
}

namespace {

struct Row {
  std::string label, dir;
  ExperimentConfig config;
};

std::vector<Row> ablation_rows(const AblateOptions& opt) {
  static const std::vector<std::string> kAlpha{"0.2", "0.3", "0.5", "0.7", "0.8"}, kLevels{"2", "3", "5"},
      kRefs{"2", "3", "4", "5"};
  std::string key, symbol;
  const std::vector<std::string>* defaults = nullptr;
  Row wo{"w/o", "wo", opt.base};
  if (opt.axis == "alpha") {
    key = "train.alpha", symbol = "alpha", defaults = &kAlpha;
    wo.config.model.alpha = 0.0;
  } else if (opt.axis == "levels") {
    key = "train.levels", symbol = "M", defaults = &kLevels;
    wo.config.model.levels = 1;
  } else if (opt.axis == "refs") {
    key = "train.refs", symbol = "S", defaults = &kRefs;
    wo = {"w/o RGB", "wo_rgb", opt.base};
    wo.config.model.use_rgb = false;
  } else {
    fail(ErrorKind::config, "ablate: unknown axis '" + opt.axis + "' (expected alpha, levels or refs)");
  }
  std::vector<Row> rows{wo};
  for (const auto& v : opt.values.empty() ? *defaults : opt.values) {
    Row r{symbol + "=" + v, symbol + "_" + v, opt.base};
    try {
      apply_overrides(r.config, {{key, v}});
      if (opt.axis == "alpha")
        require(r.config.model.alpha > 0.0, ErrorKind::config, "alpha 0 is the w/o row");
      r.config.validate();
    } catch (const Error& e) {
      fail(ErrorKind::config, "ablate: invalid " + opt.axis + " value '" + v + "': " + e.what());
    }
    rows.push_back(std::move(r));
  }
  for (auto& r : rows) {
    r.config.resume.clear();
    r.config.out = (fs::path(opt.base.out) / opt.axis / r.dir).string();
    r.config.validate();
  }
  return rows;
}

}  // namespace

json cmd_ablate(const AblateOptions& opt, const LogSink& log) {
  std::vector<Row> rows = ablation_rows(opt);
  const fs::path dir = fs::path(opt.base.out) / opt.axis;
  make_dirs(dir);
  json results = json::array();
  for (const auto& r : rows) {
    emit(log, "ablate " + opt.axis + ": " + r.label);
    json rep = cmd_train(r.config, log);
    const json& m = rep["eval"];
    results.push_back({{"config", r.label},
                       {"psnr_db", m["psnr_db"]},
                       {"rmse_255", m["rmse_255"]},
                       {"uiqi", m["uiqi"]},
                       {"ssim", m["ssim"]},
                       {"run", r.config.out}});
  }

  // Best value per column is bolded in the markdown table.
  auto value = [&](std::size_t i, const char* k) {
    const json& v = results[i][k];
    return v.is_number() ? v.get<double>() : std::nan("");
  };
  const char* cols[] = {"psnr_db", "rmse_255", "uiqi", "ssim"};
  const bool lower_better[] = {false, true, false, false};
  std::size_t best[4] = {0, 0, 0, 0};
  for (int c = 0; c < 4; ++c)
    for (std::size_t i = 1; i < results.size(); ++i) {
      const double a = value(i, cols[c]), b = value(best[c], cols[c]);
      if (lower_better[c] ? a < b : a > b) best[c] = i;
    }
  std::ostringstream md, csv;
  md << "| Config | PSNR | RMSE | UIQI | SSIM |\n|:--|--:|--:|--:|--:|\n";
  csv << "Config,PSNR,RMSE,UIQI,SSIM\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    md << "| " << results[i]["config"].get<std::string>();
    csv << results[i]["config"].get<std::string>();
    for (int c = 0; c < 4; ++c) {
      const std::string v = format("%.4f", value(i, cols[c]));
      md << " | " << (best[c] == i ? "**" + v + "**" : v);
      csv << "," << v;
    }
    md << " |\n";
    csv << "\n";
  }
  json out = {{"axis", opt.axis}, {"columns", {"Config", "PSNR", "RMSE", "UIQI", "SSIM"}}, {"rows", results}};
  if (opt.axis == "levels") {
    std::size_t deepest = 1, top = 1;
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (rows[i].config.model.levels > top) top = rows[i].config.model.levels, deepest = i;
    const double fr = value(deepest, "psnr_db"), one = value(0, "psnr_db");
    out["trend"] = {{"compare", rows[deepest].label + " vs w/o"},
                    {"psnr_deepest", fr},
                    {"psnr_one_shot", one},
                    {"delta_db", fr - one},
                    {"deepest_at_least_one_shot", fr >= one}};
    md << "\nTrend: " << rows[deepest].label << " minus one-shot = " << format("%+.4f", fr - one) << " dB\n";
  }
  write_text(dir / "table.md", md.str());
  write_text(dir / "table.csv", csv.str());
  write_text(dir / "ablation.json", out.dump(2) + "\n");
  out["table_md"] = md.str();
  return out;
}

}  // namespace frn::experiment
