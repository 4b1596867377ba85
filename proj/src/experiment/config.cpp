#include "experiment/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

namespace frn::experiment {

using nlohmann::json;

namespace {

// Every field of the document, in output order. `f` receives the dotted key
// and a reference to the value.
template <class Config, class F>
void visit_fields(Config& c, F&& f) {
  f("model.bands", c.model.bands);
  f("model.base_width", c.model.base_width);
  f("model.depth", c.model.depth);
  f("model.blocks_per_stage", c.model.blocks_per_stage);
  f("model.d_state", c.model.d_state);
  f("train.levels", c.model.levels);
  f("train.branch", c.model.branch);
  f("train.refs", c.model.refs);
  f("train.use_rgb", c.model.use_rgb);
  f("train.alpha", c.model.alpha);
  f("train.lr0", c.train.lr0);
  f("train.lr_min", c.train.lr_min);
  f("train.batch", c.train.batch);
  f("train.total_steps", c.train.total_steps);
  f("train.patch", c.train.patch);
  f("train.seed", c.train.seed);
  f("train.eval_every", c.train.eval_every);
  f("train.checkpoint_every", c.train.checkpoint_every);
  f("train.adam_beta1", c.train.adam.beta1);
  f("train.adam_beta2", c.train.adam.beta2);
  f("train.adam_eps", c.train.adam.eps);
  f("train.deep_supervision", c.train.deep_supervision);
  f("train.deep_weight", c.train.deep_weight);
  f("train.flips", c.train.flips);
  f("data.dir", c.data.dir);
  f("data.holdout", c.data.holdout);
  f("data.crf", c.data.crf);
  f("eval.tile", c.eval.tile);
  f("eval.overlap", c.eval.overlap);
  f("eval.per_band", c.eval.per_band);
  f("eval.probes", c.eval.probes);
  f("out", c.out);
  f("resume", c.resume);
  f("deterministic", c.deterministic);
}

json::json_pointer pointer(const std::string& dotted) {
  std::string p = "/" + dotted;
  for (auto& ch : p)
    if (ch == '.') ch = '/';
  return json::json_pointer(p);
}

void flatten(const json& node, const std::string& prefix, std::vector<std::string>& out) {
  if (node.is_object() && (prefix.empty() || !node.empty())) {
    for (const auto& [k, v] : node.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
  } else {
    out.push_back(prefix);
  }
}

template <class T>
void read_value(const json& v, const std::string& key, T& dst) {
  auto bad = [&](const char* want) {
    fail(ErrorKind::config, "config key '" + key + "' expects " + want + ", got " + v.dump());
  };
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) bad("a boolean");
    dst = v.get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) bad("a string");
    dst = v.get<std::string>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) bad("a number");
    dst = v.get<double>();
  } else {
    if (!v.is_number_unsigned()) bad("a nonnegative integer");
    dst = v.get<T>();
  }
}

template <class T>
void parse_text(const std::string& text, const std::string& key, T& dst) {
  auto bad = [&](const char* want) {
    fail(ErrorKind::config, "config key '" + key + "' expects " + want + ", got '" + text + "'");
  };
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1") dst = true;
    else if (text == "false" || text == "0") dst = false;
    else bad("true or false");
  } else if constexpr (std::is_same_v<T, std::string>) {
    dst = text;
  } else if constexpr (std::is_floating_point_v<T>) {
    std::istringstream is(text);
    is.imbue(std::locale::classic());
    double d;
    if (!(is >> d) || !is.eof()) bad("a number");
    dst = d;
  } else {
    T n{};
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), n);
    if (ec != std::errc() || end != text.data() + text.size()) bad("a nonnegative integer");
    dst = n;
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  try {
    model.validate();
    train.validate();
  } catch (const Error& e) {
    fail(ErrorKind::config, e.what());
  }
  require(train.patch % model.generator_config(2).spatial_multiple() == 0, ErrorKind::config,
          "train.patch must be a multiple of 2^model.depth");
  require(eval.tile >= 1 && eval.overlap < eval.tile, ErrorKind::config, "eval.overlap must be below eval.tile");
  require(eval.tile % model.generator_config(2).spatial_multiple() == 0, ErrorKind::config,
          "eval.tile must be a multiple of 2^model.depth");
  require(!out.empty(), ErrorKind::config, "out must name a directory");
}

json to_json(const ExperimentConfig& config) {
  json doc = json::object();
  ExperimentConfig copy = config;
  visit_fields(copy, [&](const std::string& key, auto& v) { doc[pointer(key)] = v; });
  return doc;
}

ExperimentConfig from_json(const json& doc) {
  require(doc.is_object(), ErrorKind::config, "config must be a JSON object");
  const auto known = config_keys();
  const std::set<std::string> known_set(known.begin(), known.end());
  std::vector<std::string> present;
  flatten(doc, "", present);
  for (const auto& k : present)
    require(known_set.count(k) > 0, ErrorKind::config, "unknown config key '" + k + "'");
  ExperimentConfig c;
  visit_fields(c, [&](const std::string& key, auto& v) {
    const auto p = pointer(key);
    if (doc.contains(p)) read_value(doc.at(p), key, v);
  });
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::config, "cannot read config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::config, "config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(doc);
}

void apply_overrides(ExperimentConfig& config, const std::vector<std::pair<std::string, std::string>>& overrides) {
  for (const auto& [key, text] : overrides) {
    bool hit = false;
    visit_fields(config, [&](const std::string& k, auto& v) {
      if (k == key) {
        parse_text(text, key, v);
        hit = true;
      }
    });
    require(hit, ErrorKind::config, "unknown config key '" + key + "'");
  }
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  ExperimentConfig c;
  visit_fields(c, [&](const std::string& k, auto&) { keys.push_back(k); });
  return keys;
}

}  // namespace frn::experiment
