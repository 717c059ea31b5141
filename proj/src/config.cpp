#include "pnet/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace pnet {

RunConfig::RunConfig() {
  // Desk-scale defaults; the model keys override them.
  model.base_channels = 8;
  model.n_classes = 3;
  train.epochs = 30;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end)
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + value + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

template <typename Fn>
auto wrap(const std::string& key, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

}  // namespace

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys{
      "model.variant",        "model.first_layer",     "model.base_channels",   "model.depth",
      "model.n_classes",      "loggabor.kernel_size",  "mixpool.alpha",         "dilated.rates",
      "train.epochs",         "train.batch_size",      "train.lr",              "train.seed",
      "train.eval_every",     "train.augment",         "train.checkpoint",      "train.history",
      "data.root",            "data.seed",             "data.synth.n_samples",  "data.synth.image_size",
      "data.synth.n_classes", "data.synth.blobs_min",  "data.synth.blobs_max",  "data.synth.radius_min",
      "data.synth.radius_max", "data.synth.noise",     "data.synth.shadow_prob", "data.synth.allow_overlap"};
  return keys;
}

std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": missing key");
    if (!out.emplace(key, value).second) throw ConfigError(where + ": duplicate key '" + key + "'");
  }
  return out;
}

void apply_setting(RunConfig& c, const std::string& key, const std::string& v) {
  auto& m = c.model;
  auto& t = c.train;
  auto& s = c.synth;
  if (key == "model.variant") m.variant = wrap(key, [&] { return parse_variant(v); });
  else if (key == "model.first_layer") m.first_layer = wrap(key, [&] { return parse_first_layer(v); });
  else if (key == "model.base_channels") m.base_channels = parse_number<int>(key, v);
  else if (key == "model.depth") m.depth = parse_number<int>(key, v);
  else if (key == "model.n_classes") m.n_classes = parse_number<int>(key, v);
  else if (key == "loggabor.kernel_size") m.loggabor_kernel = parse_number<int>(key, v);
  else if (key == "mixpool.alpha") m.mix_alpha = parse_number<double>(key, v);
  else if (key == "dilated.rates") m.dilation_rates = parse_int_list(key, v);
  else if (key == "train.epochs") t.epochs = parse_number<int>(key, v);
  else if (key == "train.batch_size") t.batch_size = parse_number<int>(key, v);
  else if (key == "train.lr") t.adam.lr = parse_number<double>(key, v);
  else if (key == "train.seed") t.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "train.eval_every") t.eval_every = parse_number<int>(key, v);
  else if (key == "train.augment") t.augment = parse_bool(key, v);
  else if (key == "train.checkpoint") t.checkpoint = std::filesystem::path(v);
  else if (key == "train.history") c.history = std::filesystem::path(v);
  else if (key == "data.root") c.data_root = std::filesystem::path(v);
  else if (key == "data.seed") c.data_seed = parse_number<std::uint64_t>(key, v);
  else if (key == "data.synth.n_samples") s.n_samples = parse_number<int>(key, v);
  else if (key == "data.synth.image_size") s.image_size = parse_number<int>(key, v);
  else if (key == "data.synth.n_classes") s.n_classes = parse_number<int>(key, v);
  else if (key == "data.synth.blobs_min") s.blobs_min = parse_number<int>(key, v);
  else if (key == "data.synth.blobs_max") s.blobs_max = parse_number<int>(key, v);
  else if (key == "data.synth.radius_min") s.radius_min = parse_number<double>(key, v);
  else if (key == "data.synth.radius_max") s.radius_max = parse_number<double>(key, v);
  else if (key == "data.synth.noise") s.noise = parse_number<double>(key, v);
  else if (key == "data.synth.shadow_prob") s.shadow_prob = parse_number<double>(key, v);
  else if (key == "data.synth.allow_overlap") s.allow_overlap = parse_bool(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  RunConfig c;
  for (const auto& [k, v] : parse_key_values(text, origin)) apply_setting(c, k, v);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

}  // namespace pnet
