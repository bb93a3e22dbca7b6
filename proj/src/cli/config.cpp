#include <charconv>
#include <sstream>

#include "catt/cli.hpp"
#include "catt/loss.hpp"

namespace catt::cli {

namespace {

struct Default {
  const char* key;
  const char* value;
};

constexpr Default kDefaults[] = {
    {"seed", "0"},
    {"deterministic", "false"},
    {"threads", "1"},
    {"input", ""},
    {"checkpoint", ""},
    {"out_dir", "."},
    {"data.kind", "regimes"},
    {"data.n_instances", "20000"},
    {"data.n_regimes", "4"},
    {"data.instances_per_regime_mean", "100"},
    {"data.n_channels", "256"},
    {"data.noise_std", "0.1"},
    {"data.template_amplitude", "0.024"},
    {"data.anomaly_fraction", "0.05"},
    {"data.ar_dim", "8"},
    {"data.train_fraction", "0.8"},
    {"data.normalize", "auto"},
    {"data.time_column", ""},
    {"data.label_column", ""},
    {"data.channels", ""},
    {"data.sample_rate_hz", ""},
    {"data.stft_window", "50"},
    {"data.stft_hop", "25"},
    {"data.target_feature", "0"},
    {"encoder.hidden_dims", "128,64,32"},
    {"encoder.output_dim", "320"},
    {"encoder.bn_momentum", "0.1"},
    {"encoder.bn_eps", "1e-5"},
    {"train.learning_rate", "0.001"},
    {"train.batch_size", "8"},
    {"train.seq_len", "119"},
    {"train.temperature", "0.5"},
    {"train.variant", "mp_xent"},
    {"train.per_sequence_mask", "false"},
    {"train.n_iterations", "auto"},
    {"train.weight_decay", "0.01"},
    {"train.adam_beta1", "0.9"},
    {"train.adam_beta2", "0.999"},
    {"train.adam_eps", "1e-8"},
    {"probe.epochs", "10"},
    {"probe.learning_rate", "0.001"},
    {"probe.weight_decay", "0.01"},
    {"probe.batch_size", "64"},
    {"semisup.fractions", "0.05,0.1,0.2"},
    {"semisup.n_runs", "15"},
    {"forecast.horizons", "24,48,168,336,720"},
    {"forecast.alpha_grid", "0.1,0.2,0.5,1,2,5,10,20,50,100,200,500,1000"},
    {"forecast.validation_fraction", "0.2"},
    {"anomaly.variance_retained", "1.0"},
    {"anomaly.normal_label", "0"},
};

const char* const kPathKeys[] = {"input", "checkpoint", "out_dir"};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string unquote(std::string s) {
  s = trim(s);
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) return s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string> split_list(const std::string& raw) {
  std::string s = trim(raw);
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']') throw ConfigError("unterminated list: " + raw);
    s = s.substr(1, s.size() - 2);
  }
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(unquote(item));
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const std::string t = trim(text);
  const char* first = t.data();
  if (!t.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), value);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
    throw ConfigError("setting '" + key + "': cannot parse '" + text + "' as a number");
  return value;
}

}  // namespace

Settings Settings::defaults() {
  Settings s;
  for (const auto& d : kDefaults) s.values_[d.key] = d.value;
  return s;
}

bool Settings::known(const std::string& key) {
  for (const auto& d : kDefaults)
    if (key == d.key) return true;
  return false;
}

void Settings::set(const std::string& key, const std::string& value) {
  if (!known(key)) throw ConfigError("unknown setting '" + key + "'");
  values_[key] = value;
}

void Settings::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']' && line.find('=') == std::string::npos) {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string full = section.empty() ? key : section + "." + key;
    if (!known(full)) throw ConfigError(origin + ":" + std::to_string(line_no) + ": unknown setting '" + full + "'");
    values_[full] = unquote(line.substr(eq + 1));
  }
}

void Settings::merge_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), unquote(assignment.substr(eq + 1)));
}

void Settings::merge_json(const nlohmann::json& obj) {
  if (!obj.is_object()) throw ConfigError("manifest config must be an object");
  for (const auto& [k, v] : obj.items()) set(k, v.is_string() ? v.get<std::string>() : v.dump());
}

const std::string& Settings::str(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown setting '" + key + "'");
  return it->second;
}

std::int64_t Settings::integer(const std::string& key) const { return parse_number<std::int64_t>(key, str(key)); }

std::uint64_t Settings::uinteger(const std::string& key) const { return parse_number<std::uint64_t>(key, str(key)); }

double Settings::real(const std::string& key) const { return parse_number<double>(key, str(key)); }

bool Settings::boolean(const std::string& key) const {
  const std::string v = trim(str(key));
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("setting '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<double> Settings::reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(str(key))) out.push_back(parse_number<double>(key, item));
  return out;
}

std::vector<Index> Settings::integers(const std::string& key) const {
  std::vector<Index> out;
  for (const auto& item : split_list(str(key))) out.push_back(parse_number<Index>(key, item));
  return out;
}

std::vector<std::string> Settings::strings(const std::string& key) const { return split_list(str(key)); }

nlohmann::json Settings::to_json(bool include_paths) const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : values_) {
    bool is_path = false;
    for (const char* p : kPathKeys) is_path = is_path || k == p;
    if (include_paths || !is_path) j[k] = v;
  }
  return j;
}

RunConfig RunConfig::resolve(const Settings& s) {
  RunConfig c;
  c.seed = s.uinteger("seed");
  c.deterministic = s.boolean("deterministic");
  c.threads = static_cast<int>(s.integer("threads"));
  if (c.threads < 1) throw ConfigError("threads must be >= 1");
  if (c.deterministic) c.threads = 1;
  c.input = s.str("input");
  c.checkpoint = s.str("checkpoint");
  c.out_dir = s.str("out_dir");

  c.data_kind = s.str("data.kind");
  if (c.data_kind != "regimes" && c.data_kind != "line" && c.data_kind != "ar")
    throw ConfigError("data.kind must be regimes, line or ar (got '" + c.data_kind + "')");
  c.synth.n_instances = s.integer("data.n_instances");
  c.synth.n_regimes = static_cast<int>(s.integer("data.n_regimes"));
  c.synth.instances_per_regime_mean = s.integer("data.instances_per_regime_mean");
  c.synth.n_channels = s.integer("data.n_channels");
  c.synth.noise_std = s.real("data.noise_std");
  c.synth.template_amplitude = s.real("data.template_amplitude");
  c.synth.seed = derive_seed(c.seed, "data");
  c.synth.validate();
  c.anomaly_fraction = s.real("data.anomaly_fraction");
  c.ar_dim = s.integer("data.ar_dim");
  c.train_fraction = s.real("data.train_fraction");
  if (!(c.train_fraction > 0 && c.train_fraction < 1)) throw ConfigError("data.train_fraction must be in (0, 1)");
  c.normalize = s.str("data.normalize");
  if (c.normalize != "auto" && c.normalize != "true" && c.normalize != "false")
    throw ConfigError("data.normalize must be auto, true or false");
  if (!s.str("data.time_column").empty()) c.csv.time_column = s.str("data.time_column");
  if (!s.str("data.label_column").empty()) c.csv.label_column = s.str("data.label_column");
  c.csv.channel_columns = s.strings("data.channels");
  if (!trim(s.str("data.sample_rate_hz")).empty()) c.csv.sample_rate_hz = s.real("data.sample_rate_hz");
  c.stft.window_samples = s.integer("data.stft_window");
  c.stft.hop_samples = s.integer("data.stft_hop");
  c.stft.validate();
  c.target_feature = s.integer("data.target_feature");

  c.encoder.hidden_dims = s.integers("encoder.hidden_dims");
  c.encoder.output_dim = s.integer("encoder.output_dim");
  c.encoder.bn_momentum = s.real("encoder.bn_momentum");
  c.encoder.bn_eps = s.real("encoder.bn_eps");
  c.encoder.init_seed = derive_seed(c.seed, "init");

  c.train.learning_rate = s.real("train.learning_rate");
  c.train.batch_size = s.integer("train.batch_size");
  c.train.seq_len = s.integer("train.seq_len");
  c.train.temperature = s.real("train.temperature");
  c.train.variant = parse_loss_variant(s.str("train.variant"));
  c.train.per_sequence_mask = s.boolean("train.per_sequence_mask");
  if (trim(s.str("train.n_iterations")) != "auto") c.train.n_iterations = s.integer("train.n_iterations");
  c.train.weight_decay = s.real("train.weight_decay");
  c.train.adam_beta1 = s.real("train.adam_beta1");
  c.train.adam_beta2 = s.real("train.adam_beta2");
  c.train.adam_eps = s.real("train.adam_eps");
  c.train.seed = c.seed;
  c.train.validate();

  c.probe.epochs = static_cast<int>(s.integer("probe.epochs"));
  c.probe.learning_rate = s.real("probe.learning_rate");
  c.probe.weight_decay = s.real("probe.weight_decay");
  c.probe.batch_size = s.integer("probe.batch_size");
  c.probe.seed = derive_seed(c.seed, "probe");
  c.probe.validate();
  c.semisup_fractions = s.reals("semisup.fractions");
  c.semisup_runs = static_cast<int>(s.integer("semisup.n_runs"));

  c.forecast.horizons = s.integers("forecast.horizons");
  c.forecast.ridge_alpha_grid = s.reals("forecast.alpha_grid");
  c.forecast.validation_fraction = s.real("forecast.validation_fraction");
  c.forecast.validate();
  c.variance_retained = s.real("anomaly.variance_retained");
  c.normal_label = static_cast<int>(s.integer("anomaly.normal_label"));
  return c;
}

}  // namespace catt::cli
