#ifndef CATT_CLI_HPP
#define CATT_CLI_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "catt/data.hpp"
#include "catt/encoder.hpp"
#include "catt/eval.hpp"
#include "catt/trainer.hpp"

namespace catt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

/// Flat key -> value settings. Section headers in config files prefix their keys
/// ("[train]" then "seq_len = 32" gives "train.seq_len").
class Settings {
public:
  /// Every known key with its default value.
  static Settings defaults();
  static bool known(const std::string& key);

  /// Applies "key = value" lines; '#' starts a comment; "[section]" sets a prefix.
  void merge_text(const std::string& text, const std::string& origin);
  /// Applies "key=value".
  void merge_assignment(const std::string& assignment);
  void set(const std::string& key, const std::string& value);
  void merge_json(const nlohmann::json& obj);

  const std::string& str(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  std::uint64_t uinteger(const std::string& key) const;
  double real(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;
  std::vector<Index> integers(const std::string& key) const;
  std::vector<std::string> strings(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  nlohmann::json to_json(bool include_paths = true) const;

private:
  std::map<std::string, std::string> values_;
};

/// Typed views of the settings, with every seed derived from the root seed.
struct RunConfig {
  std::uint64_t seed = 0;
  bool deterministic = false;
  int threads = 1;
  std::string input;
  std::string checkpoint;
  std::string out_dir = ".";

  std::string data_kind;
  SynthConfig synth;
  double anomaly_fraction = 0.05;
  Index ar_dim = 8;
  double train_fraction = 0.8;
  std::string normalize;
  CsvSchema csv;
  StftConfig stft;
  Index target_feature = 0;

  EncoderConfig encoder;
  TrainConfig train;
  ProbeConfig probe;
  std::vector<double> semisup_fractions;
  int semisup_runs = 1;
  ForecastConfig forecast;
  double variance_retained = 1.0;
  int normal_label = 0;

  static RunConfig resolve(const Settings& s);
};

/// Runs one subcommand. Returns the process exit code; diagnostics go to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace catt::cli

#endif  // CATT_CLI_HPP
