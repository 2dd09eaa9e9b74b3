#pragma once

// Command-line front end. Every command writes <out>/manifest.json with the
// argument vector, the resolved configuration, input and artifact SHA-256
// fingerprints; `rerun` replays a manifest into a fresh directory and
// compares artifact hashes.
//
// Exit codes: 0 success, 1 usage error (bad flags, bad configuration),
// 2 data or contract violation, 3 numerical failure.

#include "slff/data.hpp"
#include "slff/experiments.hpp"
#include "slff/synthetic.hpp"
#include "slff/training.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace slff {

inline constexpr const char* kToolVersion = "slff 1.0.0";

// --- Key-value configuration ---------------------------------------------------
//
// One "key = value" per line; '#' starts a comment; blank lines are ignored.
// Keys are fixed by config_schema(); unknown or repeated keys are errors.

struct ConfigKey {
  std::string key;
  std::string default_value;  // empty: taken from the DGP preset or derived from data
  std::string help;
};

const std::vector<ConfigKey>& config_schema();
// Named overlays on the defaults: "paper" (the defaults) and "desk".
std::map<std::string, std::string> config_preset(const std::string& name);

struct KvConfig {
  std::map<std::string, std::string> values;
  std::set<std::string> explicit_keys;  // set by a preset, file or override

  const std::string& get(const std::string& key) const;
  double number(const std::string& key) const;
  int integer(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<int> int_list(const std::string& key) const;
  void set(const std::string& key, const std::string& value);
};

std::map<std::string, std::string> parse_kv(std::string_view text);
std::string format_kv(const KvConfig& config);

// defaults < preset < file entries < overrides ("key=value").
KvConfig resolve_config(const std::string& preset, const std::map<std::string, std::string>& file_entries,
                        const std::vector<std::string>& overrides);

DgpConfig dgp_config(const KvConfig& config);
ModelConfig model_config(const KvConfig& config, int num_features, int num_horizons);
TrainConfig train_config(const KvConfig& config);
EnergyParams energy_params(const KvConfig& config);

// --- Data -----------------------------------------------------------------------

// A directory is either a synthetic dataset (config.json + latents.csv) or an
// aligned panel (values.csv, masks.csv, columns.csv) with an optional
// prices.csv (date,price) from which log-price targets are built. Panel
// splits follow the rolling-origin fold `data.fold`; train and validation
// windows whose targets reach past their split are purged.
struct LoadedData {
  bool synthetic = false;
  bool has_targets = true;
  std::optional<SyntheticDataset> dataset;
  ExperimentData splits;
  std::vector<int> horizons;
  std::vector<std::string> feature_names;
  std::vector<std::string> notes;
};

LoadedData load_data(const std::filesystem::path& dir, const KvConfig& config, int window);

// --- Entry point ---------------------------------------------------------------

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// SHA-256 of every regular file below root (or of root itself), keyed by
// relative path with '/' separators.
std::map<std::string, std::string> hash_tree(const std::filesystem::path& root,
                                             const std::set<std::string>& exclude = {});

}  // namespace slff
