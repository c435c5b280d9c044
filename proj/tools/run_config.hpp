#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "psyn/nn.hpp"
#include "psyn/train.hpp"

namespace psyn::cli {

/// Anything wrong with keys, values or their combination. Exit status 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct KeyDef {
  const char* name;
  /// Empty means "derived" (from the scale preset or another key).
  const char* fallback;
  const char* group;
  const char* help;
};

/// Every accepted key, in display order.
const std::vector<KeyDef>& config_keys();

/// Flat key=value configuration. Values stay textual until read through a
/// typed getter, which reports the offending key on a bad value.
class RunConfig {
 public:
  RunConfig();

  /// Throws ConfigError for an unknown key.
  void set(const std::string& key, const std::string& value);
  /// `#` starts a comment; blank lines are skipped; a key may appear once.
  void merge_text(const std::string& text, const std::string& origin);
  void merge_file(const std::filesystem::path& file);

  bool is_set(const std::string& key) const { return explicit_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::optional<std::filesystem::path> get_path(const std::string& key) const;
  std::vector<int> get_ints(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;

  /// Scale preset at `size`, then every explicitly set network key.
  NetConfig net() const;
  NetConfig net_at(int size) const;
  TrainConfig train() const;
  LossWeights weights() const;
  /// Inference dilation radius; unset scales 10 px at 256 to the working size.
  int radius() const;

  /// Every key with derived values filled in; loading it back gives the same run.
  std::string resolved_text() const;

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> explicit_;
};

/// `<runs_root>/<YYYYmmdd-HHMMSS>-seed<seed>` unless run_dir is set; created
/// on return, with a numeric suffix when the auto name is taken.
std::filesystem::path make_run_dir(const RunConfig& cfg);

}  // namespace psyn::cli
