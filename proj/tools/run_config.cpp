#include "run_config.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>

namespace psyn::cli {

namespace fs = std::filesystem;

const std::vector<KeyDef>& config_keys() {
  static const std::vector<KeyDef> keys = {
      {"seed", "0", "run", "master seed; every random stream derives from it"},
      {"runs_root", "runs", "run", "parent directory of auto-named run directories"},
      {"run_dir", "", "run", "explicit run directory, replaces <runs_root>/<timestamp>-seed<seed>"},

      {"scale", "desk", "network", "network preset before per-key overrides: desk or full"},
      {"size", "64", "network", "working image size in pixels (square)"},
      {"base_width", "", "network", "first encoder level width"},
      {"width_cap", "", "network", "maximum channel width"},
      {"critic_levels", "", "network", "strided critic trunk levels"},
      {"critic_patch_levels", "", "network", "critic head resolutions, comma separated"},
      {"critic_norm", "", "network", "critic normalisation: batch or none"},
      {"critic_conditioned", "", "network", "critic sees the condition image: 0 or 1"},
      {"dropout_layers", "", "network", "decoder levels with dropout"},
      {"dropout_rate", "", "network", "decoder dropout probability"},
      {"dtype", "", "network", "parameter precision: f32 or f64"},

      {"lr", "0.0002", "training", "Adam learning rate"},
      {"beta1", "0.5", "training", "Adam first-moment decay"},
      {"beta2", "0.999", "training", "Adam second-moment decay"},
      {"batch_size", "4", "training", "pairs per step"},
      {"critic_iters", "5", "training", "critic updates per generator update"},
      {"steps", "1000", "training", "generator updates"},
      {"jitter", "1", "training", "resize-and-crop augmentation: 0 or 1"},
      {"jitter_resize", "0", "training", "jitter upscale size; 0 picks round(1.21875*size)"},
      {"checkpoint_every", "0", "training", "intermediate checkpoint period; 0 keeps only final.psyn"},
      {"lambda_reconst", "100", "training", "L1 reconstruction weight"},
      {"lambda_gp", "10", "training", "gradient penalty weight"},
      {"patch_weights", "", "training", "per-head critic weights, comma separated; empty weighs all 1"},

      {"data_dir", "", "data", "dataset root holding images/, masks/ and optionally id_map.csv"},
      {"image_dir", "", "data", "frame directory, overrides data_dir"},
      {"mask_dir", "", "data", "mask directory, overrides data_dir"},
      {"id_map", "", "data", "filename,polyp_id CSV, overrides data_dir"},
      {"n", "8", "data", "fixtures: number of samples"},
      {"n_ids", "4", "data", "fixtures: number of distinct polyps"},

      {"p2n_checkpoint", "", "generation", "polyp-to-negative checkpoint; needed when sources are polyp frames"},
      {"n2p_checkpoint", "", "generation", "negative-to-polyp checkpoint"},
      {"negative_dir", "", "generation", "polyp-free source frames; without it sources are dataset frames"},
      {"count", "10", "generation", "images to generate"},
      {"value", "-1", "generation", "condition mask value 0..255; -1 draws from the checkpoint's values"},
      {"radius", "", "generation", "polyp mask dilation before inpainting; default scales 10 px at 256"},

      {"detections", "", "evaluation", "CSV frame_id,x1,y1,x2,y2,score"},
      {"counts", "", "evaluation", "prematched CSV label,tp,fp,fn[,tn]; replaces detections"},
      {"gt_dir", "", "evaluation", "ground-truth mask PNGs keyed by frame id or filename"},
      {"pred_dir", "", "evaluation", "predicted mask PNGs"},
      {"sweep_file", "", "evaluation", "CSV n_synthetic with tp,fp,fn or precision,recall,f1"},

      {"bench_sizes", "64,256", "bench", "image sizes to time, comma separated"},
      {"bench_runs", "10", "bench", "timed forwards per size, at least 10"},
      {"bench_warmup", "2", "bench", "discarded forwards per size"},
  };
  return keys;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) values_[k.name] = k.fallback;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  it->second = value;
  explicit_.insert(key);
}

void RunConfig::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream is(text);
  std::string line;
  std::set<std::string> seen;
  for (int lineno = 1; std::getline(is, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    try {
      set(key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
}

void RunConfig::merge_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  merge_text(ss.str(), file.string());
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second;
}

int RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  char* end = nullptr;
  errno = 0;
  const long r = std::strtol(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || errno == ERANGE || r < INT32_MIN || r > INT32_MAX) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
  return static_cast<int>(r);
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  char* end = nullptr;
  const double r = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || !std::isfinite(r)) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return r;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  char* end = nullptr;
  errno = 0;
  const unsigned long long r = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || v[0] == '-' || *end != '\0' || errno == ERANGE) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return r;
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError(key + ": expected 0 or 1, got '" + v + "'");
}

std::optional<fs::path> RunConfig::get_path(const std::string& key) const {
  const std::string& v = get(key);
  if (v.empty()) return std::nullopt;
  return fs::path(v);
}

std::vector<int> RunConfig::get_ints(const std::string& key) const {
  std::vector<int> out;
  for (const auto& item : split_commas(get(key))) {
    char* end = nullptr;
    const long r = std::strtol(item.c_str(), &end, 10);
    if (item.empty() || *end != '\0') throw ConfigError(key + ": expected integers, got '" + get(key) + "'");
    out.push_back(static_cast<int>(r));
  }
  return out;
}

std::vector<double> RunConfig::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_commas(get(key))) {
    char* end = nullptr;
    const double r = std::strtod(item.c_str(), &end);
    if (item.empty() || *end != '\0') throw ConfigError(key + ": expected numbers, got '" + get(key) + "'");
    out.push_back(r);
  }
  return out;
}

NetConfig RunConfig::net() const { return net_at(get_int("size")); }

NetConfig RunConfig::net_at(int size) const {
  const std::string& scale = get("scale");
  NetConfig c;
  if (scale == "full") {
    c = NetConfig::full_scale();
    c.image_size = size;
  } else if (scale == "desk") {
    if (size < 16 || (size & (size - 1)) != 0) throw ConfigError("size: expected a power of two >= 16, got " + std::to_string(size));
    c = NetConfig::desk_scale(size);
  } else {
    throw ConfigError("scale: expected desk or full, got '" + scale + "'");
  }
  auto given = [&](const char* k) { return !get(k).empty(); };
  if (given("base_width")) c.base_width = get_int("base_width");
  if (given("width_cap")) c.width_cap = get_int("width_cap");
  if (given("critic_levels")) c.critic_levels = get_int("critic_levels");
  if (given("critic_patch_levels")) c.critic_patch_levels = get_ints("critic_patch_levels");
  if (given("critic_norm")) {
    const std::string& v = get("critic_norm");
    if (v != "batch" && v != "none") throw ConfigError("critic_norm: expected batch or none, got '" + v + "'");
    c.critic_norm = v == "batch" ? CriticNorm::batch : CriticNorm::none;
  }
  if (given("critic_conditioned")) c.critic_conditioned = get_bool("critic_conditioned");
  if (given("dropout_layers")) c.dropout_layers = get_int("dropout_layers");
  if (given("dropout_rate")) c.dropout_rate = get_double("dropout_rate");
  if (given("dtype")) {
    const std::string& v = get("dtype");
    if (v != "f32" && v != "f64") throw ConfigError("dtype: expected f32 or f64, got '" + v + "'");
    c.dtype = v == "f32" ? DType::f32 : DType::f64;
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

TrainConfig RunConfig::train() const {
  TrainConfig t;
  t.lr = get_double("lr");
  t.beta1 = get_double("beta1");
  t.beta2 = get_double("beta2");
  t.batch_size = get_int("batch_size");
  t.critic_iters_per_gen = get_int("critic_iters");
  t.total_steps = get_int("steps");
  t.jitter = get_bool("jitter");
  t.jitter_resize = get_int("jitter_resize");
  t.checkpoint_every = get_int("checkpoint_every");
  t.seed = get_u64("seed");
  try {
    t.validate(get_int("size"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return t;
}

LossWeights RunConfig::weights() const {
  LossWeights w;
  w.lambda_reconst = get_double("lambda_reconst");
  w.lambda_gp = get_double("lambda_gp");
  w.patch_weights = get("patch_weights").empty() ? std::vector<double>{} : get_doubles("patch_weights");
  try {
    w.validate(net().critic_patch_levels.size());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return w;
}

int RunConfig::radius() const {
  if (get("radius").empty()) return std::max(1, static_cast<int>(std::lround(10.0 * get_int("size") / 256.0)));
  const int r = get_int("radius");
  if (r < 0) throw ConfigError("radius: must be non-negative");
  return r;
}

std::string RunConfig::resolved_text() const {
  std::map<std::string, std::string> v = values_;
  const NetConfig c = net();
  v["base_width"] = std::to_string(c.base_width);
  v["width_cap"] = std::to_string(c.width_cap);
  v["critic_levels"] = std::to_string(c.critic_levels);
  v["critic_patch_levels"] = join(c.critic_patch_levels);
  v["critic_norm"] = c.critic_norm == CriticNorm::batch ? "batch" : "none";
  v["critic_conditioned"] = c.critic_conditioned ? "1" : "0";
  v["dropout_layers"] = std::to_string(c.dropout_layers);
  v["dropout_rate"] = num(c.dropout_rate);
  v["dtype"] = dtype_name(c.dtype);
  v["radius"] = std::to_string(radius());

  std::ostringstream os;
  os << "# run_dir=" << v["run_dir"] << "\n";
  const char* group = "";
  for (const auto& k : config_keys()) {
    if (std::string(k.name) == "run_dir") continue;  // archived as a comment so a rerun picks a fresh dir
    if (std::string(group) != k.group) {
      group = k.group;
      os << "\n# " << group << "\n";
    }
    os << k.name << '=' << v[k.name] << "\n";
  }
  return os.str();
}

fs::path make_run_dir(const RunConfig& cfg) {
  if (auto explicit_dir = cfg.get_path("run_dir")) {
    std::error_code ec;
    fs::create_directories(*explicit_dir, ec);
    if (ec || !fs::is_directory(*explicit_dir)) throw ConfigError("cannot create run_dir " + explicit_dir->string());
    return *explicit_dir;
  }
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  const fs::path root = cfg.get("runs_root");
  const std::string base = std::string(stamp) + "-seed" + std::to_string(cfg.get_u64("seed"));
  std::error_code ec;
  fs::create_directories(root, ec);
  for (int suffix = 1;; ++suffix) {
    const fs::path dir = root / (suffix == 1 ? base : base + "-" + std::to_string(suffix));
    if (fs::create_directory(dir, ec)) return dir;
    if (ec) throw ConfigError("cannot create run directory under " + root.string() + ": " + ec.message());
  }
}

}  // namespace psyn::cli
