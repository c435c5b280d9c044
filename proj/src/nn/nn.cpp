#include "psyn/nn.hpp"

#include <sstream>
#include <stdexcept>


namespace psyn {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kLeakySlope = 0.2;
constexpr double kBnEps = 1e-5;

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

int log2i(int v) {
  int l = 0;
  while ((1 << l) < v) ++l;
  return l;
}

Tensor gaussian(const Shape& shape, Rng& rng, DType dt) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.normal(0.0, kInitStd);
  return Tensor::from_values(shape, v, dt);
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  return add(x, broadcast_channel(bias, x.shape()));
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

std::string enc(int i) { return "gen/enc" + std::to_string(i); }
std::string dec(int i) { return "gen/dec" + std::to_string(i); }
std::string trunk(int i) { return "critic/trunk" + std::to_string(i); }
std::string head(int r) { return "critic/head" + std::to_string(r); }

void store_stats(Checkpoint& ckpt, const std::map<std::string, RunningStats>& stats) {
  for (const auto& [name, st] : stats) {
    if (!st.mean.defined()) continue;
    ckpt.put(name + "/running_mean", st.mean);
    ckpt.put(name + "/running_var", st.var);
  }
}

void load_stats(const Checkpoint& ckpt, std::map<std::string, RunningStats>& stats) {
  for (auto& [name, st] : stats) {
    const Tensor* m = ckpt.find(name + "/running_mean");
    const Tensor* v = ckpt.find(name + "/running_var");
    if (!m || !v) {
      throw CheckpointError("checkpoint lacks running statistics for " + name);
    }
    st.mean = m->detach();
    st.var = v->detach();
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// NetConfig

void NetConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("NetConfig: " + msg); };
  if (!is_pow2(image_size) || image_size < 32) {
    fail("image_size must be a power of two >= 32, got " + std::to_string(image_size));
  }
  if (in_channels <= 0 || out_channels <= 0) fail("channel counts must be positive");
  if (base_width <= 0 || width_cap <= 0) fail("widths must be positive");
  if (critic_levels < 1 || critic_levels > depth()) {
    fail("critic_levels must lie in [1, " + std::to_string(depth()) + "]");
  }
  if (critic_patch_levels.empty()) fail("critic needs at least one patch head");
  for (std::size_t i = 0; i < critic_patch_levels.size(); ++i) {
    const int r = critic_patch_levels[i];
    bool ok = false;
    for (int k = 1; k <= critic_levels; ++k) ok = ok || (image_size >> k) == r;
    if (!ok) {
      fail("patch resolution " + std::to_string(r) + " is not image_size/2^k for k <= " +
           std::to_string(critic_levels));
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (critic_patch_levels[j] == r) fail("duplicate patch resolution " + std::to_string(r));
    }
  }
  if (dropout_layers < 0 || dropout_layers > depth()) fail("dropout_layers out of range");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must lie in [0, 1)");
}

int NetConfig::depth() const { return log2i(image_size); }

int NetConfig::encoder_width(int level) const {
  long w = static_cast<long>(base_width) << (level - 1);
  return static_cast<int>(std::min<long>(w, width_cap));
}

int NetConfig::critic_width(int level) const { return encoder_width(level); }

std::string NetConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "size=" << image_size << '\n'
     << "in_channels=" << in_channels << '\n'
     << "out_channels=" << out_channels << '\n'
     << "base_width=" << base_width << '\n'
     << "width_cap=" << width_cap << '\n'
     << "critic_levels=" << critic_levels << '\n'
     << "critic_patch_levels=" << join_ints(critic_patch_levels) << '\n'
     << "critic_norm=" << (critic_norm == CriticNorm::batch ? "batch" : "none") << '\n'
     << "critic_conditioned=" << (critic_conditioned ? 1 : 0) << '\n'
     << "dropout_layers=" << dropout_layers << '\n'
     << "dropout_rate=" << dropout_rate << '\n'
     << "dtype=" << dtype_name(dtype) << '\n';
  return os.str();
}

std::map<std::string, std::string> parse_header(const std::string& header) {
  std::map<std::string, std::string> kv;
  std::istringstream is(header);
  std::string line;
  while (std::getline(is, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

NetConfig NetConfig::from_text(const std::string& text) {
  auto kv = parse_header(text);
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument(std::string("NetConfig: missing key ") + key);
    return it->second;
  };
  NetConfig c;
  c.image_size = std::stoi(get("size"));
  c.in_channels = std::stoi(get("in_channels"));
  c.out_channels = std::stoi(get("out_channels"));
  c.base_width = std::stoi(get("base_width"));
  c.width_cap = std::stoi(get("width_cap"));
  c.critic_levels = std::stoi(get("critic_levels"));
  c.critic_patch_levels = split_ints(get("critic_patch_levels"));
  const auto& norm = get("critic_norm");
  if (norm != "batch" && norm != "none") throw std::invalid_argument("NetConfig: critic_norm " + norm);
  c.critic_norm = norm == "batch" ? CriticNorm::batch : CriticNorm::none;
  c.critic_conditioned = std::stoi(get("critic_conditioned")) != 0;
  c.dropout_layers = std::stoi(get("dropout_layers"));
  c.dropout_rate = std::stod(get("dropout_rate"));
  const auto& dt = get("dtype");
  if (dt != "f32" && dt != "f64") throw std::invalid_argument("NetConfig: dtype " + dt);
  c.dtype = dt == "f32" ? DType::f32 : DType::f64;
  c.validate();
  return c;
}

NetConfig NetConfig::full_scale() { return NetConfig{}; }

NetConfig NetConfig::desk_scale(int image_size) {
  NetConfig c;
  c.image_size = image_size;
  c.base_width = 8;
  c.width_cap = 64;
  c.critic_levels = 4;
  c.critic_patch_levels = {image_size / 4, image_size / 16};
  return c;
}

// ---------------------------------------------------------------------------
// Generator

Generator Generator::build(const NetConfig& cfg, Rng& rng) {
  cfg.validate();
  Generator g;
  g.cfg_ = cfg;
  const int depth = cfg.depth();
  const DType dt = cfg.dtype;
  auto& ps = g.params_;

  for (int i = 1; i <= depth; ++i) {
    const int in = i == 1 ? cfg.in_channels : cfg.encoder_width(i - 1);
    const int out = cfg.encoder_width(i);
    ps.add(enc(i) + "/kernel", gaussian({out, in, 4, 4}, rng, dt));
    if (i == 1 || i == depth) {
      ps.add(enc(i) + "/bias", Tensor::zeros({out}, dt));
    } else {
      ps.add(enc(i) + "/bn/gamma", Tensor::full({out}, 1.0, dt));
      ps.add(enc(i) + "/bn/beta", Tensor::zeros({out}, dt));
      g.stats_[enc(i) + "/bn"] = RunningStats{};
    }
  }
  for (int j = depth; j >= 1; --j) {
    const int in = j == depth ? cfg.encoder_width(depth) : 2 * cfg.encoder_width(j);
    const int out = j == 1 ? cfg.out_channels : cfg.encoder_width(j - 1);
    ps.add(dec(j) + "/kernel", gaussian({in, out, 4, 4}, rng, dt));
    if (j == 1) {
      ps.add(dec(j) + "/bias", Tensor::zeros({out}, dt));
    } else {
      ps.add(dec(j) + "/bn/gamma", Tensor::full({out}, 1.0, dt));
      ps.add(dec(j) + "/bn/beta", Tensor::zeros({out}, dt));
      g.stats_[dec(j) + "/bn"] = RunningStats{};
    }
  }
  for (auto& [name, st] : g.stats_) {
    const auto c = ps.at(name + "/gamma").dim(0);
    st.mean = Tensor::zeros({c}, dt);
    st.var = Tensor::full({c}, 1.0, dt);
  }
  return g;
}

Tensor Generator::forward(const Tensor& condition, Mode mode, Rng& rng) {
  return run(condition, mode, rng, 0);
}

Tensor Generator::forward_without_skip(const Tensor& condition, Mode mode, Rng& rng, int level) {
  if (level < 1 || level >= cfg_.depth()) {
    throw std::invalid_argument("forward_without_skip: level must lie in [1, depth)");
  }
  return run(condition, mode, rng, level);
}

Tensor Generator::run(const Tensor& condition, Mode mode, Rng& rng, int dropped_skip) {
  const int s = cfg_.image_size;
  if (condition.rank() != 4 || condition.dim(1) != cfg_.in_channels || condition.dim(2) != s ||
      condition.dim(3) != s) {
    throw ShapeError("generator: expected [N," + std::to_string(cfg_.in_channels) + "," +
                     std::to_string(s) + "," + std::to_string(s) + "], got " +
                     shape_str(condition.shape()));
  }
  if (condition.dtype() != cfg_.dtype) throw ShapeError("generator: dtype mismatch");
  const int depth = cfg_.depth();

  std::vector<Tensor> skips(static_cast<std::size_t>(depth + 1));
  encoder_shapes_.clear();
  Tensor h = condition;
  for (int i = 1; i <= depth; ++i) {
    Tensor a = i == 1 ? h : leaky_relu(h, kLeakySlope);
    Tensor z = conv2d(a, params_.at(enc(i) + "/kernel"), 2, 1);
    if (i == 1 || i == depth) {
      z = add_bias(z, params_.at(enc(i) + "/bias"));
    } else {
      const std::string bn = enc(i) + "/bn";
      z = batch_norm(z, params_.at(bn + "/gamma"), params_.at(bn + "/beta"), kBnEps, mode,
                     stats_.at(bn));
    }
    skips[static_cast<std::size_t>(i)] = z;
    encoder_shapes_.push_back(z.shape());
    h = z;
  }

  for (int j = depth; j >= 1; --j) {
    Tensor in = h;
    if (j < depth) {
      Tensor skip = skips[static_cast<std::size_t>(j)];
      if (j == dropped_skip) skip = Tensor::zeros(skip.shape(), skip.dtype());
      in = concat_channels(h, skip);
    }
    Tensor z = conv_transpose2d(relu(in), params_.at(dec(j) + "/kernel"), 2, 1);
    if (j == 1) {
      h = tanh(add_bias(z, params_.at(dec(j) + "/bias")));
      break;
    }
    const std::string bn = dec(j) + "/bn";
    z = batch_norm(z, params_.at(bn + "/gamma"), params_.at(bn + "/beta"), kBnEps, mode,
                   stats_.at(bn));
    if (depth - j < cfg_.dropout_layers) z = dropout(z, cfg_.dropout_rate, mode, rng);
    h = z;
  }
  return h;
}

void Generator::save(Checkpoint& ckpt) const {
  store_params(ckpt, "", params_);
  store_stats(ckpt, stats_);
}

void Generator::load(const Checkpoint& ckpt) {
  load_params(ckpt, "", params_);
  load_stats(ckpt, stats_);
}

Generator load_generator(const Checkpoint& ckpt) {
  NetConfig cfg = NetConfig::from_text(ckpt.header);
  Rng rng(0);
  Generator g = Generator::build(cfg, rng);
  g.load(ckpt);
  return g;
}

// ---------------------------------------------------------------------------
// Critic

Critic Critic::build(const NetConfig& cfg, Rng& rng) {
  cfg.validate();
  Critic d;
  d.cfg_ = cfg;
  const DType dt = cfg.dtype;
  auto& ps = d.params_;
  const int in0 = cfg.critic_conditioned ? cfg.in_channels + cfg.out_channels : cfg.out_channels;
  for (int k = 1; k <= cfg.critic_levels; ++k) {
    const int in = k == 1 ? in0 : cfg.critic_width(k - 1);
    const int out = cfg.critic_width(k);
    ps.add(trunk(k) + "/kernel", gaussian({out, in, 4, 4}, rng, dt));
    if (k == 1 || cfg.critic_norm == CriticNorm::none) {
      ps.add(trunk(k) + "/bias", Tensor::zeros({out}, dt));
    } else {
      ps.add(trunk(k) + "/bn/gamma", Tensor::full({out}, 1.0, dt));
      ps.add(trunk(k) + "/bn/beta", Tensor::zeros({out}, dt));
      d.stats_[trunk(k) + "/bn"] = RunningStats{Tensor::zeros({out}, dt), Tensor::full({out}, 1.0, dt)};
    }
  }
  for (int r : cfg.critic_patch_levels) {
    const int level = log2i(cfg.image_size / r);
    d.head_levels_.push_back(level);
    ps.add(head(r) + "/kernel", gaussian({1, cfg.critic_width(level), 1, 1}, rng, dt));
    ps.add(head(r) + "/bias", Tensor::zeros({1}, dt));
  }
  return d;
}

std::vector<Tensor> Critic::forward(const Tensor& condition, const Tensor& image, Mode mode) {
  const int s = cfg_.image_size;
  if (image.rank() != 4 || image.dim(1) != cfg_.out_channels || image.dim(2) != s ||
      image.dim(3) != s) {
    throw ShapeError("critic: image must be [N," + std::to_string(cfg_.out_channels) + "," +
                     std::to_string(s) + "," + std::to_string(s) + "], got " +
                     shape_str(image.shape()));
  }
  Tensor h = image;
  if (cfg_.critic_conditioned) {
    if (condition.rank() != 4 || condition.dim(0) != image.dim(0) ||
        condition.dim(1) != cfg_.in_channels || condition.dim(2) != s || condition.dim(3) != s) {
      throw ShapeError("critic: condition " + shape_str(condition.shape()) +
                       " does not match image " + shape_str(image.shape()));
    }
    h = concat_channels(condition, image);
  }

  std::vector<Tensor> features(static_cast<std::size_t>(cfg_.critic_levels + 1));
  for (int k = 1; k <= cfg_.critic_levels; ++k) {
    Tensor z = conv2d(h, params_.at(trunk(k) + "/kernel"), 2, 1);
    const std::string bn = trunk(k) + "/bn";
    if (stats_.count(bn)) {
      z = batch_norm(z, params_.at(bn + "/gamma"), params_.at(bn + "/beta"), kBnEps, mode,
                     stats_.at(bn));
    } else {
      z = add_bias(z, params_.at(trunk(k) + "/bias"));
    }
    h = leaky_relu(z, kLeakySlope);
    features[static_cast<std::size_t>(k)] = h;
  }

  std::vector<Tensor> scores;
  for (std::size_t i = 0; i < cfg_.critic_patch_levels.size(); ++i) {
    const int r = cfg_.critic_patch_levels[i];
    const Tensor& f = features[static_cast<std::size_t>(head_levels_[i])];
    scores.push_back(add_bias(conv2d(f, params_.at(head(r) + "/kernel"), 1, 0),
                              params_.at(head(r) + "/bias")));
  }
  return scores;
}

void Critic::save(Checkpoint& ckpt) const {
  store_params(ckpt, "", params_);
  store_stats(ckpt, stats_);
}

void Critic::load(const Checkpoint& ckpt) {
  load_params(ckpt, "", params_);
  load_stats(ckpt, stats_);
}

}  // namespace psyn
