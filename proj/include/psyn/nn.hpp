#pragma once

#include <map>
#include <string>
#include <vector>

#include "psyn/checkpoint.hpp"
#include "psyn/optim.hpp"
#include "psyn/rng.hpp"
#include "psyn/tensor.hpp"

namespace psyn {

enum class CriticNorm { batch, none };

/// Architecture hyperparameters shared by the generator and the critic.
///
/// The generator has log2(image_size) stride-2 encoder levels ending at a
/// 1x1 bottleneck, mirrored by as many decoder levels. The critic trunk has
/// `critic_levels` stride-2 levels and one scoring head per entry of
/// `critic_patch_levels` (score-map resolutions).
struct NetConfig {
  int image_size = 256;
  int in_channels = 3;
  int out_channels = 3;
  int base_width = 64;
  int width_cap = 512;
  int critic_levels = 4;
  std::vector<int> critic_patch_levels{64, 16};
  CriticNorm critic_norm = CriticNorm::batch;
  bool critic_conditioned = true;
  int dropout_layers = 3;
  double dropout_rate = 0.5;
  DType dtype = DType::f32;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  int depth() const;
  /// Channel width of encoder level `level` (1-based).
  int encoder_width(int level) const;
  int critic_width(int level) const;

  /// key=value lines, one per field; round-trips through from_text.
  std::string to_text() const;
  static NetConfig from_text(const std::string& text);

  bool operator==(const NetConfig&) const = default;

  static NetConfig full_scale();
  /// Same topology scaled down: narrow widths, heads at size/4 and size/16.
  static NetConfig desk_scale(int image_size);
};

/// Conv -> (BatchNorm) -> activation blocks are addressed by name; parameters
/// live in a ParamSet under "<model>/<layer>/<kind>".
class Generator {
 public:
  Generator() = default;
  static Generator build(const NetConfig& cfg, Rng& rng);

  /// condition: [N, in_channels, S, S] -> [N, out_channels, S, S] in [-1, 1].
  /// `rng` drives dropout in train mode.
  Tensor forward(const Tensor& condition, Mode mode, Rng& rng);

  /// Forward with a decoder skip connection replaced by zeros; used to show
  /// each skip carries signal. level is 1-based (encoder level).
  Tensor forward_without_skip(const Tensor& condition, Mode mode, Rng& rng, int level);

  const NetConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  std::map<std::string, RunningStats>& running_stats() { return stats_; }

  int encoder_levels() const { return cfg_.depth(); }
  /// Encoder output shapes of the most recent forward, level 1 first.
  const std::vector<Shape>& last_encoder_shapes() const { return encoder_shapes_; }

  void save(Checkpoint& ckpt) const;
  void load(const Checkpoint& ckpt);

 private:
  Tensor run(const Tensor& condition, Mode mode, Rng& rng, int dropped_skip);

  NetConfig cfg_;
  ParamSet params_;
  std::map<std::string, RunningStats> stats_;
  std::vector<Shape> encoder_shapes_;
};

class Critic {
 public:
  Critic() = default;
  static Critic build(const NetConfig& cfg, Rng& rng);

  /// One [N,1,r,r] score map per configured patch resolution r, in
  /// `critic_patch_levels` order. Scores are unbounded.
  std::vector<Tensor> forward(const Tensor& condition, const Tensor& image, Mode mode);

  const NetConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  void save(Checkpoint& ckpt) const;
  void load(const Checkpoint& ckpt);

 private:
  NetConfig cfg_;
  ParamSet params_;
  std::map<std::string, RunningStats> stats_;
  std::vector<int> head_levels_;
};

/// Rebuilds a generator from a checkpoint whose header carries a NetConfig.
Generator load_generator(const Checkpoint& ckpt);

/// Header helpers: the header is key=value lines; `task=` and NetConfig keys
/// share it.
std::map<std::string, std::string> parse_header(const std::string& header);

}  // namespace psyn
