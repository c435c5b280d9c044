#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "psyn/data.hpp"
#include "psyn/nn.hpp"

namespace psyn {

enum class Task { p2n, n2p };

const char* task_name(Task t);
/// Throws std::invalid_argument for anything but "p2n" or "n2p".
Task parse_task(const std::string& name);

struct LossWeights {
  double lambda_reconst = 100.0;
  double lambda_gp = 10.0;
  /// One weight per critic head; empty means every head weighs 1.
  std::vector<double> patch_weights;

  double head_weight(std::size_t head) const;
  /// Throws std::invalid_argument on a negative weight or a head-count mismatch.
  void validate(std::size_t heads) const;
};

struct TrainConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch_size = 4;
  int critic_iters_per_gen = 5;
  int total_steps = 1000;
  /// 0 selects round(1.21875 * image_size).
  int jitter_resize = 0;
  bool jitter = true;
  std::uint64_t seed = 0;
  /// 0 writes only the final checkpoint.
  int checkpoint_every = 0;

  int resolved_jitter(int image_size) const;
  void validate(int image_size) const;
};

/// Raised when a loss turns non-finite; a snapshot has been written when an
/// output directory was given.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bilinear resize of both images to `resize`, then a crop back to the
/// original extent at one shared offset drawn from `rng`.
ConditionedPair jitter(const ConditionedPair& pair, int resize, Rng& rng);
ConditionedPair jitter_at(const ConditionedPair& pair, int resize, int ox, int oy);

/// Critic as a function of (condition, image) returning one score map per head.
using ScoreFn = std::function<std::vector<Tensor>(const Tensor&, const Tensor&)>;

ScoreFn critic_scores(Critic& d, Mode mode);

/// Sum over samples of the head-weighted per-sample mean score.
Tensor weighted_score(const std::vector<Tensor>& maps, const LossWeights& w);

/// Mean over samples of (|grad_x S(cond, x)|_2 - 1)^2 with S the weighted
/// score, at x = fake + eps (real - fake), eps ~ U(0, 1) per sample.
/// Differentiable with respect to the critic parameters.
Tensor gradient_penalty(const ScoreFn& d, const Tensor& cond, const Tensor& real, const Tensor& fake,
                        const LossWeights& w, Rng& rng);

struct CriticLoss {
  Tensor total;
  double adversarial = 0.0;
  double gp = 0.0;
};

CriticLoss critic_loss(const ScoreFn& d, const Tensor& cond, const Tensor& real, const Tensor& fake,
                       const LossWeights& w, Rng& rng);

struct GeneratorLoss {
  Tensor total;
  double adversarial = 0.0;
  /// Unweighted mean |fake - target|.
  double l1 = 0.0;
};

GeneratorLoss generator_loss(const ScoreFn& d, const Tensor& cond, const Tensor& fake, const Tensor& target,
                             const LossWeights& w);

struct MetricRecord {
  int step = 0;
  Task task = Task::p2n;
  double critic_loss = 0.0;
  double gp = 0.0;
  double gen_adv = 0.0;
  double gen_l1 = 0.0;
  /// gen_adv + lambda_reconst * gen_l1
  double total = 0.0;
};

inline constexpr const char* kMetricsHeader = "step,task,critic_loss,gp,gen_adv,gen_l1,total";
std::string format_metric(const MetricRecord& r);

struct TrainResult {
  Generator generator;
  Critic critic;
  std::vector<MetricRecord> log;
  /// Checkpoint of the final state (also written as final.psyn).
  Checkpoint checkpoint;
};

/// Everything a run needs besides the data; written into checkpoint headers.
struct TrainSpec {
  Task task = Task::p2n;
  NetConfig net;
  TrainConfig train;
  LossWeights weights;
};

std::string checkpoint_header(const TrainSpec& spec, int step, int value_count);
Checkpoint make_checkpoint(const TrainSpec& spec, int step, int value_count, const Generator& g,
                           const Critic& d);

/// Alternates critic_iters_per_gen critic updates with one generator update
/// for total_steps steps. With `out_dir`, metrics.csv is appended every step
/// and checkpoints land in out_dir. Deterministic per train.seed.
TrainResult train(const TrainSpec& spec, std::span<const PolypSample> data,
                  const std::optional<std::filesystem::path>& out_dir = {});

}  // namespace psyn
