#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "psyn/autograd.hpp"
#include "psyn/train.hpp"

namespace psyn {

namespace fs = std::filesystem;

const char* task_name(Task t) { return t == Task::p2n ? "p2n" : "n2p"; }

Task parse_task(const std::string& name) {
  if (name == "p2n") return Task::p2n;
  if (name == "n2p") return Task::n2p;
  throw std::invalid_argument("unknown task '" + name + "' (expected p2n or n2p)");
}

double LossWeights::head_weight(std::size_t head) const {
  return patch_weights.empty() ? 1.0 : patch_weights.at(head);
}

void LossWeights::validate(std::size_t heads) const {
  if (lambda_reconst < 0 || lambda_gp < 0) throw std::invalid_argument("loss weights must be non-negative");
  if (!patch_weights.empty() && patch_weights.size() != heads) {
    throw std::invalid_argument("patch_weights has " + std::to_string(patch_weights.size()) +
                                " entries for " + std::to_string(heads) + " critic heads");
  }
  for (double w : patch_weights)
    if (w < 0) throw std::invalid_argument("patch weights must be non-negative");
}

int TrainConfig::resolved_jitter(int image_size) const {
  return jitter_resize > 0 ? jitter_resize : static_cast<int>(std::lround(1.21875 * image_size));
}

void TrainConfig::validate(int image_size) const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (critic_iters_per_gen < 1) throw std::invalid_argument("critic_iters_per_gen must be at least 1");
  if (total_steps < 0) throw std::invalid_argument("total_steps must be non-negative");
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be non-negative");
  if (lr <= 0 || beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
    throw std::invalid_argument("invalid Adam hyperparameters");
  }
  if (jitter && resolved_jitter(image_size) <= image_size) {
    throw std::invalid_argument("jitter_resize must exceed image_size");
  }
}

ConditionedPair jitter_at(const ConditionedPair& pair, int resize, int ox, int oy) {
  const int w = pair.target.width, h = pair.target.height;
  return {crop(resize_bilinear(pair.condition, resize, resize), ox, oy, w, h),
          crop(resize_bilinear(pair.target, resize, resize), ox, oy, w, h)};
}

ConditionedPair jitter(const ConditionedPair& pair, int resize, Rng& rng) {
  const int ox = static_cast<int>(rng.uniform_int(0, resize - pair.target.width));
  const int oy = static_cast<int>(rng.uniform_int(0, resize - pair.target.height));
  return jitter_at(pair, resize, ox, oy);
}

ScoreFn critic_scores(Critic& d, Mode mode) {
  return [&d, mode](const Tensor& cond, const Tensor& image) { return d.forward(cond, image, mode); };
}

Tensor weighted_score(const std::vector<Tensor>& maps, const LossWeights& w) {
  if (maps.empty()) throw std::invalid_argument("critic produced no score maps");
  w.validate(maps.size());
  Tensor total;
  for (std::size_t h = 0; h < maps.size(); ++h) {
    const double per_sample = static_cast<double>(maps[h].numel()) / static_cast<double>(maps[h].dim(0));
    Tensor term = scale(sum(maps[h]), w.head_weight(h) / per_sample);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

Tensor gradient_penalty(const ScoreFn& d, const Tensor& cond, const Tensor& real, const Tensor& fake,
                        const LossWeights& w, Rng& rng) {
  if (real.shape() != fake.shape()) {
    throw ShapeError("gradient_penalty: real " + shape_str(real.shape()) + " vs fake " + shape_str(fake.shape()));
  }
  const std::int64_t n = real.dim(0);
  std::vector<double> e(static_cast<std::size_t>(n));
  for (double& v : e) v = rng.uniform();
  const Tensor eps = Tensor::from_values({n}, e, real.dtype());
  Tensor mixed = lerp(real.detach(), fake.detach(), eps).detach();
  mixed.set_requires_grad(true);
  const Tensor score = weighted_score(d(cond, mixed), w);
  const Tensor g = backward(score, {mixed}, /*create_graph=*/true)[0];
  const Tensor norms = sqrt(sum_per_sample(square(g)));
  return mean(square(add_scalar(norms, -1.0)));
}

CriticLoss critic_loss(const ScoreFn& d, const Tensor& cond, const Tensor& real, const Tensor& fake,
                       const LossWeights& w, Rng& rng) {
  const double n = static_cast<double>(real.dim(0));
  const Tensor fake_d = fake.detach();
  const Tensor adv = scale(sub(weighted_score(d(cond, fake_d), w), weighted_score(d(cond, real), w)), 1.0 / n);
  const Tensor gp = gradient_penalty(d, cond, real, fake_d, w, rng);
  CriticLoss out;
  out.total = add(adv, scale(gp, w.lambda_gp));
  out.adversarial = adv.item();
  out.gp = gp.item();
  return out;
}

GeneratorLoss generator_loss(const ScoreFn& d, const Tensor& cond, const Tensor& fake, const Tensor& target,
                             const LossWeights& w) {
  const double n = static_cast<double>(fake.dim(0));
  const Tensor adv = scale(weighted_score(d(cond, fake), w), -1.0 / n);
  const Tensor l1 = mean(abs(sub(fake, target)));
  GeneratorLoss out;
  out.total = add(adv, scale(l1, w.lambda_reconst));
  out.adversarial = adv.item();
  out.l1 = l1.item();
  return out;
}

std::string format_metric(const MetricRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%s,%.9g,%.9g,%.9g,%.9g,%.9g", r.step, task_name(r.task), r.critic_loss, r.gp,
                r.gen_adv, r.gen_l1, r.total);
  return buf;
}

std::string checkpoint_header(const TrainSpec& spec, int step, int value_count) {
  std::ostringstream os;
  os << spec.net.to_text();
  os << "task=" << task_name(spec.task) << "\n";
  os << "step=" << step << "\n";
  os << "value_count=" << value_count << "\n";
  os << "seed=" << spec.train.seed << "\n";
  return os.str();
}

Checkpoint make_checkpoint(const TrainSpec& spec, int step, int value_count, const Generator& g,
                           const Critic& d) {
  Checkpoint ck;
  ck.header = checkpoint_header(spec, step, value_count);
  g.save(ck);
  d.save(ck);
  return ck;
}

namespace {

// Streams derived from the run seed; fixed so runs replay bit-for-bit.
enum Stream : std::uint64_t { kGenInit = 1, kCriticInit, kData, kDropout, kPenalty };

class BatchSource {
 public:
  BatchSource(const TrainSpec& spec, std::span<const PolypSample> data, Rng rng)
      : spec_(spec), data_(data), rng_(rng), order_(data.size()) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    cursor_ = order_.size();
    if (spec.task == Task::p2n) {
      for (const auto& s : data) library_.push_back(s.mask);
    } else {
      int max_id = 0;
      for (const auto& s : data) max_id = std::max(max_id, s.polyp_id);
      values_.emplace(assign_values(std::max(2, max_id + 1)));
      for (const auto& s : data) n2p_pairs_.push_back(build_n2p_sample(s, *values_));
    }
  }

  int value_count() const { return values_ ? values_->size() : 0; }

  // Each batch walks a reshuffled permutation of the dataset.
  void next(Tensor& cond, Tensor& target) {
    std::vector<Image> conds, targets;
    const int resize = spec_.train.resolved_jitter(spec_.net.image_size);
    for (int b = 0; b < spec_.train.batch_size; ++b) {
      if (cursor_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_.engine());
        cursor_ = 0;
      }
      const std::size_t i = order_[cursor_++];
      ConditionedPair pair = spec_.task == Task::p2n ? build_p2n_sample(data_[i], rng_, library_) : n2p_pairs_[i];
      if (spec_.train.jitter) pair = jitter(pair, resize, rng_);
      conds.push_back(std::move(pair.condition));
      targets.push_back(std::move(pair.target));
    }
    cond = images_to_tensor(conds, spec_.net.dtype);
    target = images_to_tensor(targets, spec_.net.dtype);
  }

 private:
  const TrainSpec& spec_;
  std::span<const PolypSample> data_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::vector<Mask> library_;
  std::optional<ValueAssignment> values_;
  std::vector<ConditionedPair> n2p_pairs_;
};

void append_metric(const fs::path& file, const MetricRecord& r) {
  const bool fresh = !fs::exists(file) || fs::file_size(file) == 0;
  std::ofstream out(file, std::ios::app);
  if (!out) throw DataError("cannot append to " + file.string());
  if (fresh) out << kMetricsHeader << "\n";
  out << format_metric(r) << "\n";
}

}  // namespace

TrainResult train(const TrainSpec& spec, std::span<const PolypSample> data,
                  const std::optional<fs::path>& out_dir) {
  if (data.empty()) throw DataError("training dataset is empty");
  spec.net.validate();
  spec.train.validate(spec.net.image_size);
  spec.weights.validate(spec.net.critic_patch_levels.size());
  for (const auto& s : data) {
    if (s.image.width != spec.net.image_size || s.image.height != spec.net.image_size) {
      throw DataError(s.source_name + ": extent " + std::to_string(s.image.width) + "x" +
                      std::to_string(s.image.height) + " does not match image_size " +
                      std::to_string(spec.net.image_size));
    }
  }
  if (out_dir) fs::create_directories(*out_dir);

  const Rng root(spec.train.seed);
  Rng gen_init = root.derive(kGenInit), critic_init = root.derive(kCriticInit);
  Rng dropout_rng = root.derive(kDropout), penalty_rng = root.derive(kPenalty);

  TrainResult res;
  res.generator = Generator::build(spec.net, gen_init);
  res.critic = Critic::build(spec.net, critic_init);
  Generator& g = res.generator;
  Critic& d = res.critic;
  BatchSource batches(spec, data, root.derive(kData));
  const ScoreFn scores = critic_scores(d, Mode::train);
  const AdamConfig adam{spec.train.lr, spec.train.beta1, spec.train.beta2};

  auto fail = [&](int step, const std::string& what) {
    std::string msg = "non-finite " + what + " at step " + std::to_string(step);
    if (out_dir) {
      const fs::path snap = *out_dir / "nan_snapshot.psyn";
      write_checkpoint(snap, make_checkpoint(spec, step, batches.value_count(), g, d));
      msg += "; snapshot written to " + snap.string();
    }
    throw NumericError(msg);
  };

  Tensor cond, target;
  for (int step = 0; step < spec.train.total_steps; ++step) {
    MetricRecord rec;
    rec.step = step;
    rec.task = spec.task;

    for (int it = 0; it < spec.train.critic_iters_per_gen; ++it) {
      batches.next(cond, target);
      Tensor fake;
      {
        NoGradGuard no_grad;
        fake = g.forward(cond, Mode::train, dropout_rng);
      }
      const CriticLoss cl = critic_loss(scores, cond, target, fake, spec.weights, penalty_rng);
      if (!std::isfinite(cl.total.item())) fail(step, "critic loss");
      const auto params = d.params().tensors();
      adam_step(d.params(), backward(cl.total, params), adam);
      rec.critic_loss = cl.total.item();
      rec.gp = cl.gp;
    }

    batches.next(cond, target);
    const Tensor fake = g.forward(cond, Mode::train, dropout_rng);
    const GeneratorLoss gl = generator_loss(scores, cond, fake, target, spec.weights);
    if (!std::isfinite(gl.total.item())) fail(step, "generator loss");
    const auto params = g.params().tensors();
    adam_step(g.params(), backward(gl.total, params), adam);
    rec.gen_adv = gl.adversarial;
    rec.gen_l1 = gl.l1;
    rec.total = gl.adversarial + spec.weights.lambda_reconst * gl.l1;

    res.log.push_back(rec);
    if (out_dir) {
      append_metric(*out_dir / "metrics.csv", rec);
      const int done = step + 1;
      if (spec.train.checkpoint_every > 0 && done % spec.train.checkpoint_every == 0 &&
          done != spec.train.total_steps) {
        char name[32];
        std::snprintf(name, sizeof name, "ckpt_%06d.psyn", done);
        write_checkpoint(*out_dir / name, make_checkpoint(spec, done, batches.value_count(), g, d));
      }
    }
  }

  res.checkpoint = make_checkpoint(spec, spec.train.total_steps, batches.value_count(), g, d);
  if (out_dir) write_checkpoint(*out_dir / "final.psyn", res.checkpoint);
  return res;
}

}  // namespace psyn
