#include "craid/training.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

namespace craid {

void OptimizerConfig::validate() const {
  if (base_lr < 0.0) throw ConfigError("optimizer: base_lr must be >= 0");
  if (epochs < 1) throw ConfigError("optimizer: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("optimizer: batch_size must be >= 1");
  if (warmup_epochs < 0) throw ConfigError("optimizer: warmup_epochs must be >= 0");
  if (steps_per_epoch < 0) throw ConfigError("optimizer: steps_per_epoch must be >= 0");
  if (!stage_epochs.empty()) {
    int total = 0;
    for (int e : stage_epochs) {
      if (e < 1) throw ConfigError("optimizer: stage_epochs entries must be >= 1");
      total += e;
    }
    if (total != epochs)
      throw ConfigError("optimizer: stage_epochs must sum to the total epoch count");
  }
  if (decay_factor <= 0.0 || decay_factor > 1.0)
    throw ConfigError("optimizer: decay_factor must lie in (0,1]");
  for (std::size_t i = 1; i < decay_epochs.size(); ++i)
    if (decay_epochs[i] <= decay_epochs[i - 1])
      throw ConfigError("optimizer: decay_epochs must be strictly ascending");
  if (grad_clip < 0.0) throw ConfigError("optimizer: grad_clip must be >= 0");
}

double learning_rate(int epoch, const OptimizerConfig& config) {
  if (epoch < 0 || epoch >= config.epochs) throw DomainError("learning_rate: epoch out of range");
  double lr = config.base_lr;
  for (int boundary : config.decay_epochs)
    if (epoch > boundary) lr *= config.decay_factor;
  if (config.warmup_epochs > 0 && epoch < config.warmup_epochs) {
    double frac = static_cast<double>(epoch) / config.warmup_epochs;
    lr *= 0.1 + 0.9 * frac;
  }
  return lr;
}

TrainingStagePlan build_stage_plan(int mask_blocks, int iterations_per_stage) {
  if (mask_blocks < 1) throw DomainError("build_stage_plan: need at least one block");
  if (iterations_per_stage < 1) throw DomainError("build_stage_plan: need at least one iteration");
  TrainingStagePlan plan;
  plan.iterations_per_stage = iterations_per_stage;
  for (int l = 1; l <= mask_blocks; ++l) {
    Stage s;
    s.introduces_mask = l;
    for (int prev = 1; prev < l; ++prev) s.frozen_masks.push_back(prev);
    s.iterations = iterations_per_stage;
    plan.stages.push_back(std::move(s));
  }
  return plan;
}

void Adam::step(const std::vector<Param*>& params, double lr) {
  ++t;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (Param* p : params) {
    if (!p->trainable) continue;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      double g = p->grad[i];
      p->m1[i] = beta1 * p->m1[i] + (1.0 - beta1) * g;
      p->m2[i] = beta2 * p->m2[i] + (1.0 - beta2) * g * g;
      double mhat = p->m1[i] / bc1;
      double vhat = p->m2[i] / bc2;
      p->value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

Trainer::Trainer(Model& model, PrototypeClassifier& classifier, VerificationHead& verif,
                 OptimizerConfig opt, LossWeights weights, std::uint64_t seed)
    : model_(model),
      classifier_(classifier),
      verif_(verif),
      opt_(std::move(opt)),
      weights_(weights),
      seed_(seed),
      sample_rng_(derive_seed(seed, 0x5a3f)),
      pair_rng_(derive_seed(seed, 0x77aa)),
      mask_rng_(derive_seed(seed, 0x9c1d)) {
  opt_.validate();
  adam_.beta1 = opt_.adam_beta1;
  adam_.beta2 = opt_.adam_beta2;
  adam_.eps = opt_.adam_eps;
  model_.collect_params(params_);
  classifier_.collect(params_);
  verif_.collect(params_);
}

void Trainer::zero_all_grads() {
  for (Param* p : params_) p->zero_grad();
}

std::vector<PairRef> Trainer::build_pairs(const std::vector<int>& slot_labels, Rng& rng) const {
  std::vector<PairRef> pairs;
  int n = static_cast<int>(slot_labels.size());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (slot_labels[i] == slot_labels[j]) pairs.push_back(PairRef{i, j, 1});
  if (pairs.empty()) return pairs;

  std::size_t wanted = pairs.size();
  std::uniform_int_distribution<int> pick(0, n - 1);
  std::size_t added = 0;
  // Rejection sampling; batches are small so collisions are cheap.
  for (int attempts = 0; added < wanted && attempts < 1000 * static_cast<int>(wanted);
       ++attempts) {
    int i = pick(rng), j = pick(rng);
    if (i == j || slot_labels[i] == slot_labels[j]) continue;
    pairs.push_back(PairRef{std::min(i, j), std::max(i, j), 0});
    ++added;
  }
  return pairs;
}

void Trainer::apply_losses_backward(const std::vector<TrainSample>& batch,
                                    const std::vector<PairRef>& pairs, bool with_gradients,
                                    StepLosses& out) {
  if (batch.empty()) throw DomainError("train_step: empty batch");
  const int d = model_.layout.total_dim();
  const int n = static_cast<int>(batch.size()) * 2;
  const int top = model_.levels();

  std::vector<Model::Trace> traces(n);
  std::vector<std::vector<double>> padded(n);
  std::vector<int> occupied(n);
  std::vector<int> slot_labels(n);

  ResolutionLevel top_level{top, model_.known_ratios[top - 1]};
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const TrainSample& s = batch[b];
    model_.forward(s.query_image, s.query_level, traces[2 * b]);
    model_.forward(s.gallery_image, top_level, traces[2 * b + 1]);
    slot_labels[2 * b] = s.query_label;
    slot_labels[2 * b + 1] = s.gallery_label;
  }
  for (int i = 0; i < n; ++i) {
    occupied[i] = model_.layout.prefix_dim(traces[i].head_level);
    padded[i].assign(d, 0.0);
    std::copy(traces[i].v.begin(), traces[i].v.begin() + occupied[i], padded[i].begin());
  }

  std::vector<std::vector<double>> grad_pad(n, std::vector<double>(d, 0.0));

  double cls_scale = with_gradients ? 1.0 / n : 0.0;
  double cls_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    if (with_gradients) {
      cls_sum += id_loss_backward(padded[i], slot_labels[i], classifier_, occupied[i],
                                  grad_pad[i], cls_scale);
    } else {
      cls_sum += id_loss(id_logits(padded[i], classifier_), slot_labels[i]);
    }
  }
  out.cls = cls_sum / n;

  out.pair_count = pairs.size();
  if (!pairs.empty()) {
    double verif_scale = with_gradients ? weights_.lambda / pairs.size() : 0.0;
    double verif_sum = 0.0;
    for (const PairRef& pr : pairs) {
      if (with_gradients) {
        verif_sum += verification_pair_backward(padded[pr.i], padded[pr.j], pr.label, verif_,
                                                grad_pad[pr.i], grad_pad[pr.j], verif_scale);
      } else {
        std::vector<VerificationPair> one{{padded[pr.i], padded[pr.j], pr.label}};
        verif_sum += verification_loss(one, verif_).sum;
      }
    }
    out.verif = verif_sum / pairs.size();
  } else {
    out.verif = 0.0;
  }
  out.total = total_loss(out.cls, out.verif, weights_);

  if (with_gradients) {
    std::vector<double> grad_v(d);
    for (int i = 0; i < n; ++i) {
      // Pad boundary: only the occupied prefix belongs to the sample.
      std::fill(grad_v.begin(), grad_v.end(), 0.0);
      std::copy(grad_pad[i].begin(), grad_pad[i].begin() + occupied[i], grad_v.begin());
      model_.backward(traces[i], grad_v);
    }
  }
}

StepLosses Trainer::compute_losses(const std::vector<TrainSample>& batch,
                                   const std::vector<PairRef>& pairs) {
  StepLosses out;
  apply_losses_backward(batch, pairs, false, out);
  return out;
}

StepLosses Trainer::accumulate_gradients(const std::vector<TrainSample>& batch,
                                         const std::vector<PairRef>& pairs) {
  StepLosses out;
  apply_losses_backward(batch, pairs, true, out);
  return out;
}

StepLosses Trainer::train_step(const std::vector<TrainSample>& batch) {
  if (batch.empty()) throw DomainError("train_step: empty batch");
  std::vector<int> slot_labels;
  for (const auto& s : batch) {
    slot_labels.push_back(s.query_label);
    slot_labels.push_back(s.gallery_label);
  }
  std::vector<PairRef> pairs = build_pairs(slot_labels, pair_rng_);

  zero_all_grads();
  StepLosses losses = accumulate_gradients(batch, pairs);
  if (!std::isfinite(losses.total))
    throw NumericError("train_step: non-finite loss (cls=" + std::to_string(losses.cls) +
                       " verif=" + std::to_string(losses.verif) + ")");

  if (opt_.grad_clip > 0.0) {
    double sq = 0.0;
    for (Param* p : params_) {
      if (!p->trainable) continue;
      for (double g : p->grad) sq += g * g;
    }
    double norm = std::sqrt(sq);
    if (norm > opt_.grad_clip) {
      double scale = opt_.grad_clip / norm;
      for (Param* p : params_) {
        if (!p->trainable) continue;
        for (double& g : p->grad) g *= scale;
      }
    }
  }

  adam_.step(params_, lr_);

  // Mask health: finite parameters keep sigmoid activations inside (0,1).
  for (const auto& per_block : model_.masks.params)
    for (const auto& m : per_block)
      if (!all_finite(m.value))
        throw NumericError("train_step: mask parameters became non-finite (" + m.name + ")");
  return losses;
}

namespace {

// Maps the stage plan onto epoch ranges: the configured per-stage split, or
// an equal split of the epoch budget with the remainder spread over the
// earliest stages. Ablations without masks and the end-to-end mode collapse
// to a single phase.
std::vector<StageLogEntry> phase_layout(const Model& model, TrainMode mode, AblationFlags ablation,
                                        const OptimizerConfig& opt, int steps_per_epoch) {
  std::vector<StageLogEntry> phases;
  int L = model.masks.block_count;
  int epochs = opt.epochs;
  if (ablation.no_mask || mode == TrainMode::EndToEnd || L == 1) {
    StageLogEntry e;
    e.stage = 1;
    e.introduced_mask = ablation.no_mask ? 0 : -1;  // -1 = all at once
    e.start_epoch = 0;
    e.end_epoch = epochs;
    phases.push_back(std::move(e));
    return phases;
  }
  if (!opt.stage_epochs.empty() && static_cast<int>(opt.stage_epochs.size()) != L)
    throw ConfigError("train: stage_epochs must list one entry per masked block");
  TrainingStagePlan plan =
      build_stage_plan(L, std::max(1, epochs / L) * steps_per_epoch);
  int base = epochs / L;
  int extra = epochs % L;
  int epoch = 0;
  for (int l = 1; l <= L; ++l) {
    StageLogEntry e;
    e.stage = l;
    e.introduced_mask = plan.stages[l - 1].introduces_mask;
    e.frozen_masks = plan.stages[l - 1].frozen_masks;
    e.start_epoch = epoch;
    epoch += opt.stage_epochs.empty() ? base + (l <= extra ? 1 : 0) : opt.stage_epochs[l - 1];
    e.end_epoch = epoch;
    phases.push_back(std::move(e));
  }
  return phases;
}

}  // namespace

TrainResult Trainer::train(const MlrTrainingSet& data, TrainMode mode, AblationFlags ablation,
                           std::ostream* step_log) {
  if (data.size() == 0) throw DomainError("train: empty dataset");
  if (data.levels() != model_.levels())
    throw ConfigError("train: dataset level count does not match the model");
  if (data.identity_count() != classifier_.C)
    throw ConfigError("train: identity count does not match the classifier");

  model_.use_varying_length = !ablation.no_val;

  TrainResult result;
  result.mode = mode;
  result.seed = seed_;
  result.ablation = ablation;

  int steps_per_epoch =
      opt_.steps_per_epoch > 0
          ? opt_.steps_per_epoch
          : std::max<int>(1, static_cast<int>(data.size()) / opt_.batch_size);
  std::vector<StageLogEntry> phases = phase_layout(model_, mode, ablation, opt_, steps_per_epoch);

  long step = 0;
  bool first = true;
  for (const StageLogEntry& phase : phases) {
    // Freeze everything trained in earlier phases, then introduce this
    // phase's masks.
    for (int prev : phase.frozen_masks) model_.masks.freeze_block(prev);
    if (phase.introduced_mask == -1) {
      for (int l = 1; l <= model_.masks.block_count; ++l)
        model_.masks.activate_block(l, mask_init_stddev, mask_rng_);
    } else if (phase.introduced_mask > 0) {
      model_.masks.activate_block(phase.introduced_mask, mask_init_stddev, mask_rng_);
    }
    result.stage_log.push_back(phase);

    for (int epoch = phase.start_epoch; epoch < phase.end_epoch; ++epoch) {
      lr_ = learning_rate(epoch, opt_);
      for (int s = 0; s < steps_per_epoch; ++s) {
        std::vector<TrainSample> batch = data.sample_batch(opt_.batch_size, sample_rng_);
        StepLosses losses = train_step(batch);
        ++step;
        if (first) {
          result.initial_total = losses.total;
          first = false;
        }
        result.final_total = losses.total;
        if (step_log) {
          TrainLogRecord rec{step, epoch, phase.stage, lr_, losses};
          (*step_log) << format_step_record(rec) << "\n";
        }
      }
    }
  }
  result.steps = step;
  return result;
}

std::string format_step_record(const TrainLogRecord& rec) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "step=%ld epoch=%d stage=%d lr=%.9g cls=%.9g verif=%.9g total=%.9g pairs=%zu",
                rec.step, rec.epoch, rec.stage, rec.lr, rec.losses.cls, rec.losses.verif,
                rec.losses.total, rec.losses.pair_count);
  return std::string(buf);
}

}  // namespace craid
