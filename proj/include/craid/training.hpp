#ifndef CRAID_TRAINING_HPP_
#define CRAID_TRAINING_HPP_

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "craid/data.hpp"
#include "craid/losses.hpp"
#include "craid/model.hpp"

namespace craid {

struct OptimizerConfig {
  double base_lr = 3.5e-4;
  std::vector<int> decay_epochs = {40, 70};  // lr is divided by 10 after each
  double decay_factor = 0.1;
  int warmup_epochs = 10;  // linear ramp from base_lr/10 to base_lr
  int epochs = 120;
  int batch_size = 32;
  int steps_per_epoch = 0;          // 0 = dataset size / batch size
  std::vector<int> stage_epochs;    // per-stage split; empty = equal split
  double grad_clip = 0.0;           // global-norm clip, 0 = off
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

// Scheduled learning rate for a 0-based epoch index.
double learning_rate(int epoch, const OptimizerConfig& config);

// One progressive stage: introduce the masks of block `introduces_mask`
// (1 = closest to the output) and keep every earlier block's masks fixed.
struct Stage {
  int introduces_mask = 0;
  std::vector<int> frozen_masks;
  int iterations = 0;
};

struct TrainingStagePlan {
  std::vector<Stage> stages;
  int iterations_per_stage = 0;
};

TrainingStagePlan build_stage_plan(int mask_blocks, int iterations_per_stage);

enum class TrainMode { Progressive, EndToEnd };

struct AblationFlags {
  bool no_mask = false;  // masks stay identity scaling
  bool no_val = false;   // every image is sliced at the top level
};

struct StepLosses {
  double cls = 0.0;
  double verif = 0.0;
  double total = 0.0;
  std::size_t pair_count = 0;
};

struct TrainLogRecord {
  long step = 0;
  int epoch = 0;
  int stage = 0;
  double lr = 0.0;
  StepLosses losses;
};

struct StageLogEntry {
  int stage = 0;            // 1-based
  int introduced_mask = 0;  // 0 = none (ablation / end-to-end phase)
  std::vector<int> frozen_masks;
  int start_epoch = 0;
  int end_epoch = 0;  // exclusive
};

struct TrainResult {
  TrainMode mode = TrainMode::Progressive;
  std::uint64_t seed = 0;
  AblationFlags ablation;
  std::vector<StageLogEntry> stage_log;
  double initial_total = 0.0;
  double final_total = 0.0;
  long steps = 0;
};

// Pair of embedding slots (indices into a batch's image list) with a
// same-identity label.
struct PairRef {
  int i = 0;
  int j = 0;
  int label = 0;
};

struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long t = 0;
  void step(const std::vector<Param*>& params, double lr);
};

class Trainer {
 public:
  Trainer(Model& model, PrototypeClassifier& classifier, VerificationHead& verif,
          OptimizerConfig opt, LossWeights weights, std::uint64_t seed);

  // All learnable parameters in a fixed order; updates respect each param's
  // trainable flag.
  const std::vector<Param*>& params() const { return params_; }

  double mask_init_stddev = 0.1;

  // All positive pairs in the batch plus an equal number of sampled
  // negatives. Slot 2b is sample b's query, slot 2b+1 its gallery image.
  std::vector<PairRef> build_pairs(const std::vector<int>& slot_labels, Rng& rng) const;

  // Losses only, no gradients, using caller-fixed pairs. Gradient checks
  // difference this against accumulate_gradients.
  StepLosses compute_losses(const std::vector<TrainSample>& batch,
                            const std::vector<PairRef>& pairs);

  // Forward + backward with caller-fixed pairs; gradients accumulate, no
  // optimizer step.
  StepLosses accumulate_gradients(const std::vector<TrainSample>& batch,
                                  const std::vector<PairRef>& pairs);

  // One optimization step: sample pairs, compute gradients, apply the update
  // to trainable parameters, verify mask health.
  StepLosses train_step(const std::vector<TrainSample>& batch);

  void set_learning_rate(double lr) { lr_ = lr; }
  double current_learning_rate() const { return lr_; }

  // Runs the full schedule. Progressive mode walks the stage plan, freezing
  // each block's masks when the next stage begins; end-to-end activates all
  // masks up front. Ablations collapse the plan to a single phase.
  TrainResult train(const MlrTrainingSet& data, TrainMode mode, AblationFlags ablation,
                    std::ostream* step_log = nullptr);

  void zero_all_grads();

 private:
  void apply_losses_backward(const std::vector<TrainSample>& batch,
                             const std::vector<PairRef>& pairs, bool with_gradients,
                             StepLosses& out);

  Model& model_;
  PrototypeClassifier& classifier_;
  VerificationHead& verif_;
  OptimizerConfig opt_;
  LossWeights weights_;
  Adam adam_;
  std::uint64_t seed_;
  Rng sample_rng_, pair_rng_, mask_rng_;
  double lr_ = 0.0;
  std::vector<Param*> params_;
};

std::string format_step_record(const TrainLogRecord& rec);

}  // namespace craid

#endif  // CRAID_TRAINING_HPP_
