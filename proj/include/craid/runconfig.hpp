#ifndef CRAID_RUNCONFIG_HPP_
#define CRAID_RUNCONFIG_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "craid/data.hpp"
#include "craid/model.hpp"
#include "craid/training.hpp"

namespace craid {

// Merged view of every tunable: backbone, layout, optimizer, augmentation,
// schedule and ablations. Precedence is CLI flag > config file > default;
// unknown config keys are rejected and validation reports every problem in
// one pass.
struct RunConfig {
  std::uint64_t seed = 7;
  std::string scale = "desk";
  int input_h = 32;
  int input_w = 16;
  std::vector<int> block_channels = {8, 16};
  int last_stride = 1;
  std::vector<int> layout_dims = {8, 8, 8, 8};
  std::vector<int> rates = {2, 3, 4};
  double lambda = 0.5;
  std::string mode = "progressive";
  bool ablate_no_mask = false;
  bool ablate_no_val = false;
  int epochs = 120;
  int batch_size = 32;
  int steps_per_epoch = 0;          // 0 = dataset size / batch size
  std::vector<int> stage_epochs;    // per-stage epochs; empty = equal split
  double base_lr = 3.5e-4;
  std::vector<int> lr_decay_epochs = {40, 70};
  double lr_decay_factor = 0.1;
  int warmup_epochs = 10;
  double grad_clip = 0.0;
  int pad_pixels = -1;  // -1 = 10 at full scale, 2 at desk scale
  double hflip_prob = 0.5;
  double mask_init_stddev = 0.1;
  int trials = 10;
  std::vector<int> eval_ranks = {1, 5, 10};
  bool normalize_embeddings = false;

  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  // Throws ConfigError listing every violation, not just the first.
  void validate() const;

  int effective_pad_pixels() const;
  BackboneConfig make_backbone() const;
  EmbeddingLayout make_layout() const;
  OptimizerConfig make_optimizer() const;
  AugmentationConfig make_augmentation() const;
  TrainMode make_mode() const;
  AblationFlags make_ablation() const;
};

RunConfig load_run_config(const std::string& path);

}  // namespace craid

#endif  // CRAID_RUNCONFIG_HPP_
