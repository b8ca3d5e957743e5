#include "craid/runconfig.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace craid {

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "seed",          "scale",           "input_h",
      "input_w",       "block_channels",  "last_stride",
      "layout_dims",   "rates",           "lambda",
      "mode",          "ablate_no_mask",  "ablate_no_val",
      "epochs",        "batch_size",      "steps_per_epoch",
      "stage_epochs",
      "base_lr",       "lr_decay_epochs", "lr_decay_factor",
      "warmup_epochs", "grad_clip",       "pad_pixels",
      "hflip_prob",    "mask_init_stddev", "trials",
      "eval_ranks",    "normalize_embeddings"};
  return keys;
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
  std::vector<std::string> unknown;
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known_keys().count(it.key())) unknown.push_back(it.key());
  if (!unknown.empty()) {
    std::string msg = "config: unknown keys:";
    for (const auto& k : unknown) msg += " '" + k + "'";
    throw ConfigError(msg);
  }

  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.scale = j.value("scale", c.scale);
    c.input_h = j.value("input_h", c.input_h);
    c.input_w = j.value("input_w", c.input_w);
    c.block_channels = j.value("block_channels", c.block_channels);
    c.last_stride = j.value("last_stride", c.last_stride);
    c.layout_dims = j.value("layout_dims", c.layout_dims);
    c.rates = j.value("rates", c.rates);
    c.lambda = j.value("lambda", c.lambda);
    c.mode = j.value("mode", c.mode);
    c.ablate_no_mask = j.value("ablate_no_mask", c.ablate_no_mask);
    c.ablate_no_val = j.value("ablate_no_val", c.ablate_no_val);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
    c.stage_epochs = j.value("stage_epochs", c.stage_epochs);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.lr_decay_epochs = j.value("lr_decay_epochs", c.lr_decay_epochs);
    c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.pad_pixels = j.value("pad_pixels", c.pad_pixels);
    c.hflip_prob = j.value("hflip_prob", c.hflip_prob);
    c.mask_init_stddev = j.value("mask_init_stddev", c.mask_init_stddev);
    c.trials = j.value("trials", c.trials);
    c.eval_ranks = j.value("eval_ranks", c.eval_ranks);
    c.normalize_embeddings = j.value("normalize_embeddings", c.normalize_embeddings);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: type error: ") + e.what());
  }
  return c;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["scale"] = scale;
  j["input_h"] = input_h;
  j["input_w"] = input_w;
  j["block_channels"] = block_channels;
  j["last_stride"] = last_stride;
  j["layout_dims"] = layout_dims;
  j["rates"] = rates;
  j["lambda"] = lambda;
  j["mode"] = mode;
  j["ablate_no_mask"] = ablate_no_mask;
  j["ablate_no_val"] = ablate_no_val;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["steps_per_epoch"] = steps_per_epoch;
  j["stage_epochs"] = stage_epochs;
  j["base_lr"] = base_lr;
  j["lr_decay_epochs"] = lr_decay_epochs;
  j["lr_decay_factor"] = lr_decay_factor;
  j["warmup_epochs"] = warmup_epochs;
  j["grad_clip"] = grad_clip;
  j["pad_pixels"] = pad_pixels;
  j["hflip_prob"] = hflip_prob;
  j["mask_init_stddev"] = mask_init_stddev;
  j["trials"] = trials;
  j["eval_ranks"] = eval_ranks;
  j["normalize_embeddings"] = normalize_embeddings;
  return j;
}

void RunConfig::validate() const {
  std::vector<std::string> problems;
  auto bad = [&](const std::string& p) { problems.push_back(p); };

  if (scale != "desk" && scale != "full") bad("scale must be 'desk' or 'full'");
  if (mode != "progressive" && mode != "end_to_end")
    bad("mode must be 'progressive' or 'end_to_end'");
  if (input_h < 8 || input_w < 8) bad("input size must be at least 8x8");
  if (scale == "full" && (input_h != 256 || input_w != 128))
    bad("full scale expects 256x128 input");
  if (block_channels.empty()) bad("block_channels must not be empty");
  for (int c : block_channels)
    if (c < 1) bad("block_channels entries must be positive");
  if (last_stride != 1 && last_stride != 2) bad("last_stride must be 1 or 2");
  if (layout_dims.empty()) bad("layout_dims must not be empty");
  for (int d : layout_dims)
    if (d < 1) bad("layout_dims entries must be positive");
  std::set<int> rate_set(rates.begin(), rates.end());
  if (rate_set.size() != rates.size()) bad("rates must be unique");
  for (int r : rates)
    if (r < 2) bad("rates entries must be >= 2");
  if (layout_dims.size() != rates.size() + 1)
    bad("layout_dims must have one entry per resolution level (rates plus the native level)");
  if (lambda < 0.0) bad("lambda must be >= 0");
  if (epochs < 1) bad("epochs must be >= 1");
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (steps_per_epoch < 0) bad("steps_per_epoch must be >= 0 (0 = automatic)");
  if (!stage_epochs.empty()) {
    int total = 0;
    for (int e : stage_epochs) {
      if (e < 1) bad("stage_epochs entries must be >= 1");
      total += e;
    }
    if (total != epochs) bad("stage_epochs must sum to epochs");
    if (stage_epochs.size() != block_channels.size())
      bad("stage_epochs must list one entry per masked block");
  }
  if (base_lr <= 0.0) bad("base_lr must be > 0");
  for (std::size_t i = 1; i < lr_decay_epochs.size(); ++i)
    if (lr_decay_epochs[i] <= lr_decay_epochs[i - 1])
      bad("lr_decay_epochs must be strictly ascending");
  if (lr_decay_factor <= 0.0 || lr_decay_factor > 1.0) bad("lr_decay_factor must lie in (0,1]");
  if (warmup_epochs < 0) bad("warmup_epochs must be >= 0");
  if (grad_clip < 0.0) bad("grad_clip must be >= 0");
  if (pad_pixels < -1) bad("pad_pixels must be >= 0, or -1 for the scale default");
  if (hflip_prob < 0.0 || hflip_prob > 1.0) bad("hflip_prob must lie in [0,1]");
  if (mask_init_stddev <= 0.0) bad("mask_init_stddev must be > 0");
  if (trials < 1) bad("trials must be >= 1");
  if (eval_ranks.empty()) bad("eval_ranks must not be empty");
  for (int r : eval_ranks)
    if (r < 1) bad("eval_ranks entries must be >= 1");

  if (!problems.empty()) {
    std::string msg = "invalid configuration (" + std::to_string(problems.size()) + " problems):";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
  }
}

int RunConfig::effective_pad_pixels() const {
  if (pad_pixels >= 0) return pad_pixels;
  return scale == "full" ? 10 : 2;
}

BackboneConfig RunConfig::make_backbone() const {
  if (scale == "full") return BackboneConfig::full(last_stride);
  return BackboneConfig::desk(input_h, input_w, block_channels);
}

EmbeddingLayout RunConfig::make_layout() const {
  EmbeddingLayout layout;
  layout.dims = layout_dims;
  layout.validate();
  return layout;
}

OptimizerConfig RunConfig::make_optimizer() const {
  OptimizerConfig opt;
  opt.base_lr = base_lr;
  opt.decay_epochs = lr_decay_epochs;
  opt.decay_factor = lr_decay_factor;
  opt.warmup_epochs = warmup_epochs;
  opt.epochs = epochs;
  opt.batch_size = batch_size;
  opt.steps_per_epoch = steps_per_epoch;
  opt.stage_epochs = stage_epochs;
  opt.grad_clip = grad_clip;
  opt.validate();
  return opt;
}

AugmentationConfig RunConfig::make_augmentation() const {
  AugmentationConfig aug;
  aug.target_h = scale == "full" ? 256 : input_h;
  aug.target_w = scale == "full" ? 128 : input_w;
  aug.pad_pixels = effective_pad_pixels();
  aug.hflip_prob = hflip_prob;
  aug.validate();
  return aug;
}

TrainMode RunConfig::make_mode() const {
  return mode == "end_to_end" ? TrainMode::EndToEnd : TrainMode::Progressive;
}

AblationFlags RunConfig::make_ablation() const {
  AblationFlags f;
  f.no_mask = ablate_no_mask;
  f.no_val = ablate_no_val;
  return f;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: JSON parse error in " + path + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

}  // namespace craid
