#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "craid/checkpoint.hpp"
#include "craid/data.hpp"
#include "craid/retrieval.hpp"
#include "craid/runconfig.hpp"
#include "craid/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string config_key_help() {
  craid::RunConfig d;
  std::ostringstream out;
  out << "Config file keys (JSON object; flag > file > default):\n";
  auto line = [&](const std::string& key, const std::string& def, const std::string& desc) {
    out << "  " << key << " (default " << def << "): " << desc << "\n";
  };
  json dj = d.to_json();
  line("seed", dj["seed"].dump(), "master seed for every random stream");
  line("scale", dj["scale"].dump(), "'desk' = small residual net, 'full' = 50-layer net");
  line("input_h", dj["input_h"].dump(), "canonical image height");
  line("input_w", dj["input_w"].dump(), "canonical image width");
  line("block_channels", dj["block_channels"].dump(),
       "channels of each masked residual block (desk scale)");
  line("last_stride", dj["last_stride"].dump(),
       "stride of the final residual stage (1 keeps a 16x8 map at full scale)");
  line("layout_dims", dj["layout_dims"].dump(),
       "sub-vector widths d_1..d_m, one per resolution level");
  line("rates", dj["rates"].dump(), "integer down-sampling rates used for LR synthesis");
  line("lambda", dj["lambda"].dump(), "weight of the verification loss in the total loss");
  line("mode", dj["mode"].dump(), "'progressive' stage-wise mask training or 'end_to_end'");
  line("ablate_no_mask", dj["ablate_no_mask"].dump(), "disable masks (identity scaling)");
  line("ablate_no_val", dj["ablate_no_val"].dump(),
       "disable varying-length slicing (every image at the top level)");
  line("epochs", dj["epochs"].dump(), "total training epochs, split evenly across stages");
  line("batch_size", dj["batch_size"].dump(), "training triplets per step");
  line("steps_per_epoch", dj["steps_per_epoch"].dump(),
       "override steps per epoch (0 = dataset size / batch size)");
  line("stage_epochs", dj["stage_epochs"].dump(),
       "per-stage epoch split for progressive training (empty = equal split)");
  line("base_lr", dj["base_lr"].dump(), "base learning rate");
  line("lr_decay_epochs", dj["lr_decay_epochs"].dump(),
       "epochs after which the rate is multiplied by lr_decay_factor");
  line("lr_decay_factor", dj["lr_decay_factor"].dump(), "decay multiplier");
  line("warmup_epochs", dj["warmup_epochs"].dump(),
       "linear ramp from base_lr/10 to base_lr over these first epochs");
  line("grad_clip", dj["grad_clip"].dump(), "global-norm gradient clip (0 = off)");
  line("pad_pixels", dj["pad_pixels"].dump(),
       "zero padding before the random crop (-1 = 10 full / 2 desk)");
  line("hflip_prob", dj["hflip_prob"].dump(), "horizontal flip probability");
  line("mask_init_stddev", dj["mask_init_stddev"].dump(),
       "stddev of the Gaussian mask initialization");
  line("trials", dj["trials"].dump(), "evaluation trials (query/gallery resamples)");
  line("eval_ranks", dj["eval_ranks"].dump(), "ranks reported from the match curve");
  line("normalize_embeddings", dj["normalize_embeddings"].dump(),
       "L2-normalize embeddings before distances (off by default)");
  return out.str();
}

struct ConfigCli {
  std::string config_path;
  craid::RunConfig cfg;

  // Flag storage; applied only when the user passed the flag.
  std::uint64_t seed = 0;
  std::string mode, ablate, scale;
  int epochs = 0, batch_size = 0, trials = 0, steps_per_epoch = 0;
  double lr = 0.0, lambda = 0.0;
  std::vector<int> blocks, dims, rates, ranks;

  CLI::Option *o_seed = nullptr, *o_mode = nullptr, *o_ablate = nullptr, *o_scale = nullptr,
              *o_epochs = nullptr, *o_batch = nullptr, *o_trials = nullptr, *o_steps = nullptr,
              *o_lr = nullptr, *o_lambda = nullptr, *o_blocks = nullptr, *o_dims = nullptr,
              *o_rates = nullptr, *o_ranks = nullptr;

  void attach(CLI::App* app, bool training_flags, bool eval_flags) {
    app->add_option("--config", config_path, "JSON config file");
    o_seed = app->add_option("--seed", seed, "master seed");
    if (training_flags) {
      o_mode = app->add_option("--mode", mode, "progressive|end-to-end");
      o_ablate = app->add_option("--ablate", ablate, "no-mask|no-val (repeatable)")
                     ->take_all();
      o_scale = app->add_option("--scale", scale, "desk|full");
      o_epochs = app->add_option("--epochs", epochs, "training epochs");
      o_batch = app->add_option("--batch-size", batch_size, "batch size");
      o_steps = app->add_option("--steps-per-epoch", steps_per_epoch, "steps per epoch override");
      o_lr = app->add_option("--lr", lr, "base learning rate");
      o_lambda = app->add_option("--lambda", lambda, "verification loss weight");
      o_blocks = app->add_option("--blocks", blocks, "block channel list")->delimiter(',');
      o_dims = app->add_option("--dims", dims, "sub-vector widths")->delimiter(',');
    }
    o_rates = app->add_option("--rates", rates, "down-sampling rates")->delimiter(',');
    if (eval_flags) {
      o_trials = app->add_option("--trials", trials, "evaluation trials");
      o_ranks = app->add_option("--ranks", ranks, "reported ranks")->delimiter(',');
    }
  }

  craid::RunConfig resolve() {
    craid::RunConfig c;
    if (!config_path.empty()) c = craid::load_run_config(config_path);
    if (o_seed && o_seed->count()) c.seed = seed;
    if (o_scale && o_scale->count()) c.scale = scale;
    if (o_mode && o_mode->count()) {
      std::string m = mode;
      std::replace(m.begin(), m.end(), '-', '_');
      c.mode = m;
    }
    if (o_ablate && o_ablate->count()) {
      for (const auto& a : o_ablate->results()) {
        if (a == "no-mask")
          c.ablate_no_mask = true;
        else if (a == "no-val")
          c.ablate_no_val = true;
        else
          throw craid::ConfigError("--ablate expects 'no-mask' or 'no-val', got '" + a + "'");
      }
    }
    if (o_epochs && o_epochs->count()) c.epochs = epochs;
    if (o_batch && o_batch->count()) c.batch_size = batch_size;
    if (o_steps && o_steps->count()) c.steps_per_epoch = steps_per_epoch;
    if (o_lr && o_lr->count()) c.base_lr = lr;
    if (o_lambda && o_lambda->count()) c.lambda = lambda;
    if (o_blocks && o_blocks->count()) c.block_channels = blocks;
    if (o_dims && o_dims->count()) c.layout_dims = dims;
    if (o_rates && o_rates->count()) {
      c.rates = rates;
      c.layout_dims.assign(rates.size() + 1,
                           c.layout_dims.empty() ? 8 : c.layout_dims.front());
      if (o_dims && o_dims->count()) c.layout_dims = dims;
    }
    if (o_trials && o_trials->count()) c.trials = trials;
    if (o_ranks && o_ranks->count()) c.eval_ranks = ranks;
    c.validate();
    cfg = c;
    return c;
  }
};

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw craid::DataError("cannot write " + path.string());
  f << text;
}

void write_manifest(const fs::path& run_dir, const json& manifest) {
  write_text_file(run_dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<craid::IdentityImageRecord> load_hr_records(const std::string& dir) {
  auto records = craid::load_dataset(dir);
  std::vector<craid::IdentityImageRecord> hr;
  for (auto& r : records)
    if (r.down_rate == 1) hr.push_back(std::move(r));
  if (hr.empty()) throw craid::DataError("no native-resolution images under " + dir);
  return hr;
}

json dataset_summary(const std::vector<craid::IdentityImageRecord>& records) {
  std::map<int, int> per_identity;
  std::map<int, int> per_rate;
  for (const auto& r : records) {
    per_identity[r.identity_id]++;
    per_rate[r.down_rate]++;
  }
  json j;
  j["images"] = records.size();
  j["identities"] = per_identity.size();
  json rates = json::object();
  for (const auto& [rate, count] : per_rate) rates["r" + std::to_string(rate)] = count;
  j["images_per_rate"] = rates;
  return j;
}

// ---------------------------------------------------------------------------

int cmd_synthesize(bool fixture, int identities, int per_camera, int cameras, int height,
                   int width, std::uint64_t seed, const std::string& in_dir,
                   std::vector<int> rates, const std::string& out_dir) {
  fs::create_directories(out_dir);
  json manifest;
  manifest["command"] = "synthesize";
  manifest["seed"] = seed;

  std::vector<craid::IdentityImageRecord> records;
  if (fixture) {
    craid::FixtureConfig cfg;
    cfg.identities = identities;
    cfg.images_per_camera = per_camera;
    cfg.cameras = cameras;
    cfg.height = height;
    cfg.width = width;
    cfg.seed = seed;
    records = craid::make_fixture(cfg);
    manifest["fixture"] = {{"identities", identities},
                           {"cameras", cameras},
                           {"images_per_camera", per_camera},
                           {"height", height},
                           {"width", width}};
  } else {
    if (in_dir.empty())
      throw craid::ConfigError("synthesize: pass --fixture or --in <dir>");
    std::sort(rates.begin(), rates.end());
    auto hr = load_hr_records(in_dir);
    for (const auto& r : hr) {
      records.push_back(r);
      for (int rate : rates) {
        craid::IdentityImageRecord lr = r;
        lr.pixels = craid::synthesize_lr(r.pixels, rate);
        lr.down_rate = rate;
        lr.is_synthetic_lr = true;
        records.push_back(std::move(lr));
      }
    }
    manifest["source"] = in_dir;
    manifest["rates"] = rates;
  }
  craid::write_dataset(out_dir, records);
  manifest["dataset"] = dataset_summary(records);
  manifest["output"] = out_dir;
  write_manifest(out_dir, manifest);
  std::cout << manifest["dataset"].dump(2) << "\n";
  return 0;
}

int cmd_train(ConfigCli& cc, const std::string& data_dir, const std::string& out_dir) {
  craid::RunConfig cfg = cc.resolve();
  fs::create_directories(out_dir);

  auto hr = load_hr_records(data_dir);
  craid::MlrTrainingSet data =
      craid::make_mlr_training_set(hr, cfg.rates, cfg.make_augmentation());
  for (int id : data.excluded_identities)
    std::cerr << "warning: identity " << id << " has fewer than two images; excluded\n";

  craid::Rng init_rng(craid::derive_seed(cfg.seed, 0x11));
  craid::Model model =
      craid::Model::build(cfg.make_backbone(), cfg.make_layout(), data.known_ratios, init_rng);
  craid::PrototypeClassifier classifier =
      craid::PrototypeClassifier::build(model.layout, data.identity_count(), init_rng);
  craid::VerificationHead verif =
      craid::VerificationHead::build(model.layout.total_dim(), init_rng);

  craid::Trainer trainer(model, classifier, verif, cfg.make_optimizer(),
                         craid::LossWeights{cfg.lambda}, cfg.seed);
  trainer.mask_init_stddev = cfg.mask_init_stddev;

  std::ofstream step_log(fs::path(out_dir) / "steps.log");
  if (!step_log) throw craid::DataError("cannot write step log under " + out_dir);
  craid::TrainResult result =
      trainer.train(data, cfg.make_mode(), cfg.make_ablation(), &step_log);

  json stages = json::array();
  for (const auto& s : result.stage_log) {
    stages.push_back({{"stage", s.stage},
                      {"introduced_mask", s.introduced_mask},
                      {"frozen_masks", s.frozen_masks},
                      {"start_epoch", s.start_epoch},
                      {"end_epoch", s.end_epoch}});
  }
  json metadata;
  metadata["mode"] = cfg.mode;
  metadata["seed"] = cfg.seed;
  metadata["ablate_no_mask"] = cfg.ablate_no_mask;
  metadata["ablate_no_val"] = cfg.ablate_no_val;
  metadata["stage_log"] = stages;
  metadata["steps"] = result.steps;
  metadata["config"] = cfg.to_json();

  fs::path ckpt = fs::path(out_dir) / "checkpoint.bin";
  craid::save_checkpoint(ckpt.string(), model, classifier, verif, metadata);

  std::ostringstream stage_text;
  for (const auto& s : result.stage_log) {
    stage_text << "stage=" << s.stage << " introduces=" << s.introduced_mask << " frozen=[";
    for (std::size_t i = 0; i < s.frozen_masks.size(); ++i)
      stage_text << (i ? "," : "") << s.frozen_masks[i];
    stage_text << "] epochs=" << s.start_epoch << ".." << s.end_epoch << "\n";
  }
  write_text_file(fs::path(out_dir) / "stages.log", stage_text.str());

  json manifest;
  manifest["command"] = "train";
  manifest["config"] = cfg.to_json();
  manifest["data"] = dataset_summary(data.records);
  manifest["excluded_identities"] = data.excluded_identities;
  manifest["result"] = {{"steps", result.steps},
                        {"initial_total", result.initial_total},
                        {"final_total", result.final_total},
                        {"stages", stages}};
  manifest["outputs"] = {{"checkpoint", "checkpoint.bin"},
                         {"steps_log", "steps.log"},
                         {"stages_log", "stages.log"}};
  write_manifest(out_dir, manifest);
  std::cout << "trained " << result.steps << " steps; total loss " << result.initial_total
            << " -> " << result.final_total << "\ncheckpoint: " << ckpt.string() << "\n";
  return 0;
}

int cmd_eval(ConfigCli& cc, const std::string& checkpoint, const std::string& data_dir,
             const std::string& out_dir, std::optional<int> unseen_rate) {
  craid::CheckpointBundle bundle = craid::load_checkpoint(checkpoint);
  auto records = load_hr_records(data_dir);
  for (const auto& r : records) {
    if (r.pixels.h != bundle.model.cfg.input_h || r.pixels.w != bundle.model.cfg.input_w)
      throw craid::ConfigError(
          "eval: checkpoint expects " + std::to_string(bundle.model.cfg.input_h) + "x" +
          std::to_string(bundle.model.cfg.input_w) + " images but " + r.path + " is " +
          std::to_string(r.pixels.h) + "x" + std::to_string(r.pixels.w));
  }

  // Query rates default to the set the checkpoint was trained with; the
  // model's architecture keys come from the checkpoint, so only the
  // evaluation knobs of the resolved config apply here.
  craid::RunConfig cfg;
  if (!cc.config_path.empty()) cfg = craid::load_run_config(cc.config_path);
  craid::EvalOptions opt;
  opt.master_seed = cc.o_seed->count() ? cc.seed : cfg.seed;
  opt.trials = cc.o_trials && cc.o_trials->count() ? cc.trials : cfg.trials;
  opt.report_ranks = cc.o_ranks && cc.o_ranks->count() ? cc.ranks : cfg.eval_ranks;
  opt.normalize_embeddings = cfg.normalize_embeddings;
  if (cc.o_rates && cc.o_rates->count()) {
    opt.rates = cc.rates;
  } else {
    opt.rates.clear();
    for (const auto& ratio : bundle.model.known_ratios)
      if (!(ratio == craid::Rational(1, 1)))
        opt.rates.push_back(static_cast<int>(ratio.inverse().value()));
  }
  if (unseen_rate) opt.forced_query_rate = *unseen_rate;

  craid::EvalReport report = craid::evaluate_mlr(bundle.model, records, opt);
  std::string text = report.to_text();
  std::cout << text;

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text_file(fs::path(out_dir) / "report.txt", text);
    json manifest;
    manifest["command"] = "eval";
    manifest["checkpoint"] = checkpoint;
    manifest["trials"] = opt.trials;
    manifest["seed"] = opt.master_seed;
    manifest["rates"] = opt.rates;
    if (unseen_rate) manifest["unseen_rate"] = *unseen_rate;
    json assign = json::array();
    for (const auto& a : report.assignments)
      assign.push_back({{"rate", a.rate}, {"level", a.assigned_level},
                        {"assigned_rate", a.assigned_rate}});
    manifest["assignments"] = assign;
    manifest["data"] = dataset_summary(records);
    manifest["outputs"] = {{"report", "report.txt"}};
    write_manifest(out_dir, manifest);
  }
  return 0;
}

int cmd_embed(const std::string& checkpoint, const std::string& data_dir,
              const std::string& list_path, const std::string& out_path) {
  craid::CheckpointBundle bundle = craid::load_checkpoint(checkpoint);
  const craid::Model& model = bundle.model;

  struct Item {
    std::string id;
    craid::Tensor pixels;
    int rate = 1;
    bool apply_rate = false;  // list entries request degradation; dataset
                              // files already carry it
  };
  std::vector<Item> items;
  std::vector<std::string> missing;

  if (!list_path.empty()) {
    std::ifstream f(list_path);
    if (!f) throw craid::DataError("embed: cannot open list " + list_path);
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::string path;
      int rate = 1;
      ls >> path;
      if (!(ls >> rate)) rate = 1;
      if (!fs::exists(path)) {
        missing.push_back(path);
        continue;
      }
      items.push_back({fs::path(path).stem().string(), craid::read_ppm(path), rate, true});
    }
  } else if (!data_dir.empty()) {
    for (auto& r : craid::load_dataset(data_dir))
      items.push_back({fs::path(r.path).stem().string(), std::move(r.pixels), r.down_rate, false});
  } else {
    throw craid::ConfigError("embed: pass --images <list> or --data <dir>");
  }

  for (const auto& m : missing) std::cerr << "warning: missing image " << m << "\n";
  if (items.empty()) throw craid::DataError("embed: no readable images");

  std::vector<craid::EmbeddingExportRecord> records;
  for (const auto& item : items) {
    craid::ResolutionLevel level =
        craid::resolve_unseen_resolution(craid::Rational(1, item.rate), model.known_ratios);
    craid::Tensor img = item.apply_rate ? craid::degrade(item.pixels, item.rate) : item.pixels;
    craid::VaryingLengthEmbedding z = model.embed(img, level);
    craid::EmbeddingExportRecord rec;
    rec.image_id = item.id;
    rec.level = z.level.level_index;
    rec.values = z.concat();
    records.push_back(std::move(rec));
  }

  std::ofstream out(out_path);
  if (!out) throw craid::DataError("embed: cannot write " + out_path);
  craid::write_embedding_export(out, records);
  std::cout << "wrote " << records.size() << " embeddings to " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"craid: cross-resolution identity retrieval toolkit"};
  app.footer(config_key_help());
  app.require_subcommand(1);

  // synthesize
  auto* syn = app.add_subcommand("synthesize", "generate the synthetic fixture or an MLR copy");
  bool fixture = false;
  int identities = 10, per_camera = 4, cameras = 2, height = 32, width = 16;
  std::uint64_t syn_seed = 1234;
  std::string syn_in, syn_out;
  std::vector<int> syn_rates = {2, 3, 4};
  syn->add_flag("--fixture", fixture, "generate the procedural identity fixture");
  syn->add_option("--identities", identities, "fixture identities");
  syn->add_option("--images-per-camera", per_camera, "fixture images per camera");
  syn->add_option("--cameras", cameras, "fixture cameras");
  syn->add_option("--height", height, "fixture image height");
  syn->add_option("--width", width, "fixture image width");
  syn->add_option("--seed", syn_seed, "fixture seed");
  syn->add_option("--in", syn_in, "source directory of native-resolution images");
  syn->add_option("--rates", syn_rates, "down-sampling rates for --in mode")->delimiter(',');
  syn->add_option("--out", syn_out, "output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a model on an image directory");
  ConfigCli train_cc;
  std::string train_data, train_out;
  train_cc.attach(tr, true, false);
  tr->add_option("--data", train_data, "training image directory")->required();
  tr->add_option("--out", train_out, "run output directory")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint under the MLR protocol");
  ConfigCli eval_cc;
  std::string eval_ckpt, eval_data, eval_out;
  int unseen_rate = 0;
  eval_cc.attach(ev, false, true);
  ev->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
  ev->add_option("--data", eval_data, "test image directory")->required();
  ev->add_option("--out", eval_out, "run output directory");
  auto* o_unseen =
      ev->add_option("--unseen-rate", unseen_rate, "evaluate all queries at this unseen rate");

  // embed
  auto* em = app.add_subcommand("embed", "export embeddings to a columnar text file");
  std::string em_ckpt, em_data, em_list, em_out;
  em->add_option("--checkpoint", em_ckpt, "trained checkpoint")->required();
  em->add_option("--data", em_data, "image directory");
  em->add_option("--images", em_list, "list file: <path> [rate] per line");
  em->add_option("--out", em_out, "output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (syn->parsed())
      return cmd_synthesize(fixture, identities, per_camera, cameras, height, width, syn_seed,
                            syn_in, syn_rates, syn_out);
    if (tr->parsed()) return cmd_train(train_cc, train_data, train_out);
    if (ev->parsed())
      return cmd_eval(eval_cc, eval_ckpt, eval_data, eval_out,
                      o_unseen->count() ? std::optional<int>(unseen_rate) : std::nullopt);
    if (em->parsed()) return cmd_embed(em_ckpt, em_data, em_list, em_out);
  } catch (const craid::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const craid::DomainError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const craid::ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return 1;
  } catch (const craid::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const craid::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
