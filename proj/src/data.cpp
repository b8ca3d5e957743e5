#include "craid/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

namespace craid {

namespace fs = std::filesystem;

void AugmentationConfig::validate() const {
  if (target_h < 1 || target_w < 1) throw ConfigError("augmentation: bad target size");
  if (pad_pixels < 0) throw ConfigError("augmentation: pad_pixels must be >= 0");
  if (hflip_prob < 0.0 || hflip_prob > 1.0)
    throw ConfigError("augmentation: hflip_prob must lie in [0,1]");
}

Tensor bilinear_resize(const Tensor& image, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw DomainError("bilinear_resize: bad output size");
  if (image.h == out_h && image.w == out_w) return image;
  Tensor out(image.c, out_h, out_w);
  double sy = static_cast<double>(image.h) / out_h;
  double sx = static_cast<double>(image.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double src_y = (y + 0.5) * sy - 0.5;
    if (src_y < 0.0) src_y = 0.0;
    if (src_y > image.h - 1) src_y = image.h - 1;
    int y0 = static_cast<int>(std::floor(src_y));
    int y1 = std::min(y0 + 1, image.h - 1);
    double fy = src_y - y0;
    for (int x = 0; x < out_w; ++x) {
      double src_x = (x + 0.5) * sx - 0.5;
      if (src_x < 0.0) src_x = 0.0;
      if (src_x > image.w - 1) src_x = image.w - 1;
      int x0 = static_cast<int>(std::floor(src_x));
      int x1 = std::min(x0 + 1, image.w - 1);
      double fx = src_x - x0;
      for (int c = 0; c < image.c; ++c) {
        double top = image.at(c, y0, x0) * (1.0 - fx) + image.at(c, y0, x1) * fx;
        double bot = image.at(c, y1, x0) * (1.0 - fx) + image.at(c, y1, x1) * fx;
        out.at(c, y, x) = top * (1.0 - fy) + bot * fy;
      }
    }
  }
  return out;
}

Tensor synthesize_lr(const Tensor& image, int rate) {
  if (rate < 2) throw DomainError("synthesize_lr: rate must be >= 2 (rate 1 is the HR path)");
  int down_h = std::max(std::min(4, image.h), image.h / rate);
  int down_w = std::max(std::min(4, image.w), image.w / rate);
  Tensor small = bilinear_resize(image, down_h, down_w);
  return bilinear_resize(small, image.h, image.w);
}

Tensor degrade(const Tensor& image, int rate) {
  if (rate < 1) throw DomainError("degrade: rate must be >= 1");
  if (rate == 1) return image;
  return synthesize_lr(image, rate);
}

Tensor augment_at(const Tensor& image, const AugmentationConfig& cfg, int off_y, int off_x,
                  bool flip) {
  cfg.validate();
  Tensor base = bilinear_resize(image, cfg.target_h, cfg.target_w);
  int pad = cfg.pad_pixels;
  if (off_y < 0 || off_y > 2 * pad || off_x < 0 || off_x > 2 * pad)
    throw DomainError("augment: crop offset outside the padded frame");
  Tensor out(base.c, cfg.target_h, cfg.target_w);
  for (int c = 0; c < base.c; ++c) {
    for (int y = 0; y < cfg.target_h; ++y) {
      int src_y = y + off_y - pad;
      for (int x = 0; x < cfg.target_w; ++x) {
        int src_x = x + off_x - pad;
        double v = 0.0;
        if (src_y >= 0 && src_y < base.h && src_x >= 0 && src_x < base.w)
          v = base.at(c, src_y, src_x);
        out.at(c, y, flip ? cfg.target_w - 1 - x : x) = v;
      }
    }
  }
  return out;
}

Tensor augment(const Tensor& image, const AugmentationConfig& cfg, Rng& rng) {
  std::uniform_int_distribution<int> off_dist(0, 2 * cfg.pad_pixels);
  int off_y = off_dist(rng);
  int off_x = off_dist(rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  bool flip = unit(rng) < cfg.hflip_prob;
  return augment_at(image, cfg, off_y, off_x, flip);
}

// ---------------------------------------------------------------------------

namespace {

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = h - std::floor(h);
  double c = v * s;
  double hp = h * 6.0;
  double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c; g = x;
  } else if (hp < 2) {
    r = x; g = c;
  } else if (hp < 3) {
    g = c; b = x;
  } else if (hp < 4) {
    g = x; b = c;
  } else if (hp < 5) {
    r = x; b = c;
  } else {
    r = c; b = x;
  }
  double m = v - c;
  rgb[0] = r + m;
  rgb[1] = g + m;
  rgb[2] = b + m;
}

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace

std::vector<IdentityImageRecord> make_fixture(const FixtureConfig& cfg) {
  if (cfg.identities < 1 || cfg.cameras < 1 || cfg.images_per_camera < 1)
    throw ConfigError("fixture: counts must be positive");
  if (cfg.height < 8 || cfg.width < 8) throw ConfigError("fixture: image size too small");

  std::vector<IdentityImageRecord> out;
  int pair_count = (cfg.identities + 1) / 2;
  for (int id = 0; id < cfg.identities; ++id) {
    // Identities come in colour pairs: ids 2g and 2g+1 share the coarse
    // signature (colour pair, split row) that survives any down-rate, and
    // differ in stripe direction, a finer cue that washes out at strong
    // down-sampling. Low resolutions can always find the pair; telling the
    // two members apart needs the higher-resolution detail.
    int pair = id / 2;
    double hue_top = static_cast<double>(pair) / pair_count;
    // Pair members keep the same top colour; the bottom shade differs only
    // slightly, so heavy down-sampling leaves the pair nearly ambiguous.
    double hue_bot = hue_top + 0.37 + (id % 2) * 0.05;
    double top_rgb[3], bot_rgb[3];
    hsv_to_rgb(hue_top, 0.85, 0.85, top_rgb);
    hsv_to_rgb(hue_bot, 0.70, 0.60, bot_rgb);
    bool vertical_stripes = (id % 2) == 0;
    int stripe_period = 8;
    double base_split = 0.40 + 0.12 * ((pair % 4) / 3.0);

    for (int cam = 0; cam < cfg.cameras; ++cam) {
      // Two capture regimes: camera 0 is bright and clean, camera 1 darker
      // and noisier with a blue cast.
      double cam_gain = cam == 0 ? 1.05 : 0.85;
      double cam_noise = cam == 0 ? 0.02 : 0.05;
      double cam_tint_b = cam == 0 ? 0.0 : 0.05;

      for (int j = 0; j < cfg.images_per_camera; ++j) {
        Rng rng(derive_seed(cfg.seed, (static_cast<std::uint64_t>(id) << 20) ^
                                          (static_cast<std::uint64_t>(cam) << 10) ^
                                          static_cast<std::uint64_t>(j)));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::normal_distribution<double> noise(0.0, cam_noise);
        double brightness = 1.0 + (unit(rng) - 0.5) * 0.16;
        int split_row = static_cast<int>(cfg.height * base_split) +
                        static_cast<int>(unit(rng) * 3.0) - 1;
        int phase = static_cast<int>(unit(rng) * stripe_period);

        Tensor img(3, cfg.height, cfg.width);
        for (int y = 0; y < cfg.height; ++y) {
          for (int x = 0; x < cfg.width; ++x) {
            const double* base = y < split_row ? top_rgb : bot_rgb;
            int stripe_coord = vertical_stripes ? x : y;
            double stripe =
                ((stripe_coord + phase) / (stripe_period / 2)) % 2 == 0 ? 0.16 : -0.16;
            for (int c = 0; c < 3; ++c) {
              double v = base[c] * brightness * cam_gain + stripe;
              if (c == 2) v += cam_tint_b;
              v += noise(rng);
              img.at(c, y, x) = clamp01(v);
            }
          }
        }
        IdentityImageRecord rec;
        rec.identity_id = id;
        rec.camera_id = cam;
        rec.pixels = std::move(img);
        out.push_back(std::move(rec));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.c != 3) throw ShapeError("write_ppm: expected a 3-channel image");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("write_ppm: cannot open " + path);
  f << "P6\n" << image.w << " " << image.h << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(image.w) * 3);
  for (int y = 0; y < image.h; ++y) {
    for (int x = 0; x < image.w; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = clamp01(image.at(c, y, x));
        row[static_cast<std::size_t>(x) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw DataError("write_ppm: write failed for " + path);
}

Tensor read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("read_ppm: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw DataError("read_ppm: " + path + " is not a binary PPM");
  auto next_int = [&]() {
    int v;
    while (true) {
      f >> std::ws;
      if (f.peek() == '#') {
        std::string comment;
        std::getline(f, comment);
        continue;
      }
      if (!(f >> v)) throw DataError("read_ppm: malformed header in " + path);
      return v;
    }
  };
  int w = next_int(), h = next_int(), maxval = next_int();
  if (w < 1 || h < 1 || maxval != 255) throw DataError("read_ppm: unsupported header in " + path);
  f.get();  // single whitespace after maxval
  Tensor img(3, h, w);
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!f) throw DataError("read_ppm: truncated pixel data in " + path);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = row[static_cast<std::size_t>(x) * 3 + c] / 255.0;
  }
  return img;
}

void write_dataset(const std::string& dir, const std::vector<IdentityImageRecord>& records) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("write_dataset: cannot create " + dir + ": " + ec.message());
  std::map<std::pair<int, int>, int> seq;
  for (const auto& rec : records) {
    int n = seq[{rec.identity_id, rec.camera_id}]++;
    char name[64];
    if (rec.down_rate > 1)
      std::snprintf(name, sizeof(name), "%04d_c%d_%06d_r%d.ppm", rec.identity_id, rec.camera_id,
                    n, rec.down_rate);
    else
      std::snprintf(name, sizeof(name), "%04d_c%d_%06d.ppm", rec.identity_id, rec.camera_id, n);
    write_ppm((fs::path(dir) / name).string(), rec.pixels);
  }
}

std::vector<IdentityImageRecord> load_dataset(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("load_dataset: not a directory: " + dir);
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm")
      names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw DataError("load_dataset: no .ppm files under " + dir);

  std::vector<IdentityImageRecord> out;
  for (const auto& name : names) {
    int id = -1, cam = -1, n = -1, rate = 1;
    int fields = std::sscanf(name.c_str(), "%d_c%d_%d_r%d.ppm", &id, &cam, &n, &rate);
    if (fields < 3 || id < 0 || cam < 0 || rate < 1)
      throw DataError("load_dataset: cannot parse identity/camera from " + name);
    IdentityImageRecord rec;
    rec.identity_id = id;
    rec.camera_id = cam;
    rec.down_rate = rate;
    rec.is_synthetic_lr = rate > 1;
    rec.path = (fs::path(dir) / name).string();
    rec.pixels = read_ppm(rec.path);
    out.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------

MlrTrainingSet make_mlr_training_set(const std::vector<IdentityImageRecord>& hr_records,
                                     const std::vector<int>& rates,
                                     const AugmentationConfig& augmentation) {
  augmentation.validate();
  for (int r : rates)
    if (r < 2) throw DomainError("make_mlr_training_set: rates must be >= 2");

  std::map<int, std::vector<const IdentityImageRecord*>> by_id;
  for (const auto& rec : hr_records) {
    if (rec.identity_id < 0) throw DataError("make_mlr_training_set: negative identity id");
    by_id[rec.identity_id].push_back(&rec);
  }

  MlrTrainingSet set;
  set.rates = rates;
  std::sort(set.rates.begin(), set.rates.end());
  set.rates.erase(std::unique(set.rates.begin(), set.rates.end()), set.rates.end());
  set.known_ratios = ratios_for_rates(set.rates);
  set.augmentation = augmentation;

  for (const auto& [id, recs] : by_id) {
    if (recs.size() < 2) {
      set.excluded_identities.push_back(id);
      continue;
    }
    int label = static_cast<int>(set.identity_ids.size());
    set.identity_ids.push_back(id);
    for (const auto* r : recs) {
      set.records.push_back(*r);
      set.labels.push_back(label);
    }
  }
  if (set.records.empty())
    throw DataError("make_mlr_training_set: no identity has two or more images");

  // Sampled rate index i maps to {1} ∪ rates; precompute its level.
  std::vector<int> all_rates;
  all_rates.push_back(1);
  all_rates.insert(all_rates.end(), set.rates.begin(), set.rates.end());
  for (int r : all_rates) {
    Rational ratio(1, r);
    int level = 0;
    for (std::size_t i = 0; i < set.known_ratios.size(); ++i)
      if (set.known_ratios[i] == ratio) level = static_cast<int>(i) + 1;
    set.level_for_rate_index.push_back(level);
  }
  return set;
}

std::vector<TrainSample> MlrTrainingSet::sample_batch(int batch_size, Rng& rng) const {
  if (batch_size < 1) throw DomainError("sample_batch: batch size must be positive");
  std::uniform_int_distribution<std::size_t> rec_dist(0, records.size() - 1);
  std::uniform_int_distribution<int> rate_dist(0, static_cast<int>(rates.size()));  // 0 = HR
  std::uniform_int_distribution<int> id_dist(0, identity_count() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> off_dist(0, 2 * augmentation.pad_pixels);

  // Record indices per label, for gallery draws.
  std::vector<std::vector<std::size_t>> per_label(identity_count());
  for (std::size_t i = 0; i < records.size(); ++i) per_label[labels[i]].push_back(i);

  std::vector<TrainSample> batch;
  batch.reserve(batch_size);
  for (int b = 0; b < batch_size; ++b) {
    TrainSample s;
    std::size_t q = rec_dist(rng);
    int rate_idx = rate_dist(rng);
    int rate = rate_idx == 0 ? 1 : rates[rate_idx - 1];
    int level = level_for_rate_index[rate_idx];
    int off_y = off_dist(rng), off_x = off_dist(rng);
    bool flip = unit(rng) < augmentation.hflip_prob;
    s.query_image = augment_at(degrade(records[q].pixels, rate), augmentation, off_y, off_x, flip);
    s.query_level = ResolutionLevel{level, known_ratios[level - 1]};
    s.query_label = labels[q];

    int gid = id_dist(rng);
    const auto& pool = per_label[gid];
    std::uniform_int_distribution<std::size_t> g_dist(0, pool.size() - 1);
    std::size_t g = pool[g_dist(rng)];
    off_y = off_dist(rng);
    off_x = off_dist(rng);
    flip = unit(rng) < augmentation.hflip_prob;
    s.gallery_image = augment_at(records[g].pixels, augmentation, off_y, off_x, flip);
    s.gallery_label = labels[g];
    batch.push_back(std::move(s));
  }
  return batch;
}

TrialSplit make_mlr_query_gallery(const std::vector<IdentityImageRecord>& test_records,
                                  const std::vector<int>& rates,
                                  const std::vector<Rational>& known_ratios,
                                  std::uint64_t trial_seed) {
  if (rates.empty()) throw DomainError("make_mlr_query_gallery: need at least one query rate");
  validate_known_ratios(known_ratios);

  std::map<int, std::vector<int>> by_id;
  for (std::size_t i = 0; i < test_records.size(); ++i)
    by_id[test_records[i].identity_id].push_back(static_cast<int>(i));

  Rng rng(trial_seed);
  std::uniform_int_distribution<int> rate_dist(0, static_cast<int>(rates.size()) - 1);

  TrialSplit split;
  for (const auto& [id, idxs] : by_id) {
    std::uniform_int_distribution<std::size_t> pick(0, idxs.size() - 1);
    int gallery_idx = idxs[pick(rng)];
    split.gallery.push_back(EvalGalleryItem{gallery_idx, id});
    if (idxs.size() == 1) {
      split.query_only_skipped.push_back(id);
      continue;
    }
    for (int idx : idxs) {
      if (idx == gallery_idx) continue;
      int rate = rates[rate_dist(rng)];
      EvalQuery q;
      q.record_index = idx;
      q.identity = id;
      q.rate = rate;
      q.level = resolve_unseen_resolution(Rational(1, rate), known_ratios);
      split.queries.push_back(q);
    }
  }
  return split;
}

}  // namespace craid
