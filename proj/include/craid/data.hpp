#ifndef CRAID_DATA_HPP_
#define CRAID_DATA_HPP_

#include <string>
#include <vector>

#include "craid/tensor.hpp"
#include "craid/types.hpp"

namespace craid {

struct IdentityImageRecord {
  int identity_id = -1;
  int camera_id = 0;
  std::string path;  // empty for in-memory records
  Tensor pixels;     // 3 x H x W, values in [0,1], canonical size
  bool is_synthetic_lr = false;
  int down_rate = 1;  // 1 = native high resolution
};

struct AugmentationConfig {
  int target_h = 256;
  int target_w = 128;
  int pad_pixels = 10;
  double hflip_prob = 0.5;

  void validate() const;
};

// Half-pixel-centre bilinear resampling (corner alignment off).
Tensor bilinear_resize(const Tensor& image, int out_h, int out_w);

// Bilinear down-sample by an integer rate (floor sizes, clamped to 4px per
// side), then bilinear up-sample back to the input size.
Tensor synthesize_lr(const Tensor& image, int rate);

// rate 1 is a bitwise identity path; rate >= 2 goes through synthesize_lr.
Tensor degrade(const Tensor& image, int rate);

// Deterministic core: zero-pad, crop at (off_y, off_x), optional mirror.
Tensor augment_at(const Tensor& image, const AugmentationConfig& cfg, int off_y, int off_x,
                  bool flip);
// Draws the crop offset and flip from rng, then applies augment_at.
Tensor augment(const Tensor& image, const AugmentationConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// Synthetic identity fixture: procedurally coloured, striped person-like
// patterns so the whole pipeline runs without any licensed dataset. Identity
// is carried by low-frequency structure (colour pair, band split, stripe
// direction) that survives aggressive down-sampling; the two cameras differ
// in brightness and noise level.
struct FixtureConfig {
  int identities = 10;
  int cameras = 2;
  int images_per_camera = 4;
  int height = 32;
  int width = 16;
  std::uint64_t seed = 1234;
};

std::vector<IdentityImageRecord> make_fixture(const FixtureConfig& cfg);

// Binary PPM (P6) image files.
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

// Directory layout: flat folder of PPM files named
//   <identity:4>_c<camera>_<sequence:6>[_r<rate>].ppm
void write_dataset(const std::string& dir, const std::vector<IdentityImageRecord>& records);
std::vector<IdentityImageRecord> load_dataset(const std::string& dir);

// ---------------------------------------------------------------------------
struct TrainSample {
  Tensor query_image;
  Tensor gallery_image;
  ResolutionLevel query_level;
  int query_label = -1;    // dense label in [0, C)
  int gallery_label = -1;
};

struct MlrTrainingSet {
  std::vector<IdentityImageRecord> records;  // HR pool, eligible identities only
  std::vector<int> labels;                   // dense label per record
  std::vector<int> identity_ids;             // label -> original identity id
  std::vector<int> rates;                    // LR synthesis rates, e.g. {2,3,4}
  std::vector<Rational> known_ratios;        // {1} ∪ {1/r}, ascending
  std::vector<int> level_for_rate_index;     // per {1}∪rates entry, 1-based level
  std::vector<int> excluded_identities;      // identities with < 2 images
  AugmentationConfig augmentation;

  int identity_count() const { return static_cast<int>(identity_ids.size()); }
  std::size_t size() const { return records.size(); }
  int levels() const { return static_cast<int>(known_ratios.size()); }

  std::vector<TrainSample> sample_batch(int batch_size, Rng& rng) const;
};

MlrTrainingSet make_mlr_training_set(const std::vector<IdentityImageRecord>& hr_records,
                                     const std::vector<int>& rates,
                                     const AugmentationConfig& augmentation);

// ---------------------------------------------------------------------------
struct EvalQuery {
  int record_index = -1;
  int identity = -1;
  int rate = 1;              // down-rate applied to the query image
  ResolutionLevel level;     // assigned level (nearest seen rate if unseen)
};

struct EvalGalleryItem {
  int record_index = -1;
  int identity = -1;
};

struct TrialSplit {
  std::vector<EvalQuery> queries;
  std::vector<EvalGalleryItem> gallery;
  std::vector<int> query_only_skipped;  // single-image identities: gallery only
};

// One evaluation trial: each identity contributes one random HR gallery
// image; every remaining image becomes a query at a random rate from `rates`.
// Rates absent from known_ratios are assigned to the nearest seen rate.
TrialSplit make_mlr_query_gallery(const std::vector<IdentityImageRecord>& test_records,
                                  const std::vector<int>& rates,
                                  const std::vector<Rational>& known_ratios,
                                  std::uint64_t trial_seed);

}  // namespace craid

#endif  // CRAID_DATA_HPP_
