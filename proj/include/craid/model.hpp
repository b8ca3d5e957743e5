#ifndef CRAID_MODEL_HPP_
#define CRAID_MODEL_HPP_

#include <string>
#include <vector>

#include "craid/layers.hpp"
#include "craid/types.hpp"

namespace craid {

struct BackboneConfig {
  enum class Scale { Desk, Full };
  Scale scale = Scale::Desk;
  int input_h = 32;
  int input_w = 16;
  // Output channels of each masked residual block, in forward order. At full
  // scale these are the four stage widths of the 50-layer network.
  std::vector<int> block_channels = {8, 16};
  int last_stride = 1;

  int masked_block_count() const { return static_cast<int>(block_channels.size()); }
  void validate() const;

  static BackboneConfig desk(int input_h, int input_w, std::vector<int> channels);
  static BackboneConfig full(int last_stride = 1);
};

enum class MaskLifecycle { Inactive, Trainable, Frozen };

// Per-block, per-level mask parameters. Block index l is 1-based counted from
// the output side (l = 1 sits after the last residual block). Masks start
// Inactive: the block behaves as identity scaling until a training stage (or
// the end-to-end mode) activates it.
struct MaskBank {
  int block_count = 0;  // L
  int level_count = 0;  // m
  std::vector<int> channels_by_block;          // [l-1]
  std::vector<std::vector<Param>> params;      // [l-1][k-1], length channels_by_block[l-1]
  std::vector<MaskLifecycle> lifecycle;        // [l-1]

  void configure(const std::vector<int>& channels_by_l, int levels);
  void activate_block(int l, double stddev, Rng& rng);
  void freeze_block(int l);
  bool active(int l) const { return lifecycle[l - 1] != MaskLifecycle::Inactive; }
  bool frozen(int l) const { return lifecycle[l - 1] == MaskLifecycle::Frozen; }
  Param& mask(int l, int k) { return params[l - 1][k - 1]; }
  const Param& mask(int l, int k) const { return params[l - 1][k - 1]; }
  void collect(std::vector<Param*>& out);
};

// X̄[c] = sigmoid(M^l_k[c]) · X[c], the one mask selected by the input level.
Tensor apply_resolution_mask(const Tensor& x, const ResolutionLevel& level, const MaskBank& bank,
                             int block);

// The embedding network: residual backbone, per-level channel masks after
// each masked block, global average pooling and one linear projection to the
// layout's total dimension. The first k sub-vectors form the embedding.
struct Model {
  BackboneConfig cfg;
  EmbeddingLayout layout;
  std::vector<Rational> known_ratios;
  // Off = every image is sliced at the top level; masks still follow the
  // input's true resolution level.
  bool use_varying_length = true;

  Conv2d stem;
  bool has_pool = false;
  MaxPool pool;
  std::vector<ResBlock> blocks;
  std::vector<int> mask_after_block;  // l applied after block i, 0 = none
  MaskBank masks;
  Linear head;

  struct Trace {
    int mask_level = 0;
    int head_level = 0;
    Tensor input;
    Tensor stem_pre;
    Tensor pool_in;
    std::vector<int> pool_argmax;
    std::vector<ResBlock::Cache> block_caches;
    std::vector<Tensor> mask_in;  // feature map entering the mask after block i
    Tensor features;
    std::vector<double> pooled;
    std::vector<double> v;
  };

  static Model build(const BackboneConfig& cfg, const EmbeddingLayout& layout,
                     const std::vector<Rational>& known_ratios, Rng& rng);

  int levels() const { return layout.levels(); }
  int feature_channels() const { return cfg.block_channels.back(); }

  void forward(const Tensor& image, const ResolutionLevel& level, Trace& trace) const;
  VaryingLengthEmbedding embed(const Tensor& image, const ResolutionLevel& level) const;
  // grad_v is the gradient w.r.t. the full-length penultimate vector; entries
  // beyond the sample's occupied prefix carry no gradient and must be zero.
  void backward(const Trace& trace, const std::vector<double>& grad_v);

  void collect_params(std::vector<Param*>& out);
  void zero_grads();
};

VaryingLengthEmbedding slice_embedding(const std::vector<double>& v, int level_index,
                                       const EmbeddingLayout& layout,
                                       const std::vector<Rational>& known_ratios);

}  // namespace craid

#endif  // CRAID_MODEL_HPP_
