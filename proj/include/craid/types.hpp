#ifndef CRAID_TYPES_HPP_
#define CRAID_TYPES_HPP_

#include <vector>

#include "craid/common.hpp"

namespace craid {

// A quantized resolution. level_index is 1-based and ascends with resolution;
// the top level (index m) always has ratio 1.
struct ResolutionLevel {
  int level_index = 0;
  Rational ratio;
};

struct EmbeddingLayout {
  std::vector<int> dims;  // d_1..d_m, one sub-vector width per level

  int levels() const { return static_cast<int>(dims.size()); }
  int total_dim() const;
  // Number of dimensions occupied by the first `level_index` sub-vectors.
  int prefix_dim(int level_index) const;
  void validate() const;
};

// Ordered sub-vectors v_1..v_k of a level-k image. Sub-vector j has width
// layout.dims[j-1]; images at low resolutions carry fewer sub-vectors.
struct VaryingLengthEmbedding {
  ResolutionLevel level;
  std::vector<std::vector<double>> subvectors;

  std::vector<double> concat() const;
  void validate(const EmbeddingLayout& layout) const;
};

// Concatenates the sub-vectors and fills the dimensions of levels above
// z.level with zeros, producing a fixed-length vector of layout.total_dim().
std::vector<double> zero_pad(const VaryingLengthEmbedding& z, const EmbeddingLayout& layout);

// Ascending ratio list {1/r : r in rates} ∪ {1} for integer down-rates.
std::vector<Rational> ratios_for_rates(const std::vector<int>& rates);
void validate_known_ratios(const std::vector<Rational>& known_ratios);

// Maps a ratio in (0,1] onto one of the known levels. Exact matches return
// their level; anything else falls back to the nearest down-rate, with ties
// resolved toward the higher-resolution neighbour.
ResolutionLevel quantize_resolution(const Rational& ratio, const EmbeddingLayout& layout,
                                    const std::vector<Rational>& known_ratios);

// Nearest-rate assignment used when a query arrives at a rate never seen in
// training: |1/ratio - 1/known| is minimized; ties pick the higher resolution.
ResolutionLevel resolve_unseen_resolution(const Rational& ratio,
                                          const std::vector<Rational>& known_ratios);

}  // namespace craid

#endif  // CRAID_TYPES_HPP_
