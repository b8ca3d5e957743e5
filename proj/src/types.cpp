#include "craid/types.hpp"

#include <algorithm>

namespace craid {

int EmbeddingLayout::total_dim() const {
  int d = 0;
  for (int dk : dims) d += dk;
  return d;
}

int EmbeddingLayout::prefix_dim(int level_index) const {
  int d = 0;
  for (int j = 0; j < level_index; ++j) d += dims[j];
  return d;
}

void EmbeddingLayout::validate() const {
  if (dims.empty()) throw DomainError("EmbeddingLayout: no levels");
  for (int dk : dims)
    if (dk <= 0) throw DomainError("EmbeddingLayout: sub-vector dims must be positive");
}

std::vector<double> VaryingLengthEmbedding::concat() const {
  std::vector<double> out;
  for (const auto& sv : subvectors) out.insert(out.end(), sv.begin(), sv.end());
  return out;
}

void VaryingLengthEmbedding::validate(const EmbeddingLayout& layout) const {
  if (level.level_index < 1 || level.level_index > layout.levels())
    throw DomainError("VaryingLengthEmbedding: level out of range");
  if (static_cast<int>(subvectors.size()) != level.level_index)
    throw ShapeError("VaryingLengthEmbedding: sub-vector count must equal the level index");
  for (int j = 0; j < level.level_index; ++j) {
    if (static_cast<int>(subvectors[j].size()) != layout.dims[j])
      throw ShapeError("VaryingLengthEmbedding: sub-vector " + std::to_string(j + 1) +
                       " width does not match the layout");
  }
}

std::vector<double> zero_pad(const VaryingLengthEmbedding& z, const EmbeddingLayout& layout) {
  z.validate(layout);
  std::vector<double> out(layout.total_dim(), 0.0);
  std::size_t pos = 0;
  for (const auto& sv : z.subvectors) {
    std::copy(sv.begin(), sv.end(), out.begin() + pos);
    pos += sv.size();
  }
  return out;
}

std::vector<Rational> ratios_for_rates(const std::vector<int>& rates) {
  std::vector<Rational> out;
  out.push_back(Rational(1, 1));
  for (int r : rates) {
    if (r < 1) throw DomainError("ratios_for_rates: down-rate must be >= 1");
    if (r > 1) out.push_back(Rational(1, r));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void validate_known_ratios(const std::vector<Rational>& known_ratios) {
  if (known_ratios.empty()) throw DomainError("known ratios: empty");
  for (std::size_t i = 0; i < known_ratios.size(); ++i) {
    const Rational& r = known_ratios[i];
    if (r.num <= 0 || r > Rational(1, 1)) throw DomainError("known ratios: must lie in (0,1]");
    if (i > 0 && !(known_ratios[i - 1] < r))
      throw DomainError("known ratios: must be strictly ascending");
  }
  if (!(known_ratios.back() == Rational(1, 1)))
    throw DomainError("known ratios: the top level must have ratio 1");
}

ResolutionLevel resolve_unseen_resolution(const Rational& ratio,
                                          const std::vector<Rational>& known_ratios) {
  validate_known_ratios(known_ratios);
  // Compare down-rates (1/ratio), not ratios: |3-2| = |3-4| reproduces the
  // tie between neighbouring rates, which ratios would hide.
  Rational query_rate = ratio.inverse();
  int best = 0;
  Rational best_gap = (known_ratios[0].inverse() - query_rate).abs();
  for (std::size_t i = 1; i < known_ratios.size(); ++i) {
    Rational gap = (known_ratios[i].inverse() - query_rate).abs();
    // Ascending ratio order means later entries have higher resolution, so
    // '<=' breaks ties toward the higher-resolution neighbour.
    if (gap <= best_gap) {
      best = static_cast<int>(i);
      best_gap = gap;
    }
  }
  return ResolutionLevel{best + 1, known_ratios[best]};
}

ResolutionLevel quantize_resolution(const Rational& ratio, const EmbeddingLayout& layout,
                                    const std::vector<Rational>& known_ratios) {
  if (ratio.num <= 0 || ratio > Rational(1, 1))
    throw DomainError("quantize_resolution: ratio must lie in (0,1]");
  validate_known_ratios(known_ratios);
  if (layout.levels() != static_cast<int>(known_ratios.size()))
    throw DomainError("quantize_resolution: layout level count does not match the ratio list");
  for (std::size_t i = 0; i < known_ratios.size(); ++i) {
    if (known_ratios[i] == ratio) return ResolutionLevel{static_cast<int>(i) + 1, known_ratios[i]};
  }
  return resolve_unseen_resolution(ratio, known_ratios);
}

}  // namespace craid
