#include "craid/model.hpp"

#include <cmath>

namespace craid {

void BackboneConfig::validate() const {
  if (input_h < 8 || input_w < 8) throw ConfigError("backbone: input size too small");
  if (block_channels.empty()) throw ConfigError("backbone: need at least one residual block");
  for (int c : block_channels)
    if (c < 1) throw ConfigError("backbone: block channels must be positive");
  if (scale == Scale::Full) {
    if (block_channels != std::vector<int>{256, 512, 1024, 2048})
      throw ConfigError("backbone: full scale uses stage widths 256/512/1024/2048");
    if (last_stride != 1 && last_stride != 2)
      throw ConfigError("backbone: last_stride must be 1 or 2");
  }
}

BackboneConfig BackboneConfig::desk(int input_h, int input_w, std::vector<int> channels) {
  BackboneConfig cfg;
  cfg.scale = Scale::Desk;
  cfg.input_h = input_h;
  cfg.input_w = input_w;
  cfg.block_channels = std::move(channels);
  cfg.validate();
  return cfg;
}

BackboneConfig BackboneConfig::full(int last_stride) {
  BackboneConfig cfg;
  cfg.scale = Scale::Full;
  cfg.input_h = 256;
  cfg.input_w = 128;
  cfg.block_channels = {256, 512, 1024, 2048};
  cfg.last_stride = last_stride;
  cfg.validate();
  return cfg;
}

void MaskBank::configure(const std::vector<int>& channels_by_l, int levels) {
  block_count = static_cast<int>(channels_by_l.size());
  level_count = levels;
  channels_by_block = channels_by_l;
  params.assign(block_count, {});
  lifecycle.assign(block_count, MaskLifecycle::Inactive);
  for (int l = 1; l <= block_count; ++l) {
    params[l - 1].resize(level_count);
    for (int k = 1; k <= level_count; ++k) {
      Param& p = params[l - 1][k - 1];
      p.name = "mask.l" + std::to_string(l) + ".k" + std::to_string(k);
      p.resize(channels_by_l[l - 1]);
      p.trainable = false;
    }
  }
}

void MaskBank::activate_block(int l, double stddev, Rng& rng) {
  if (l < 1 || l > block_count) throw DomainError("MaskBank: block index out of range");
  for (int k = 1; k <= level_count; ++k) {
    gaussian_init(mask(l, k), stddev, rng);
    mask(l, k).trainable = true;
  }
  lifecycle[l - 1] = MaskLifecycle::Trainable;
}

void MaskBank::freeze_block(int l) {
  if (l < 1 || l > block_count) throw DomainError("MaskBank: block index out of range");
  for (int k = 1; k <= level_count; ++k) mask(l, k).trainable = false;
  lifecycle[l - 1] = MaskLifecycle::Frozen;
}

void MaskBank::collect(std::vector<Param*>& out) {
  for (auto& per_block : params)
    for (auto& p : per_block) out.push_back(&p);
}

Tensor apply_resolution_mask(const Tensor& x, const ResolutionLevel& level, const MaskBank& bank,
                             int block) {
  if (block < 1 || block > bank.block_count)
    throw DomainError("apply_resolution_mask: block index out of range");
  if (level.level_index < 1 || level.level_index > bank.level_count)
    throw DomainError("apply_resolution_mask: level out of range");
  const Param& m = bank.mask(block, level.level_index);
  if (static_cast<int>(m.value.size()) != x.c)
    throw ShapeError("apply_resolution_mask: channel count mismatch");
  Tensor y(x.c, x.h, x.w);
  for (int c = 0; c < x.c; ++c) {
    double s = sigmoid(m.value[c]);
    const double* src = x.data.data() + static_cast<std::size_t>(c) * x.h * x.w;
    double* dst = y.data.data() + static_cast<std::size_t>(c) * x.h * x.w;
    for (int i = 0; i < x.h * x.w; ++i) dst[i] = s * src[i];
  }
  return y;
}

Model Model::build(const BackboneConfig& cfg, const EmbeddingLayout& layout,
                   const std::vector<Rational>& known_ratios, Rng& rng) {
  cfg.validate();
  layout.validate();
  validate_known_ratios(known_ratios);
  if (layout.levels() != static_cast<int>(known_ratios.size()))
    throw ConfigError("model: layout levels must match the known-ratio list");

  Model model;
  model.cfg = cfg;
  model.layout = layout;
  model.known_ratios = known_ratios;

  int L = cfg.masked_block_count();
  if (cfg.scale == BackboneConfig::Scale::Desk) {
    int c0 = cfg.block_channels[0];
    model.stem.configure("stem", 3, c0, 3, 1, 1);
    model.stem.init(rng);
    model.has_pool = false;
    int in_c = c0;
    for (int i = 0; i < L; ++i) {
      int out_c = cfg.block_channels[i];
      model.blocks.push_back(
          ResBlock::basic("block" + std::to_string(i), in_c, out_c, 2, rng));
      model.mask_after_block.push_back(L - i);
      in_c = out_c;
    }
  } else {
    model.stem.configure("stem", 3, 64, 7, 2, 3);
    model.stem.init(rng);
    model.has_pool = true;
    const int depths[4] = {3, 4, 6, 3};
    const int mids[4] = {64, 128, 256, 512};
    const int strides[4] = {1, 2, 2, cfg.last_stride};
    int in_c = 64;
    for (int s = 0; s < 4; ++s) {
      int out_c = cfg.block_channels[s];
      for (int b = 0; b < depths[s]; ++b) {
        std::string name = "stage" + std::to_string(s) + ".block" + std::to_string(b);
        model.blocks.push_back(ResBlock::bottleneck(name, in_c, mids[s], out_c,
                                                    b == 0 ? strides[s] : 1, rng));
        bool stage_end = (b == depths[s] - 1);
        model.mask_after_block.push_back(stage_end ? 4 - s : 0);
        in_c = out_c;
      }
    }
  }

  std::vector<int> channels_by_l(L);
  for (int i = 0; i < L; ++i) channels_by_l[L - 1 - i] = cfg.block_channels[i];
  model.masks.configure(channels_by_l, layout.levels());

  model.head.configure("head", model.feature_channels(), layout.total_dim());
  model.head.init(rng);
  return model;
}

void Model::forward(const Tensor& image, const ResolutionLevel& level, Trace& trace) const {
  if (image.c != 3 || image.h != cfg.input_h || image.w != cfg.input_w)
    throw ShapeError("Model: image must be 3x" + std::to_string(cfg.input_h) + "x" +
                     std::to_string(cfg.input_w));
  if (level.level_index < 1 || level.level_index > levels())
    throw DomainError("Model: resolution level out of range");

  trace.mask_level = level.level_index;
  trace.head_level = use_varying_length ? level.level_index : levels();
  trace.input = image;

  trace.stem_pre = stem.forward(image);
  Tensor x = relu(trace.stem_pre);
  if (has_pool) {
    trace.pool_in = x;
    x = pool.forward(x, trace.pool_argmax);
  }

  trace.block_caches.assign(blocks.size(), {});
  trace.mask_in.assign(blocks.size(), {});
  ResolutionLevel mask_sel{trace.mask_level, known_ratios[trace.mask_level - 1]};
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    x = blocks[i].forward(x, trace.block_caches[i]);
    int l = mask_after_block[i];
    if (l > 0 && masks.active(l)) {
      trace.mask_in[i] = x;
      x = apply_resolution_mask(x, mask_sel, masks, l);
    }
  }
  trace.features = x;
  trace.pooled = global_average_pool(x);
  trace.v = head.forward(trace.pooled);
}

VaryingLengthEmbedding Model::embed(const Tensor& image, const ResolutionLevel& level) const {
  Trace trace;
  forward(image, level, trace);
  return slice_embedding(trace.v, trace.head_level, layout, known_ratios);
}

void Model::backward(const Trace& trace, const std::vector<double>& grad_v) {
  if (static_cast<int>(grad_v.size()) != layout.total_dim())
    throw ShapeError("Model::backward: gradient length mismatch");
  std::vector<double> grad_pooled = head.backward(trace.pooled, grad_v);
  Tensor g = global_average_pool_backward(trace.features, grad_pooled);

  for (int i = static_cast<int>(blocks.size()) - 1; i >= 0; --i) {
    int l = mask_after_block[i];
    if (l > 0 && masks.active(l)) {
      const Tensor& x_in = trace.mask_in[i];
      Param& m = masks.mask(l, trace.mask_level);
      Tensor g_in(x_in.c, x_in.h, x_in.w);
      int plane = x_in.h * x_in.w;
      for (int c = 0; c < x_in.c; ++c) {
        double s = sigmoid(m.value[c]);
        double ds = s * (1.0 - s);
        const double* gp = g.data.data() + static_cast<std::size_t>(c) * plane;
        const double* xp = x_in.data.data() + static_cast<std::size_t>(c) * plane;
        double* gi = g_in.data.data() + static_cast<std::size_t>(c) * plane;
        double acc = 0.0;
        for (int j = 0; j < plane; ++j) {
          gi[j] = gp[j] * s;
          acc += gp[j] * xp[j];
        }
        m.grad[c] += acc * ds;
      }
      g = std::move(g_in);
    }
    g = blocks[i].backward(trace.block_caches[i], g);
  }

  if (has_pool) g = pool.backward(trace.pool_in, trace.pool_argmax, g);
  g = relu_backward(trace.stem_pre, g);
  stem.backward(trace.input, g);  // input gradient discarded
}

void Model::collect_params(std::vector<Param*>& out) {
  stem.collect(out);
  for (auto& b : blocks) b.collect(out);
  head.collect(out);
  masks.collect(out);
}

void Model::zero_grads() {
  std::vector<Param*> ps;
  collect_params(ps);
  for (Param* p : ps) p->zero_grad();
}

VaryingLengthEmbedding slice_embedding(const std::vector<double>& v, int level_index,
                                       const EmbeddingLayout& layout,
                                       const std::vector<Rational>& known_ratios) {
  if (static_cast<int>(v.size()) != layout.total_dim())
    throw ShapeError("slice_embedding: vector length mismatch");
  VaryingLengthEmbedding z;
  z.level = ResolutionLevel{level_index, known_ratios[level_index - 1]};
  int pos = 0;
  for (int j = 0; j < level_index; ++j) {
    z.subvectors.emplace_back(v.begin() + pos, v.begin() + pos + layout.dims[j]);
    pos += layout.dims[j];
  }
  return z;
}

}  // namespace craid
