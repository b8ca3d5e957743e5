#include "craid/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace craid {

namespace {

constexpr char kMagic[8] = {'C', 'R', 'A', 'I', 'D', 'C', 'K', '1'};

std::vector<Param*> all_params(Model& model, PrototypeClassifier& cls, VerificationHead& verif) {
  std::vector<Param*> ps;
  model.collect_params(ps);
  cls.collect(ps);
  verif.collect(ps);
  return ps;
}

void write_u64(std::ofstream& f, std::uint64_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::ifstream& f) {
  std::uint64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

std::string lifecycle_name(MaskLifecycle s) {
  switch (s) {
    case MaskLifecycle::Inactive: return "inactive";
    case MaskLifecycle::Trainable: return "trainable";
    case MaskLifecycle::Frozen: return "frozen";
  }
  return "inactive";
}

MaskLifecycle lifecycle_from(const std::string& s) {
  if (s == "trainable") return MaskLifecycle::Trainable;
  if (s == "frozen") return MaskLifecycle::Frozen;
  if (s == "inactive") return MaskLifecycle::Inactive;
  throw DataError("checkpoint: unknown mask lifecycle '" + s + "'");
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     const PrototypeClassifier& classifier, const VerificationHead& verification,
                     const nlohmann::json& metadata) {
  // collect_params is non-const by signature only; the values are untouched.
  Model& m = const_cast<Model&>(model);
  PrototypeClassifier& c = const_cast<PrototypeClassifier&>(classifier);
  VerificationHead& v = const_cast<VerificationHead&>(verification);
  std::vector<Param*> params = all_params(m, c, v);

  nlohmann::json header;
  header["format"] = "craid-checkpoint";
  header["version"] = 1;
  header["backbone"] = {
      {"scale", model.cfg.scale == BackboneConfig::Scale::Desk ? "desk" : "full"},
      {"input_h", model.cfg.input_h},
      {"input_w", model.cfg.input_w},
      {"block_channels", model.cfg.block_channels},
      {"last_stride", model.cfg.last_stride},
  };
  header["layout_dims"] = model.layout.dims;
  nlohmann::json ratios = nlohmann::json::array();
  for (const Rational& r : model.known_ratios) ratios.push_back({r.num, r.den});
  header["known_ratios"] = ratios;
  header["use_varying_length"] = model.use_varying_length;
  header["identities"] = classifier.C;
  nlohmann::json lifecycle = nlohmann::json::array();
  for (MaskLifecycle s : model.masks.lifecycle) lifecycle.push_back(lifecycle_name(s));
  header["mask_lifecycle"] = lifecycle;
  header["metadata"] = metadata;
  nlohmann::json tensors = nlohmann::json::array();
  for (const Param* p : params) tensors.push_back({{"name", p->name}, {"count", p->value.size()}});
  header["tensors"] = tensors;

  std::string header_str = header.dump();
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("checkpoint: cannot open " + tmp + " for writing");
    f.write(kMagic, sizeof(kMagic));
    write_u64(f, header_str.size());
    f.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const Param* p : params) {
      f.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    if (!f) throw DataError("checkpoint: write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("checkpoint: cannot rename " + tmp + " -> " + path + ": " + ec.message());
}

CheckpointBundle load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("checkpoint: " + path + " is not a craid checkpoint");
  std::uint64_t header_len = read_u64(f);
  std::string header_str(header_len, '\0');
  f.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (!f) throw DataError("checkpoint: truncated header in " + path);

  nlohmann::json header = nlohmann::json::parse(header_str);
  if (header.value("format", "") != "craid-checkpoint")
    throw DataError("checkpoint: unexpected format tag in " + path);

  BackboneConfig cfg;
  const auto& bb = header.at("backbone");
  cfg.scale = bb.at("scale") == "desk" ? BackboneConfig::Scale::Desk : BackboneConfig::Scale::Full;
  cfg.input_h = bb.at("input_h");
  cfg.input_w = bb.at("input_w");
  cfg.block_channels = bb.at("block_channels").get<std::vector<int>>();
  cfg.last_stride = bb.at("last_stride");

  EmbeddingLayout layout;
  layout.dims = header.at("layout_dims").get<std::vector<int>>();
  std::vector<Rational> ratios;
  for (const auto& r : header.at("known_ratios"))
    ratios.push_back(Rational(r.at(0).get<long long>(), r.at(1).get<long long>()));

  CheckpointBundle bundle;
  Rng scratch(0);  // values are overwritten below
  bundle.model = Model::build(cfg, layout, ratios, scratch);
  bundle.model.use_varying_length = header.at("use_varying_length").get<bool>();
  bundle.classifier =
      PrototypeClassifier::build(layout, header.at("identities").get<int>(), scratch);
  bundle.verification = VerificationHead::build(layout.total_dim(), scratch);
  bundle.metadata = header.value("metadata", nlohmann::json::object());

  const auto& lifecycle = header.at("mask_lifecycle");
  if (lifecycle.size() != bundle.model.masks.lifecycle.size())
    throw DataError("checkpoint: mask lifecycle list does not match the architecture");
  for (std::size_t l = 0; l < lifecycle.size(); ++l) {
    MaskLifecycle state = lifecycle_from(lifecycle[l].get<std::string>());
    bundle.model.masks.lifecycle[l] = state;
    for (auto& p : bundle.model.masks.params[l])
      p.trainable = state == MaskLifecycle::Trainable;
  }

  std::vector<Param*> params =
      all_params(bundle.model, bundle.classifier, bundle.verification);
  const auto& tensors = header.at("tensors");
  if (tensors.size() != params.size())
    throw DataError("checkpoint: tensor directory does not match the architecture");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = tensors[i];
    if (entry.at("name").get<std::string>() != params[i]->name)
      throw DataError("checkpoint: tensor order mismatch at '" + params[i]->name + "'");
    if (entry.at("count").get<std::size_t>() != params[i]->value.size())
      throw DataError("checkpoint: tensor size mismatch at '" + params[i]->name + "'");
    f.read(reinterpret_cast<char*>(params[i]->value.data()),
           static_cast<std::streamsize>(params[i]->value.size() * sizeof(double)));
    if (!f) throw DataError("checkpoint: truncated tensor data at '" + params[i]->name + "'");
  }
  return bundle;
}

}  // namespace craid
