#ifndef CRAID_CHECKPOINT_HPP_
#define CRAID_CHECKPOINT_HPP_

#include <string>

#include <json.hpp>

#include "craid/losses.hpp"
#include "craid/model.hpp"

namespace craid {

struct CheckpointBundle {
  Model model;
  PrototypeClassifier classifier;
  VerificationHead verification;
  nlohmann::json metadata;
};

// Self-describing binary container: a JSON header (architecture, layout,
// ratio list, mask lifecycle, metadata, tensor directory) followed by raw
// little-endian doubles per tensor. Round-trips bit-exactly. Writes go to a
// temp file that is renamed into place.
void save_checkpoint(const std::string& path, const Model& model,
                     const PrototypeClassifier& classifier, const VerificationHead& verification,
                     const nlohmann::json& metadata);

CheckpointBundle load_checkpoint(const std::string& path);

}  // namespace craid

#endif  // CRAID_CHECKPOINT_HPP_
