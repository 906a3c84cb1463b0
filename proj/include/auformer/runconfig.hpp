#pragma once

#include <string>

#include "auformer/model.hpp"
#include "auformer/trainer.hpp"

namespace auf {

// Top-level run configuration: JSON with sections
// {vit, moke, loss, train, data, ablation}, every field defaulted.
// Unknown keys are rejected. The config hash (SHA-256 of the canonical,
// fully-defaulted JSON) is stamped into all machine-readable outputs.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_json_file(const std::string& path);
  std::string canonical_json() const;
  std::string hash() const;
};

}  // namespace auf
