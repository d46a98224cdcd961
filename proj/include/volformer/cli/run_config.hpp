#pragma once

#include <string>

#include "json.hpp"
#include "volformer/data/synthetic.hpp"
#include "volformer/model/config.hpp"
#include "volformer/train/optimizer.hpp"

namespace volformer {

/// Everything a CLI run depends on. JSON layout:
///   {"model": {...}, "train": {...}, "spec": {...},
///    "cv": {"folds", "scheme"}, "data": {"allow_crop"},
///    "localize": {"layer", "top_fraction"}}
/// Every section is optional. A "model" section without "preset" starts
/// from the desk preset, as does a config with no model section.
struct RunConfig {
  ModelConfig model = ModelConfig::desk();
  TrainConfig train;
  SyntheticSpec spec;
  std::size_t folds = 5;
  std::string fold_scheme = "stratified";  // or "site"
  bool allow_crop = false;
  std::string cam_layer;      // empty: last stage
  double top_fraction = 0.05; // hit-rate audit threshold

  /// Applies one seed to the model, training and synthetic streams.
  void set_seed(std::uint64_t seed);
  /// Throws ConfigError naming the field.
  void validate() const;
  nlohmann::json to_json() const;
  /// Unknown keys are rejected at every level.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
};

/// Parses a JSON file, raising ConfigError with the path on failure.
nlohmann::json read_json_file(const std::string& path);

}  // namespace volformer
