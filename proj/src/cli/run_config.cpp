#include "volformer/cli/run_config.hpp"

#include <fstream>
#include <set>

#include "volformer/core/error.hpp"

namespace volformer {

void RunConfig::set_seed(std::uint64_t seed) {
  model.seed = seed;
  train.seed = seed;
  spec.seed = seed;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  spec.validate();
  if (folds < 2) throw ConfigError("cv.folds: at least 2 folds are required");
  if (fold_scheme != "stratified" && fold_scheme != "site") {
    throw ConfigError("cv.scheme: unknown value '" + fold_scheme + "' (expected stratified or site)");
  }
  if (!(top_fraction > 0 && top_fraction <= 1)) throw ConfigError("localize.top_fraction: must lie in (0, 1]");
}

nlohmann::json RunConfig::to_json() const {
  return {{"model", model.to_json()},
          {"train", train.to_json()},
          {"spec", spec.to_json()},
          {"cv", {{"folds", folds}, {"scheme", fold_scheme}}},
          {"data", {{"allow_crop", allow_crop}}},
          {"localize", {{"layer", cam_layer}, {"top_fraction", top_fraction}}}};
}

namespace {
void reject_unknown(const nlohmann::json& j, const std::string& section, const std::set<std::string>& known) {
  if (!j.is_object()) throw ConfigError(section + ": must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError((section.empty() ? "" : section + ".") + key + ": unknown key");
}

template <typename V>
void read(const nlohmann::json& j, const std::string& section, const char* key, V& field) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(field);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(section + "." + key + ": " + e.what());
  }
}
}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(j, "", {"model", "train", "spec", "cv", "data", "localize"});
  RunConfig cfg;
  if (j.contains("model")) {
    nlohmann::json m = j.at("model");
    if (m.is_object() && !m.contains("preset")) m["preset"] = "desk";
    cfg.model = ModelConfig::from_json(m);
  }
  if (j.contains("train")) cfg.train = TrainConfig::from_json(j.at("train"));
  if (j.contains("spec")) cfg.spec = SyntheticSpec::from_json(j.at("spec"));
  if (j.contains("cv")) {
    const auto& cv = j.at("cv");
    reject_unknown(cv, "cv", {"folds", "scheme"});
    read(cv, "cv", "folds", cfg.folds);
    read(cv, "cv", "scheme", cfg.fold_scheme);
  }
  if (j.contains("data")) {
    const auto& data = j.at("data");
    reject_unknown(data, "data", {"allow_crop"});
    read(data, "data", "allow_crop", cfg.allow_crop);
  }
  if (j.contains("localize")) {
    const auto& loc = j.at("localize");
    reject_unknown(loc, "localize", {"layer", "top_fraction"});
    read(loc, "localize", "layer", cfg.cam_layer);
    read(loc, "localize", "top_fraction", cfg.top_fraction);
  }
  cfg.validate();
  return cfg;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

RunConfig RunConfig::load(const std::string& path) { return from_json(read_json_file(path)); }

}  // namespace volformer
