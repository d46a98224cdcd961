#include "volformer/model/config.hpp"

#include <set>
#include <sstream>

#include "volformer/core/error.hpp"

namespace volformer {

std::string attention_tag(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::shallow: return "S";
    case AttentionKind::deep: return "D";
    case AttentionKind::none: return "none";
  }
  return "none";
}

AttentionKind parse_attention_tag(const std::string& tag) {
  if (tag == "S" || tag == "s" || tag == "sga") return AttentionKind::shallow;
  if (tag == "D" || tag == "d" || tag == "dga") return AttentionKind::deep;
  if (tag == "none" || tag == "-" || tag == "N" || tag.empty()) return AttentionKind::none;
  throw ConfigError("attention_plan: unknown tag '" + tag + "' (expected S, D or none)");
}

std::string plan_str(const std::vector<AttentionKind>& plan) {
  std::string out;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    if (i) out += "-";
    out += attention_tag(plan[i]);
  }
  return out;
}

std::vector<AttentionKind> parse_plan(const std::string& text) {
  std::vector<AttentionKind> plan;
  std::stringstream in(text);
  std::string tag;
  while (std::getline(in, tag, '-')) plan.push_back(parse_attention_tag(tag));
  return plan;
}

std::string extent_str(const Extent3& e) {
  return std::to_string(e[0]) + "x" + std::to_string(e[1]) + "x" + std::to_string(e[2]);
}

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig cfg;
  cfg.preset = "desk";
  cfg.input_extent = {16, 18, 16};
  cfg.stem_channels = 8;
  cfg.stage_channels = {8, 16, 32, 64};
  cfg.sga_hidden = 32;
  cfg.mlp_hidden = {64, 32};
  cfg.mlp_out = 32;
  return cfg;
}

ModelConfig ModelConfig::preset_named(const std::string& name) {
  if (name == "full") return full();
  if (name == "desk") return desk();
  throw ConfigError("preset: unknown value '" + name + "' (expected full or desk)");
}

std::size_t ModelConfig::fused_width() const {
  std::size_t width = trunk_width();
  if (use_smri) width += trunk_width();
  if (use_fc) width += mlp_out;
  if (use_pheno) width += mlp_out;
  return width;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError(field + ": " + why); };
  for (std::size_t e : input_extent)
    if (e == 0) fail("input_extent", "extents must be positive");
  if (stem_channels == 0) fail("stem_channels", "must be positive");
  if (stem_kernel == 0 || stem_kernel % 2 == 0) fail("stem_kernel", "must be odd");
  if (stem_stride == 0) fail("stem_stride", "must be positive");
  const std::size_t stages = stage_channels.size();
  if (stage_blocks.size() != stages) fail("stage_blocks", "length differs from stage_channels");
  if (stage_strides.size() != stages) fail("stage_strides", "length differs from stage_channels");
  if (attention_plan.size() != stages) {
    fail("attention_plan", "has " + std::to_string(attention_plan.size()) + " entries for " +
                               std::to_string(stages) + " stages");
  }
  for (std::size_t s = 0; s < stages; ++s) {
    if (stage_channels[s] == 0) fail("stage_channels", "must be positive");
    if (stage_blocks[s] == 0) fail("stage_blocks", "every stage needs at least one block");
    if (stage_strides[s] == 0) fail("stage_strides", "must be positive");
    if (attention_plan[s] == AttentionKind::deep && (heads == 0 || stage_channels[s] % heads != 0)) {
      fail("heads", std::to_string(heads) + " heads do not divide stage " + std::to_string(s + 1) + " width " +
                        std::to_string(stage_channels[s]));
    }
  }
  if (sga_hidden == 0) fail("sga_hidden", "must be positive");
  if (sga_channel_ratio == 0) fail("sga_channel_ratio", "must be positive");
  if (ff_ratio == 0) fail("ff_ratio", "must be positive");
  if (class_count < 2) fail("class_count", "at least two classes are required");
  if (use_fc && fc_input_dim == 0) fail("fc_input_dim", "required when use_fc is set");
  if (use_pheno && pheno_input_dim == 0) fail("pheno_input_dim", "required when use_pheno is set");
  if ((use_fc || use_pheno) && mlp_out == 0) fail("mlp_out", "must be positive");
  for (std::size_t w : mlp_hidden)
    if (w == 0) fail("mlp_hidden", "widths must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json plan = nlohmann::json::array();
  for (AttentionKind k : attention_plan) plan.push_back(attention_tag(k));
  return {
      {"preset", preset},
      {"input_extent", input_extent},
      {"use_data_norm", use_data_norm},
      {"stem_channels", stem_channels},
      {"stem_kernel", stem_kernel},
      {"stem_stride", stem_stride},
      {"stage_channels", stage_channels},
      {"stage_blocks", stage_blocks},
      {"stage_strides", stage_strides},
      {"attention_plan", plan},
      {"sga_hidden", sga_hidden},
      {"sga_channel_ratio", sga_channel_ratio},
      {"heads", heads},
      {"ff_ratio", ff_ratio},
      {"dga_token_budget", dga_token_budget},
      {"class_count", class_count},
      {"use_smri", use_smri},
      {"use_fc", use_fc},
      {"use_pheno", use_pheno},
      {"fc_input_dim", fc_input_dim},
      {"fc_upper_triangle", fc_upper_triangle},
      {"pheno_input_dim", pheno_input_dim},
      {"mlp_hidden", mlp_hidden},
      {"mlp_out", mlp_out},
      {"seed", seed},
  };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig cfg = preset_named(j.value("preset", std::string("full")));
  const std::set<std::string> known = {
      "preset",           "input_extent",   "use_data_norm", "stem_channels",     "stem_kernel",  "stem_stride",
      "stage_channels",   "stage_blocks",   "stage_strides", "attention_plan",    "sga_hidden",   "sga_channel_ratio",
      "heads",            "ff_ratio",       "dga_token_budget", "class_count",    "use_smri",     "use_fc",
      "use_pheno",        "fc_input_dim",   "fc_upper_triangle", "pheno_input_dim", "mlp_hidden", "mlp_out",
      "seed"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError("model." + key + ": unknown key");

  auto read = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("model.") + key + ": " + e.what());
    }
  };
  read("input_extent", cfg.input_extent);
  read("use_data_norm", cfg.use_data_norm);
  read("stem_channels", cfg.stem_channels);
  read("stem_kernel", cfg.stem_kernel);
  read("stem_stride", cfg.stem_stride);
  read("stage_channels", cfg.stage_channels);
  read("stage_blocks", cfg.stage_blocks);
  read("stage_strides", cfg.stage_strides);
  if (j.contains("attention_plan")) {
    const auto& plan = j.at("attention_plan");
    if (plan.is_string()) {
      cfg.attention_plan = parse_plan(plan.get<std::string>());
    } else if (plan.is_array()) {
      cfg.attention_plan.clear();
      for (const auto& tag : plan) {
        if (!tag.is_string()) throw ConfigError("model.attention_plan: entries must be strings");
        cfg.attention_plan.push_back(parse_attention_tag(tag.get<std::string>()));
      }
    } else {
      throw ConfigError("model.attention_plan: expected a string or an array of tags");
    }
  }
  read("sga_hidden", cfg.sga_hidden);
  read("sga_channel_ratio", cfg.sga_channel_ratio);
  read("heads", cfg.heads);
  read("ff_ratio", cfg.ff_ratio);
  read("dga_token_budget", cfg.dga_token_budget);
  read("class_count", cfg.class_count);
  read("use_smri", cfg.use_smri);
  read("use_fc", cfg.use_fc);
  read("use_pheno", cfg.use_pheno);
  read("fc_input_dim", cfg.fc_input_dim);
  read("fc_upper_triangle", cfg.fc_upper_triangle);
  read("pheno_input_dim", cfg.pheno_input_dim);
  read("mlp_hidden", cfg.mlp_hidden);
  read("mlp_out", cfg.mlp_out);
  read("seed", cfg.seed);
  cfg.validate();
  return cfg;
}

std::vector<StageShape> shape_chain(const ModelConfig& cfg) {
  auto down = [](Extent3 e, std::size_t s) {
    for (auto& v : e) v = (v + s - 1) / s;
    return e;
  };
  std::vector<StageShape> chain;
  Extent3 extent = down(cfg.input_extent, cfg.stem_stride);
  chain.push_back({"stem", cfg.stem_channels, extent, AttentionKind::none});
  for (std::size_t s = 0; s < cfg.stage_count(); ++s) {
    extent = down(extent, cfg.stage_strides[s]);
    chain.push_back({"stage" + std::to_string(s + 1), cfg.stage_channels[s], extent, cfg.attention_plan[s]});
  }
  return chain;
}

}  // namespace volformer
