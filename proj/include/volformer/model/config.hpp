#pragma once

#include <array>
#include <cstdint>
#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"

namespace volformer {

enum class AttentionKind { none, shallow, deep };

/// "S", "D" or "none".
std::string attention_tag(AttentionKind kind);
AttentionKind parse_attention_tag(const std::string& tag);
/// "S-S-D-D" style rendering of a plan.
std::string plan_str(const std::vector<AttentionKind>& plan);
std::vector<AttentionKind> parse_plan(const std::string& text);

using Extent3 = std::array<std::size_t, 3>;

std::string extent_str(const Extent3& e);
inline std::size_t extent_voxels(const Extent3& e) { return e[0] * e[1] * e[2]; }

struct ModelConfig {
  std::string preset = "full";
  Extent3 input_extent{64, 72, 64};
  bool use_data_norm = true;

  std::size_t stem_channels = 64;
  std::size_t stem_kernel = 7;
  std::size_t stem_stride = 2;

  std::vector<std::size_t> stage_channels{64, 128, 256, 512};
  std::vector<std::size_t> stage_blocks{2, 2, 2, 2};
  std::vector<std::size_t> stage_strides{1, 2, 2, 1};
  std::vector<AttentionKind> attention_plan{AttentionKind::shallow, AttentionKind::shallow, AttentionKind::deep,
                                            AttentionKind::deep};

  std::size_t sga_hidden = 256;         // token-mixing bottleneck h_s
  std::size_t sga_channel_ratio = 2;    // h_c = ratio · C
  std::size_t heads = 8;
  std::size_t ff_ratio = 4;             // feed-forward hidden = ratio · C
  std::size_t dga_token_budget = 4096;  // deep attention above this N logs a cost warning

  std::size_t class_count = 2;

  bool use_smri = false;
  bool use_fc = false;
  bool use_pheno = false;
  std::size_t fc_input_dim = 0;
  bool fc_upper_triangle = false;
  std::size_t pheno_input_dim = 0;
  std::vector<std::size_t> mlp_hidden{512, 256};
  std::size_t mlp_out = 128;

  std::uint64_t seed = 0;

  static ModelConfig full();
  /// Small widths and a 16×18×16 input so every property runs in seconds.
  static ModelConfig desk();
  static ModelConfig preset_named(const std::string& name);

  std::size_t stage_count() const { return stage_channels.size(); }
  bool is_fusion() const { return use_smri || use_fc || use_pheno; }
  /// Width of the pooled trunk feature.
  std::size_t trunk_width() const { return stage_channels.empty() ? stem_channels : stage_channels.back(); }
  std::size_t fused_width() const;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  nlohmann::json to_json() const;
  /// Starts from the preset named in `j` (default "full"), then applies every
  /// other key. Unknown keys are rejected.
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Spatial extents and channel count of one feature map in the trunk.
struct StageShape {
  std::string name;
  std::size_t channels = 0;
  Extent3 extent{};
  AttentionKind attention = AttentionKind::none;
};

/// Stem followed by one entry per stage; extents follow ceil(e / stride).
std::vector<StageShape> shape_chain(const ModelConfig& cfg);

}  // namespace volformer
