#include "volformer/model/cost.hpp"

#include <algorithm>

namespace volformer {

namespace {
constexpr std::size_t kBytesPerValue = 4;

struct Accumulator {
  CostReport report;

  void add(LayerCost layer) {
    report.flops += 2 * layer.macs;
    report.peak_activation_bytes = std::max(report.peak_activation_bytes, layer.activation_bytes);
    report.parameter_count += layer.parameters;
    report.layers.push_back(std::move(layer));
  }
};

std::size_t bytes(std::size_t values) { return values * kBytesPerValue; }

void add_conv_bn(Accumulator& acc, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                 std::size_t in_voxels, std::size_t out_voxels) {
  const double k3 = double(k * k * k);
  acc.add({name, double(cout) * double(cin) * k3 * double(out_voxels),
           bytes(cin * in_voxels + cout * out_voxels), cout * cin * k * k * k + 2 * cout});
}

void add_mlp(Accumulator& acc, const std::string& name, std::size_t in, const ModelConfig& cfg) {
  std::vector<std::size_t> widths{in};
  widths.insert(widths.end(), cfg.mlp_hidden.begin(), cfg.mlp_hidden.end());
  widths.push_back(cfg.mlp_out);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    acc.add({name + ".layer" + std::to_string(i + 1), double(widths[i]) * double(widths[i + 1]),
             bytes(widths[i] + widths[i + 1]), widths[i] * widths[i + 1] + widths[i + 1]});
  }
}

void add_trunk(Accumulator& acc, const std::string& prefix, const ModelConfig& cfg) {
  const auto chain = shape_chain(cfg);
  const std::size_t input_voxels = extent_voxels(cfg.input_extent);
  add_conv_bn(acc, prefix + ".stem", 1, cfg.stem_channels, cfg.stem_kernel, input_voxels,
              extent_voxels(chain[0].extent));
  std::size_t channels = cfg.stem_channels;
  std::size_t voxels = extent_voxels(chain[0].extent);
  for (std::size_t s = 0; s < cfg.stage_count(); ++s) {
    const std::string stage = prefix + ".stage" + std::to_string(s + 1);
    const std::size_t out = cfg.stage_channels[s];
    const std::size_t n = extent_voxels(chain[s + 1].extent);
    for (std::size_t b = 0; b < cfg.stage_blocks[s]; ++b) {
      const std::string block = stage + ".block" + std::to_string(b + 1);
      const std::size_t in_c = b == 0 ? channels : out;
      const std::size_t in_v = b == 0 ? voxels : n;
      add_conv_bn(acc, block + ".conv1", in_c, out, 3, in_v, n);
      add_conv_bn(acc, block + ".conv2", out, out, 3, n, n);
      if (b == 0 && (in_c != out || cfg.stage_strides[s] != 1)) {
        add_conv_bn(acc, block + ".shortcut", in_c, out, 1, in_v, n);
      }
    }
    const double dn = double(n), dc = double(out);
    if (cfg.attention_plan[s] == AttentionKind::shallow) {
      const std::size_t hs = cfg.sga_hidden, hc = cfg.sga_channel_ratio * out;
      acc.add({stage + ".sga", 2 * dn * double(hs) * dc + 2 * dn * dc * double(hc),
               bytes(2 * n * out + std::max(hs * out, hc * n)), 2 * n * hs + 2 * out * hc});
    } else if (cfg.attention_plan[s] == AttentionKind::deep) {
      const std::size_t ff = cfg.ff_ratio * out;
      acc.add({stage + ".dga", 3 * dn * dc * dc + 2 * dn * dn * dc + dn * dc * dc + 2 * dn * dc * double(ff),
               bytes(2 * n * out + 3 * n * out + cfg.heads * n * n + n * ff),
               n * out + 3 * out * out + out * out + out * ff + ff + ff * out + out});
    }
    channels = out;
    voxels = n;
  }
}
}  // namespace

CostReport estimate_cost(const ModelConfig& cfg) {
  cfg.validate();
  Accumulator acc;
  add_trunk(acc, "fmri", cfg);
  if (cfg.use_smri) add_trunk(acc, "smri", cfg);
  if (cfg.use_fc) add_mlp(acc, "fc", cfg.fc_input_dim, cfg);
  if (cfg.use_pheno) add_mlp(acc, "pheno", cfg.pheno_input_dim, cfg);
  const std::size_t width = cfg.fused_width();
  acc.add({"classifier", double(width) * double(cfg.class_count), bytes(width + cfg.class_count),
           width * cfg.class_count + cfg.class_count});
  return acc.report;
}

}  // namespace volformer
