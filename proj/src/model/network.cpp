#include "volformer/model/network.hpp"

#include <map>

#include "volformer/core/log.hpp"
#include "volformer/layers/data_norm.hpp"

namespace volformer {

namespace {
enum StreamTag : std::uint64_t { kFmriTrunk = 1, kSmriTrunk = 2, kFcBranch = 3, kPhenoBranch = 4, kClassifier = 5 };

std::vector<std::size_t> mlp_widths(std::size_t in, const ModelConfig& cfg) {
  std::vector<std::size_t> widths{in};
  widths.insert(widths.end(), cfg.mlp_hidden.begin(), cfg.mlp_hidden.end());
  widths.push_back(cfg.mlp_out);
  return widths;
}

template <typename T>
void require_branch(const Tensor<T>& t, const char* branch, std::size_t batch) {
  if (!t.defined()) throw DataError(std::string("model has the ") + branch + " branch enabled but the batch has no " + branch + " input");
  if (t.size(0) != batch) {
    throw DataError(std::string(branch) + " input holds " + std::to_string(t.size(0)) + " samples, fMRI holds " +
                    std::to_string(batch));
  }
}
}  // namespace

// ---------------------------------------------------------------------- Trunk

template <typename T>
Trunk<T>::Trunk(const ModelConfig& cfg, Rng& rng)
    : input_extent_(cfg.input_extent), use_data_norm_(cfg.use_data_norm), width_(cfg.trunk_width()) {
  cfg.validate();
  stem_conv_ = Conv3d<T>(1, cfg.stem_channels, cfg.stem_kernel, cfg.stem_stride, rng);
  stem_bn_ = BatchNorm<T>(cfg.stem_channels);
  const auto chain = shape_chain(cfg);
  std::size_t channels = cfg.stem_channels;
  for (std::size_t s = 0; s < cfg.stage_count(); ++s) {
    Stage stage;
    const std::size_t out = cfg.stage_channels[s];
    for (std::size_t b = 0; b < cfg.stage_blocks[s]; ++b) {
      stage.blocks.emplace_back(b == 0 ? channels : out, out, b == 0 ? cfg.stage_strides[s] : 1, rng);
    }
    channels = out;
    const std::size_t tokens = extent_voxels(chain[s + 1].extent);
    if (cfg.attention_plan[s] == AttentionKind::shallow) {
      stage.sga.emplace(tokens, out, cfg.sga_hidden, cfg.sga_channel_ratio * out, rng);
    } else if (cfg.attention_plan[s] == AttentionKind::deep) {
      if (tokens > cfg.dga_token_budget) {
        log_warning("deep attention in stage " + std::to_string(s + 1) + " attends over " + std::to_string(tokens) +
                    " tokens (budget " + std::to_string(cfg.dga_token_budget) + "); the " +
                    std::to_string(tokens) + "x" + std::to_string(tokens) + " attention matrix dominates cost");
      }
      stage.dga.emplace(tokens, out, cfg.heads, cfg.ff_ratio * out, rng);
    }
    stages_.push_back(std::move(stage));
  }
}

template <typename T>
Tensor<T> Trunk<T>::forward(const Tensor<T>& volumes, NormMode mode, FeatureTrace<T>* trace) {
  if (volumes.dim() != 4) {
    throw DimensionError("trunk expects volumes [B×D×H×W], got " + shape_str(volumes.shape()));
  }
  const Extent3 got{volumes.size(1), volumes.size(2), volumes.size(3)};
  if (got != input_extent_) {
    throw DimensionError("volume extent " + extent_str(got) + " does not match the model input " +
                         extent_str(input_extent_) + "; pad the volume to the input extent first");
  }
  Tensor<T> x = use_data_norm_ ? data_norm(volumes) : volumes;
  x = reshape(x, {volumes.size(0), 1, got[0], got[1], got[2]});
  x = relu(stem_bn_.forward(stem_conv_.forward(x), mode));
  if (trace) trace->maps.emplace_back("stem", x);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    Stage& stage = stages_[s];
    for (auto& block : stage.blocks) x = block.forward(x, mode);
    if (trace && (stage.sga || stage.dga)) trace->maps.emplace_back("stage" + std::to_string(s + 1) + ".conv", x);
    if (stage.sga) x = stage.sga->forward(x);
    if (stage.dga) x = stage.dga->forward(x, trace ? &trace->attention_masks : nullptr);
    if (trace) trace->maps.emplace_back("stage" + std::to_string(s + 1), x);
  }
  return avg_pool_global(x);
}

template <typename T>
void Trunk<T>::collect(ParamSet<T>& set, const std::string& prefix) const {
  stem_conv_.collect(set, join_name(prefix, "stem.conv"));
  stem_bn_.collect(set, join_name(prefix, "stem.bn"));
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const std::string stage = join_name(prefix, "stage" + std::to_string(s + 1));
    for (std::size_t b = 0; b < stages_[s].blocks.size(); ++b) {
      stages_[s].blocks[b].collect(set, join_name(stage, "block" + std::to_string(b + 1)));
    }
    if (stages_[s].sga) stages_[s].sga->collect(set, join_name(stage, "sga"));
    if (stages_[s].dga) stages_[s].dga->collect(set, join_name(stage, "dga"));
  }
}

// ------------------------------------------------------------ VolumeClassifier

template <typename T>
VolumeClassifier<T>::VolumeClassifier(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng trunk_rng(derive_seed(cfg_.seed, {kFmriTrunk}));
  trunk_ = Trunk<T>(cfg_, trunk_rng);
  Rng head_rng(derive_seed(cfg_.seed, {kClassifier}));
  head_ = ClassifierHead<T>(trunk_.feature_width(), cfg_.class_count, head_rng);
}

template <typename T>
Tensor<T> VolumeClassifier<T>::logits(const Batch<T>& batch, NormMode mode, FeatureTrace<T>* trace) {
  if (!batch.fmri.defined()) throw DataError("batch has no fmri input");
  return head_.logits(trunk_.forward(batch.fmri, mode, trace));
}

template <typename T>
void VolumeClassifier<T>::collect(ParamSet<T>& set) const {
  trunk_.collect(set, "fmri");
  head_.collect(set, "classifier");
}

// ---------------------------------------------------------------- FusionModel

template <typename T>
FusionModel<T>::FusionModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng fmri_rng(derive_seed(cfg_.seed, {kFmriTrunk}));
  fmri_ = Trunk<T>(cfg_, fmri_rng);
  if (cfg_.use_smri) {
    Rng rng(derive_seed(cfg_.seed, {kSmriTrunk}));
    smri_.emplace(cfg_, rng);
  }
  if (cfg_.use_fc) {
    Rng rng(derive_seed(cfg_.seed, {kFcBranch}));
    fc_.emplace(mlp_widths(cfg_.fc_input_dim, cfg_), rng);
  }
  if (cfg_.use_pheno) {
    Rng rng(derive_seed(cfg_.seed, {kPhenoBranch}));
    pheno_.emplace(mlp_widths(cfg_.pheno_input_dim, cfg_), rng);
  }
  Rng head_rng(derive_seed(cfg_.seed, {kClassifier}));
  head_ = ClassifierHead<T>(cfg_.fused_width(), cfg_.class_count, head_rng);
}

template <typename T>
Tensor<T> FusionModel<T>::fused_features(const Batch<T>& batch, NormMode mode, FeatureTrace<T>* trace) {
  if (!batch.fmri.defined()) throw DataError("batch has no fmri input");
  const std::size_t b = batch.size();
  std::vector<Tensor<T>> parts{fmri_.forward(batch.fmri, mode, trace)};
  if (smri_) {
    require_branch(batch.smri, "smri", b);
    parts.push_back(smri_->forward(batch.smri, mode));
  }
  if (fc_) {
    require_branch(batch.fc, "fc", b);
    parts.push_back(fc_->forward(batch.fc));
  }
  if (pheno_) {
    require_branch(batch.pheno, "pheno", b);
    parts.push_back(pheno_->forward(batch.pheno));
  }
  return parts.size() == 1 ? parts.front() : concat(parts, 1);
}

template <typename T>
Tensor<T> FusionModel<T>::logits(const Batch<T>& batch, NormMode mode, FeatureTrace<T>* trace) {
  return head_.logits(fused_features(batch, mode, trace));
}

template <typename T>
void FusionModel<T>::collect(ParamSet<T>& set) const {
  fmri_.collect(set, "fmri");
  if (smri_) smri_->collect(set, "smri");
  if (fc_) fc_->collect(set, "fc");
  if (pheno_) pheno_->collect(set, "pheno");
  head_.collect(set, "classifier");
}

// ------------------------------------------------------------------- helpers

template <typename T>
std::unique_ptr<Network<T>> build_network(const ModelConfig& cfg) {
  if (cfg.is_fusion()) return std::make_unique<FusionModel<T>>(cfg);
  return std::make_unique<VolumeClassifier<T>>(cfg);
}

template <typename T>
Tensor<T> forward_volume(Network<T>& model, const Tensor<T>& volume) {
  if (volume.dim() != 3) throw DimensionError("forward_volume expects [D×H×W], got " + shape_str(volume.shape()));
  NoGradGuard no_grad;
  Batch<T> batch;
  batch.fmri = reshape(volume, {1, volume.size(0), volume.size(1), volume.size(2)});
  Tensor<T> probs = model.probabilities(batch, NormMode::eval);
  return reshape(probs, {probs.size(1)});
}

template <typename T>
void copy_state(const Network<T>& from, Network<T>& to, bool allow_missing) {
  ParamSet<T> src = from.state();
  ParamSet<T> dst = to.state();
  std::map<std::string, Tensor<T>> targets;
  for (auto& [name, t] : dst.params) targets.emplace(name, t);
  for (auto& [name, t] : dst.buffers) targets.emplace(name, t);
  auto copy = [&](const std::string& name, const Tensor<T>& value) {
    auto it = targets.find(name);
    if (it == targets.end()) {
      if (allow_missing) return;
      throw StateError("copy_state: target has no tensor named " + name);
    }
    if (it->second.shape() != value.shape()) {
      throw DimensionError("copy_state: " + name + " is " + shape_str(value.shape()) + " in the source and " +
                           shape_str(it->second.shape()) + " in the target");
    }
    auto out = it->second.mutable_data();
    std::copy(value.data().begin(), value.data().end(), out.begin());
  };
  for (auto& [name, t] : src.params) copy(name, t);
  for (auto& [name, t] : src.buffers) copy(name, t);
}

#define VOLFORMER_INSTANTIATE_NETWORK(T)                                                  \
  template class Trunk<T>;                                                                \
  template class VolumeClassifier<T>;                                                          \
  template class FusionModel<T>;                                                          \
  template std::unique_ptr<Network<T>> build_network<T>(const ModelConfig&);              \
  template Tensor<T> forward_volume<T>(Network<T>&, const Tensor<T>&);                    \
  template void copy_state<T>(const Network<T>&, Network<T>&, bool);

VOLFORMER_INSTANTIATE_NETWORK(float)
VOLFORMER_INSTANTIATE_NETWORK(double)

}  // namespace volformer
