#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "volformer/layers/params.hpp"

namespace volformer {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;  // volumes per batch
  double lr = 1e-4;
  std::size_t lr_drop_epoch = 8;
  double lr_drop_factor = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  bool class_weighting = false;  // inverse-frequency cross-entropy weights
  std::uint64_t seed = 0;
  bool deterministic = true;

  /// Throws ConfigError naming the field.
  void validate() const;
  nlohmann::json to_json() const;
  /// Starts from the defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Learning rate for a 1-based epoch: lr before lr_drop_epoch, lr / factor from it on.
double lr_at(std::size_t epoch, const TrainConfig& cfg);

/// One Adam update of `param` in place, with bias correction for step t ≥ 1.
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::size_t t,
                 double lr, const TrainConfig& cfg);

template <typename T>
class Adam {
 public:
  Adam(const ParamSet<T>& params, const TrainConfig& cfg);

  /// Applies one update from the accumulated gradients. Returns false and
  /// leaves every parameter and moment untouched when any gradient is
  /// non-finite.
  bool step(double lr);
  std::size_t steps() const { return t_; }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  std::vector<std::vector<T>> m_, v_;
  TrainConfig cfg_;
  std::size_t t_ = 0;
};

}  // namespace volformer
