#include "volformer/train/optimizer.hpp"

#include <cmath>
#include <set>

#include "volformer/core/error.hpp"
#include "volformer/core/log.hpp"

namespace volformer {

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError("train." + field + ": " + why); };
  if (epochs == 0) fail("epochs", "must be positive");
  if (batch_size == 0) fail("batch_size", "must be at least 1");
  if (!(lr > 0)) fail("lr", "must be positive");
  if (lr_drop_epoch == 0 || lr_drop_epoch > epochs) fail("lr_drop_epoch", "must lie in 1..epochs");
  if (!(lr_drop_factor > 0)) fail("lr_drop_factor", "must be positive");
  if (!(beta1 >= 0 && beta1 < 1)) fail("beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0 && beta2 < 1)) fail("beta2", "must lie in [0, 1)");
  if (!(adam_epsilon > 0)) fail("adam_epsilon", "must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},         {"batch_size", batch_size},       {"lr", lr},
          {"lr_drop_epoch", lr_drop_epoch}, {"lr_drop_factor", lr_drop_factor}, {"beta1", beta1},
          {"beta2", beta2},           {"adam_epsilon", adam_epsilon},   {"class_weighting", class_weighting},
          {"seed", seed},             {"deterministic", deterministic}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  const std::set<std::string> known = {"epochs", "batch_size", "lr",           "lr_drop_epoch",   "lr_drop_factor",
                                       "beta1",  "beta2",      "adam_epsilon", "class_weighting", "seed",
                                       "deterministic"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError("train." + key + ": unknown key");
  TrainConfig cfg;
  auto read = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("train.") + key + ": " + e.what());
    }
  };
  read("epochs", cfg.epochs);
  read("batch_size", cfg.batch_size);
  read("lr", cfg.lr);
  read("lr_drop_epoch", cfg.lr_drop_epoch);
  read("lr_drop_factor", cfg.lr_drop_factor);
  read("beta1", cfg.beta1);
  read("beta2", cfg.beta2);
  read("adam_epsilon", cfg.adam_epsilon);
  read("class_weighting", cfg.class_weighting);
  read("seed", cfg.seed);
  read("deterministic", cfg.deterministic);
  cfg.validate();
  return cfg;
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch == 0 || epoch > cfg.epochs) {
    throw ContractError("epoch " + std::to_string(epoch) + " outside 1.." + std::to_string(cfg.epochs));
  }
  return epoch < cfg.lr_drop_epoch ? cfg.lr : cfg.lr / cfg.lr_drop_factor;
}

template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::size_t t,
                 double lr, const TrainConfig& cfg) {
  if (t == 0) throw ContractError("Adam step count starts at 1");
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw DimensionError("Adam state sizes differ from the parameter size " + std::to_string(param.size()));
  }
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1 - std::pow(b1, double(t)), c2 = 1 - std::pow(b2, double(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = double(grad[i]);
    const double mi = b1 * double(m[i]) + (1 - b1) * g;
    const double vi = b2 * double(v[i]) + (1 - b2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    param[i] = static_cast<T>(double(param[i]) - lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.adam_epsilon));
  }
}

template <typename T>
Adam<T>::Adam(const ParamSet<T>& params, const TrainConfig& cfg) : params_(params.params), cfg_(cfg) {
  for (const auto& [name, t] : params_) {
    m_.emplace_back(t.numel(), T(0));
    v_.emplace_back(t.numel(), T(0));
  }
}

template <typename T>
bool Adam<T>::step(double lr) {
  for (const auto& [name, t] : params_) {
    if (!t.has_grad()) continue;
    for (T g : t.impl()->grad) {
      if (!std::isfinite(double(g))) {
        log_warning("non-finite gradient in " + name + "; skipping the update");
        return false;
      }
    }
  }
  ++t_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<T>& p = params_[i].second;
    if (!p.has_grad()) continue;
    const std::vector<T>& g = p.impl()->grad;
    adam_update<T>(p.mutable_data(), g, m_[i], v_[i], t_, lr, cfg_);
  }
  return true;
}

template void adam_update<float>(std::span<float>, std::span<const float>, std::span<float>, std::span<float>,
                                 std::size_t, double, const TrainConfig&);
template void adam_update<double>(std::span<double>, std::span<const double>, std::span<double>, std::span<double>,
                                  std::size_t, double, const TrainConfig&);
template class Adam<float>;
template class Adam<double>;

}  // namespace volformer
