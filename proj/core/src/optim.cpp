#include "gfm/optim.hpp"

#include <cmath>
#include <numbers>

#include "gfm/error.hpp"

namespace gfm {

double clip_grad_norm(std::vector<OptimSlot>& slots, double max_norm) {
  double sq = 0.0;
  for (const auto& s : slots)
    for (float g : s.var->grad) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const float factor = static_cast<float>(max_norm / (norm + 1e-6));
    for (auto& s : slots)
      for (float& g : s.var->grad) g *= factor;
  }
  return norm;
}

void AdamW::step(std::vector<OptimSlot>& slots, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (auto& s : slots) {
    auto& grad = s.var->grad;
    if (grad.empty()) continue;
    auto& value = s.var->value.data;
    auto& [m, v] = moments_[s.name];
    if (m.size() != value.size()) {
      m.assign(value.size(), 0.0f);
      v.assign(value.size(), 0.0f);
    }
    const double decay = s.decay ? options_.weight_decay : 0.0;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      m[i] = static_cast<float>(options_.beta1 * m[i] + (1.0 - options_.beta1) * g);
      v[i] = static_cast<float>(options_.beta2 * v[i] + (1.0 - options_.beta2) * g * g);
      const double mhat = m[i] / bc1, vhat = v[i] / bc2;
      double p = value[i];
      p -= lr * decay * p;
      p -= lr * mhat / (std::sqrt(vhat) + options_.eps);
      value[i] = static_cast<float>(p);
    }
  }
}

std::map<std::string, Tensor<float>> AdamW::export_state() const {
  std::map<std::string, Tensor<float>> out;
  for (const auto& [name, mv] : moments_) {
    out.emplace("optim.m." + name, Tensor<float>({mv.first.size()}, mv.first));
    out.emplace("optim.v." + name, Tensor<float>({mv.second.size()}, mv.second));
  }
  return out;
}

void AdamW::import_state(const std::map<std::string, Tensor<float>>& tensors, long steps) {
  moments_.clear();
  t_ = steps;
  const std::string m_prefix = "optim.m.", v_prefix = "optim.v.";
  for (const auto& [key, tensor] : tensors) {
    if (key.rfind(m_prefix, 0) != 0) continue;
    const std::string name = key.substr(m_prefix.size());
    auto it = tensors.find(v_prefix + name);
    check(it != tensors.end(), Errc::corrupt_container, "optimizer state lacks second moment for " + name);
    moments_[name] = {tensor.data, it->second.data};
  }
}

void Sgd::step(std::vector<OptimSlot>& slots, double lr) {
  for (auto& s : slots) {
    auto& grad = s.var->grad;
    if (grad.empty()) continue;
    auto& value = s.var->value.data;
    auto& vel = velocity_[s.name];
    if (vel.size() != value.size()) vel.assign(value.size(), 0.0f);
    const double decay = s.decay ? weight_decay_ : 0.0;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i] + decay * value[i];
      vel[i] = static_cast<float>(momentum_ * vel[i] + g);
      value[i] = static_cast<float>(value[i] - lr * vel[i]);
    }
  }
}

double cosine_lr(long step, long total_steps, long warmup_steps, double peak, double min_lr) {
  if (warmup_steps > 0 && step < warmup_steps)
    return peak * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  const long span = std::max(1L, total_steps - warmup_steps);
  const double progress = std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(span));
  return min_lr + (peak - min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double poly_lr(long step, long total_steps, double peak, double power) {
  const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(std::max(1L, total_steps)));
  return peak * std::pow(1.0 - progress, power);
}

}  // namespace gfm
