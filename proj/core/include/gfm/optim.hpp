#pragma once

#include <map>
#include <string>
#include <vector>

#include "gfm/params.hpp"

namespace gfm {

// One optimised tensor; parameters whose gradient buffer is empty after the
// backward pass (not reached from the loss) are skipped entirely.
struct OptimSlot {
  std::string name;
  ag::Var<float> var;
  bool decay = true;
};

inline void collect_slots(std::vector<OptimSlot>& slots, ParamSet<float>& params, const std::string& prefix) {
  for (auto& p : params.items())
    if (p.var->requires_grad) slots.push_back({prefix + p.name, p.var, p.decay});
}

// Scales gradients so their global L2 norm is at most max_norm (<= 0 disables).
// Returns the norm before clipping.
double clip_grad_norm(std::vector<OptimSlot>& slots, double max_norm);

// Decoupled weight decay Adam.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
  };

  AdamW() = default;
  explicit AdamW(Options options) : options_(options) {}

  void step(std::vector<OptimSlot>& slots, double lr);
  long steps() const { return t_; }

  // Moments keyed by slot name, for checkpointing.
  std::map<std::string, Tensor<float>> export_state() const;
  void import_state(const std::map<std::string, Tensor<float>>& tensors, long steps);

 private:
  Options options_;
  long t_ = 0;
  std::map<std::string, std::pair<std::vector<float>, std::vector<float>>> moments_;
};

// SGD with heavy-ball momentum and coupled weight decay.
class Sgd {
 public:
  Sgd(double momentum = 0.9, double weight_decay = 1e-4) : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(std::vector<OptimSlot>& slots, double lr);

 private:
  double momentum_, weight_decay_;
  std::map<std::string, std::vector<float>> velocity_;
};

// Linear warmup to `peak` over warmup_steps, then cosine decay to min_lr at total_steps.
double cosine_lr(long step, long total_steps, long warmup_steps, double peak, double min_lr);
// peak * (1 - step / total)^power.
double poly_lr(long step, long total_steps, double peak, double power = 0.9);

}  // namespace gfm
