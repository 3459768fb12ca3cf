#include "deeplung/optim.hpp"

#include <string>

#include "deeplung/errors.hpp"

namespace deeplung {

Sgd::Sgd(std::vector<Tensor> params, double momentum, double weight_decay)
    : params_(std::move(params)) {
  state_.momentum = momentum;
  state_.weight_decay = weight_decay;
  for (const Tensor& p : params_) state_.velocity.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
}

void Sgd::step(double lr) { sgd_step(params_, state_, lr); }

void Sgd::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void sgd_step(std::span<Tensor> params, OptimState& state, double lr) {
  if (!(lr >= 0.0)) throw DomainError("learning rate must be nonnegative");
  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (const Tensor& p : params) state.velocity.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    auto w = p.data();
    auto g = p.grad();
    auto& v = state.velocity[k];
    if (v.size() != w.size()) throw DimensionError("velocity shape does not mirror parameter");
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = state.momentum * v[i] + g[i] + state.weight_decay * w[i];
      w[i] -= lr * v[i];
    }
  }
}

int default_total_epochs(ScheduleTask task) { return task == ScheduleTask::kDetector ? 150 : 1050; }

double lr_schedule(int epoch, ScheduleTask task, int total_epochs, double base_lr) {
  const int total = total_epochs > 0 ? total_epochs : default_total_epochs(task);
  if (epoch < 0 || epoch >= total) {
    throw ScheduleError("epoch " + std::to_string(epoch) + " outside schedule of " +
                        std::to_string(total) + " epochs");
  }
  if (2 * epoch < total) return base_lr;
  if (5 * epoch < 4 * total) return base_lr * 0.1;
  return base_lr * 0.01;
}

}  // namespace deeplung
