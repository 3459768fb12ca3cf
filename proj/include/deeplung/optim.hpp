#pragma once

#include <span>
#include <vector>

#include "deeplung/tensor.hpp"

namespace deeplung {

struct OptimState {
  std::vector<std::vector<double>> velocity;  // one buffer per parameter
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int epoch = 0;
};

/// SGD with heavy-ball momentum and L2 decay folded into the gradient:
///   v <- m*v + g + wd*w,  w <- w - lr*v
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, double momentum = 0.9, double weight_decay = 1e-4);

  void step(double lr);
  void zero_grad();
  const OptimState& state() const { return state_; }
  OptimState& state() { return state_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  OptimState state_;
};

/// Free-function form of Sgd::step over explicit parameter/gradient pairs.
void sgd_step(std::span<Tensor> params, OptimState& state, double lr);

enum class ScheduleTask { kDetector, kClassifier };

/// Paper defaults: 150 detector epochs, 1050 classifier epochs.
int default_total_epochs(ScheduleTask task);

/// Step schedule: base_lr before half the epochs, base_lr/10 until 80% of the
/// epochs, base_lr/100 after. With the default totals the breakpoints land on
/// 75/120 (detector) and 525/840 (classifier). Throws ScheduleError for
/// epoch >= total_epochs.
double lr_schedule(int epoch, ScheduleTask task, int total_epochs = 0, double base_lr = 0.01);

}  // namespace deeplung
