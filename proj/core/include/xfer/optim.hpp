#pragma once

#include <cstddef>
#include <vector>

#include "xfer/model.hpp"
#include "xfer/tensor.hpp"

namespace xfer {

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Length of the linear decay; the learning rate is 0 from here on.
  std::size_t total_steps = 1;
};

/// Adam with bias correction and linear decay to zero, no warmup, no clipping.
///
/// Update number t (1-based) uses lr * max(0, 1 - (t - 1) / total_steps): the
/// first update runs at the full rate and the rate reaches 0 once total_steps
/// updates have been applied.
class Adam {
 public:
  Adam(const Parameters& params, AdamConfig config);

  /// Learning rate used by the next update.
  double current_lr() const noexcept { return lr_at(step_); }
  double lr_at(std::size_t completed) const noexcept;
  std::size_t steps() const noexcept { return step_; }
  const AdamConfig& config() const noexcept { return config_; }

  /// One update. grads[i] pairs with params.entries()[i]. A non-finite
  /// gradient aborts with a divergence error before anything is modified.
  void step(Parameters& params, const std::vector<Tensor>& grads);

  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }

 private:
  AdamConfig config_;
  std::size_t step_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace xfer
