#include "xfer/optim.hpp"

#include <algorithm>
#include <cmath>

#include "xfer/error.hpp"

namespace xfer {

Adam::Adam(const Parameters& params, AdamConfig config) : config_(config) {
  require(config_.lr > 0, ErrorKind::kConfig, "learning rate must be positive");
  require(config_.total_steps >= 1, ErrorKind::kConfig, "total_steps must be >= 1");
  require(config_.beta1 >= 0 && config_.beta1 < 1 && config_.beta2 >= 0 && config_.beta2 < 1, ErrorKind::kConfig,
          "Adam betas must lie in [0, 1)");
  require(config_.eps > 0, ErrorKind::kConfig, "Adam eps must be positive");
  for (const auto& e : params.entries()) {
    m_.emplace_back(e.value.shape(), 0.0);
    v_.emplace_back(e.value.shape(), 0.0);
  }
}

double Adam::lr_at(std::size_t completed) const noexcept {
  const double frac = static_cast<double>(completed) / static_cast<double>(config_.total_steps);
  return config_.lr * std::max(0.0, 1.0 - frac);
}

void Adam::step(Parameters& params, const std::vector<Tensor>& grads) {
  auto& entries = params.entries();
  require(grads.size() == entries.size() && m_.size() == entries.size(), ErrorKind::kDimension,
          "gradient count does not match parameter count");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    require(grads[i].shape() == entries[i].value.shape(), ErrorKind::kDimension,
            "gradient shape mismatch for " + entries[i].name);
    require(grads[i].all_finite(), ErrorKind::kDivergence,
            "non-finite gradient for " + entries[i].name + " at update " + std::to_string(step_ + 1));
  }
  const double lr = lr_at(step_);
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto p = entries[i].value.data();
    auto g = grads[i].data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      if (lr == 0.0) continue;
      const double mh = m[j] / c1;
      const double vh = v[j] / c2;
      p[j] -= lr * mh / (std::sqrt(vh) + config_.eps);
    }
  }
}

}  // namespace xfer
