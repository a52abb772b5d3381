#include "odseg/optimizer.hpp"

#include <cmath>
#include <string>

#include "odseg/errors.hpp"

namespace odseg {

Nadam::Nadam(NadamConfig config) : config_(config) {
  if (!(config_.learning_rate > 0.0)) throw ParameterError("nadam: learning rate must be > 0");
  if (!(config_.beta1 >= 0.0 && config_.beta1 < 1.0) || !(config_.beta2 >= 0.0 && config_.beta2 < 1.0)) {
    throw ParameterError("nadam: betas must lie in [0,1)");
  }
  if (!(config_.epsilon > 0.0)) throw ParameterError("nadam: epsilon must be > 0");
}

void Nadam::set_learning_rate(double lr) {
  if (!(lr > 0.0)) throw ParameterError("nadam: learning rate must be > 0");
  config_.learning_rate = lr;
}

void Nadam::step(std::span<Tensor* const> params, std::span<const Tensor* const> grads) {
  if (params.size() != grads.size()) throw ShapeError("nadam: parameter and gradient counts differ");
  if (!m_.empty() && m_.size() != params.size()) throw ShapeError("nadam: parameter set changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i], *grads[i], "nadam");
    if (!m_.empty()) require_same_shape(m_[i], *params[i], "nadam state");
    if (!grads[i]->all_finite()) {
      throw NonFiniteError("nadam: non-finite gradient for parameter #" + std::to_string(i) + "; update rejected");
    }
  }
  if (m_.empty()) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (Tensor* p : params) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  }

  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2, eps = config_.epsilon, lr = config_.learning_rate;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(t_));

  for (std::size_t i = 0; i < params.size(); ++i) {
    float* theta = params[i]->data();
    const float* g = grads[i]->data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    const std::size_t n = params[i]->size();
    for (std::size_t j = 0; j < n; ++j) {
      const double gj = g[j];
      const double mj = b1 * m[j] + (1.0 - b1) * gj;
      const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double m_hat = mj / bias1;
      const double v_hat = vj / bias2;
      const double nesterov = b1 * m_hat + (1.0 - b1) * gj / bias1;
      theta[j] = static_cast<float>(theta[j] - lr * nesterov / (std::sqrt(v_hat) + eps));
    }
  }
}

}  // namespace odseg
