#include "lcfb/optimizer.hpp"

#include <cmath>

#include "lcfb/error.hpp"

namespace lcfb {

void Adam::step(ParameterSet& params, const Gradients& grads) {
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw ContractError("gradient for unknown parameter '" + name + "'");
    if (params.at(name).shape() != g.shape()) {
      throw ShapeError("gradient shape " + shape_string(g.shape()) + " does not match parameter '" + name + "' " +
                       shape_string(params.at(name).shape()));
    }
  }

  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    auto [mit, m_new] = m_.try_emplace(name, p.shape(), 0.0);
    auto [vit, v_new] = v_.try_emplace(name, p.shape(), 0.0);
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    auto git = grads.find(name);
    const Tensor* g = git == grads.end() ? nullptr : &git->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

double clip_global_norm(Gradients& grads, double max_norm) {
  double total = 0.0;
  for (const auto& [_, g] : grads) total += g.squared_norm();
  const double norm = std::sqrt(total);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [_, g] : grads) {
      for (auto& v : g.values()) v *= factor;
    }
  }
  return norm;
}

}  // namespace lcfb
