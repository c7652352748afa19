#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "lcfb/graph.hpp"

namespace lcfb {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias-corrected moments. Parameters missing from a gradient map
// are treated as having a zero gradient for that step.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(ParameterSet& params, const Gradients& grads);

  std::int64_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }
  const Tensor& first_moment(const std::string& name) const { return m_.at(name); }
  const Tensor& second_moment(const std::string& name) const { return v_.at(name); }

 private:
  AdamConfig config_;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
  std::int64_t t_ = 0;
};

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_global_norm(Gradients& grads, double max_norm);

}  // namespace lcfb
