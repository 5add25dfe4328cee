#pragma once

#include <map>
#include <set>
#include <string>
#include <string_view>

#include "cdd/model.hpp"

namespace cdd {

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer(std::string_view s);
std::string to_string(OptimizerKind k);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Plain gradient descent, or Adam with bias correction. Parameters named in
// `frozen` or absent from `grads` are never touched.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamMap& params, const std::map<std::string, Tensor>& grads, const std::set<std::string>& frozen);
  const OptimizerConfig& config() const { return cfg_; }
  long steps_taken() const { return t_; }

 private:
  OptimizerConfig cfg_;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
  long t_ = 0;
};

}  // namespace cdd
