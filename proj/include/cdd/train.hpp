#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "cdd/data.hpp"
#include "cdd/model.hpp"
#include "cdd/optim.hpp"
#include "cdd/schedule.hpp"

// Standard velocity-prediction diffusion training: the unconditional
// pretraining that produces the backbone, and the conditional fine-tuning
// used as the many-step teacher baseline.
namespace cdd {

struct DiffusionTrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 128;
  OptimizerConfig optimizer{OptimizerKind::adam, 2e-3};
  std::uint64_t seed = 0;
};

// Mean over the batch of |v_hat - (alpha eps - sigma x)|^2 / D; returns the
// per-step losses. Conditional when `conditional` is set, in which case the
// model is an adapted model and freeze marks are honoured.
std::vector<double> train_velocity(AdaptedModel& model, const NoiseSchedule& sched, const Dataset& data,
                                   const DiffusionTrainConfig& cfg, bool conditional);

// Unconditional pretraining from random weights; returns the backbone.
ParamMap pretrain_backbone(const Arch& arch, const NoiseSchedule& sched, const Dataset& data,
                           const DiffusionTrainConfig& cfg, std::vector<double>* losses = nullptr);

}  // namespace cdd
