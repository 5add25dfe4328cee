#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cdd/autodiff.hpp"
#include "cdd/data.hpp"
#include "cdd/model.hpp"
#include "cdd/optim.hpp"
#include "cdd/parametrization.hpp"
#include "cdd/rng.hpp"
#include "cdd/schedule.hpp"

namespace cdd {

enum class GuidanceKind { l2_data, smooth_l1, none };
enum class TimeMode { shared, per_item };
// Time passed to the target network at z_s.
enum class TargetTime { s, t };

GuidanceKind parse_guidance(std::string_view s);
TimeMode parse_time_mode(std::string_view s);
TargetTime parse_target_time(std::string_view s);
std::string to_string(GuidanceKind k);
std::string to_string(TimeMode m);
std::string to_string(TargetTime m);

struct DistillConfig {
  double delta_t = 1.0;         // grid units
  std::size_t time_grid = 64;   // t drawn from {delta_t .. N} / N
  double ema_gamma = 0.95;
  std::size_t batch_size = 128;
  std::size_t steps = 1000;
  Predictor predictor = Predictor::prev;
  GuidanceKind d_x = GuidanceKind::l2_data;
  double guidance_weight = 1.0;
  TimeMode time_mode = TimeMode::shared;
  FreezeMode freeze_mode = FreezeMode::full;
  TargetTime target_time = TargetTime::s;
  // Detach z_s from the online signal estimate under the prev predictor.
  bool zs_stopgrad = false;
  OptimizerConfig optimizer{};
  std::uint64_t seed = 0;

  void validate() const;
};

struct LossParts {
  double total = 0.0;
  double consistency = 0.0;
  double guidance = 0.0;
};

struct StepRecord {
  std::size_t step = 0;
  LossParts loss;
};

struct TrainerState {
  AdaptedModel online;
  AdaptedModel target;
  // Frozen copy of the starting model; source of the ddim_eps predictor.
  AdaptedModel teacher;
  NoiseSchedule schedule;
  Optimizer optimizer;
  Rng rng;
  std::size_t step_count = 0;
  std::vector<StepRecord> history;
};

// Target <- online, freeze mask applied, optimizer and time RNG seeded from cfg.
TrainerState make_trainer(const AdaptedModel& init, const NoiseSchedule& sched, const DistillConfig& cfg);

// Grid times t = k / N with k uniform in {ceil(delta_t) .. N}; shared mode
// draws one k for the whole batch.
std::vector<double> sample_batch_time(const DistillConfig& cfg, std::size_t batch_size, Rng& rng);

// l2_data: mean squared error; smooth_l1: mean Huber loss with threshold 1;
// none: 0.
double guidance_distance(GuidanceKind kind, const Tensor& x, const Tensor& x_hat);

// The loss graph for one batch: online parameters are inputs "online.<name>"
// (differentiable), target parameters are "target.<name>" (never
// differentiated). Outputs: loss, consistency, guidance, x_hat, eps_hat, z_s.
struct LossGraph {
  ad::Tape tape;
  std::map<std::string, Tensor> inputs;
  std::vector<std::string> online_inputs;
  std::vector<std::string> target_inputs;
};

LossGraph build_distill_graph(const TrainerState& state, const ConditionalBatch& batch, const DistillConfig& cfg);

LossParts distill_loss(const TrainerState& state, const ConditionalBatch& batch, const DistillConfig& cfg);

// One iteration of the trainer. Fills batch times when the batch has none.
void distill_step(TrainerState& state, ConditionalBatch batch, const DistillConfig& cfg);

// gamma * target + (1 - gamma) * online, elementwise.
ParamMap ema_update(const ParamMap& target, const ParamMap& online, double gamma);

// Runs cfg.steps iterations over `data`. `every` > 0 calls `on_eval` after
// every `every` steps and after the last one.
void run_distillation(TrainerState& state, const Dataset& data, const DistillConfig& cfg, std::size_t every = 0,
                      const std::function<void(const TrainerState&)>& on_eval = {});

}  // namespace cdd
