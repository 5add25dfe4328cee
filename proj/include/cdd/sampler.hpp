#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "cdd/model.hpp"
#include "cdd/schedule.hpp"
#include "cdd/tensor.hpp"

namespace cdd {

// Velocity prediction v(z_t, t) for a whole batch at a shared time.
using VelocityFn = std::function<Tensor(const Tensor& z_t, double t)>;

enum class StepForm { velocity, signal };

struct SampleRun {
  int steps = 0;
  std::vector<double> times;     // K + 1 points, 1 down to 0
  std::vector<Tensor> z;         // K + 1 latents, z[0] is the initial noise
  std::vector<Tensor> x_hat;     // K signal estimates, one per visited time
  Tensor condition;
  std::uint64_t seed = 0;

  const Tensor& output() const { return z.back(); }
};

// Uniform grid 1, 1 - 1/K, ..., 0 with the endpoints exact.
std::vector<double> sampling_grid(int steps);

// Signal estimate at the current point of a run (velocity route).
Tensor record_xhat(const NoiseSchedule& sched, const Tensor& z_t, const Tensor& v_hat, double t);

// Deterministic K-step DDIM from z_1 = `noise`. StepForm::signal uses the
// signal-form update and is only defined while sigma_t > 0 at the source time.
SampleRun sample_with(const VelocityFn& velocity, const NoiseSchedule& sched, const Tensor& noise, int steps,
                      StepForm form = StepForm::velocity);

// Conditional sampling with a model; z_1 is standard normal drawn from `seed`,
// one row per condition row.
SampleRun sample(const AdaptedModel& model, const NoiseSchedule& sched, const Tensor& c, int steps,
                 std::uint64_t seed);

Tensor initial_noise(std::size_t rows, std::size_t dim, std::uint64_t seed);

}  // namespace cdd
