#include "cdd/sampler.hpp"

#include "cdd/error.hpp"
#include "cdd/parametrization.hpp"
#include "cdd/rng.hpp"

namespace cdd {

std::vector<double> sampling_grid(int steps) {
  if (steps < 1) throw DomainError("sampling needs at least one step, got " + std::to_string(steps));
  std::vector<double> t(static_cast<std::size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k) t[static_cast<std::size_t>(k)] = static_cast<double>(steps - k) / steps;
  return t;
}

Tensor record_xhat(const NoiseSchedule& sched, const Tensor& z_t, const Tensor& v_hat, double t) {
  require_same_shape(z_t, v_hat, "record_xhat");
  const auto [a, s] = sched.eval(t);
  return axpby(a, z_t, -s, v_hat);
}

SampleRun sample_with(const VelocityFn& velocity, const NoiseSchedule& sched, const Tensor& noise, int steps,
                      StepForm form) {
  SampleRun run;
  run.steps = steps;
  run.times = sampling_grid(steps);
  run.z.push_back(noise);
  for (int k = 0; k < steps; ++k) {
    const double t = run.times[static_cast<std::size_t>(k)];
    const double s = run.times[static_cast<std::size_t>(k) + 1];
    const Tensor& z = run.z.back();
    Tensor v = velocity(z, t);
    require_same_shape(z, v, "sampler velocity");
    Tensor x_hat = record_xhat(sched, z, v, t);
    Tensor next = form == StepForm::velocity ? ddim_step_v(sched, z, v, t, s) : ddim_step_eps(sched, z, x_hat, t, s);
    run.x_hat.push_back(std::move(x_hat));
    run.z.push_back(std::move(next));
  }
  return run;
}

Tensor initial_noise(std::size_t rows, std::size_t dim, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 21));
  return randn({rows, dim}, rng);
}

SampleRun sample(const AdaptedModel& model, const NoiseSchedule& sched, const Tensor& c, int steps,
                 std::uint64_t seed) {
  if (steps < 1) throw DomainError("sampling needs at least one step, got " + std::to_string(steps));
  const Tensor noise = initial_noise(c.rows(), model.arch.data_dim, seed);
  SampleRun run = sample_with(
      [&](const Tensor& z, double t) { return forward_cond(model, z, c, t); }, sched, noise, steps);
  run.condition = c;
  run.seed = seed;
  return run;
}

}  // namespace cdd
