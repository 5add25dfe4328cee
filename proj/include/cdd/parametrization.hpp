#pragma once

#include <string>
#include <string_view>

#include "cdd/schedule.hpp"
#include "cdd/tensor.hpp"

namespace cdd {

enum class Predictor { ddim_eps, ddim_v, prev };

Predictor parse_predictor(std::string_view s);
std::string to_string(Predictor p);

// Velocity v = alpha eps - sigma x and the signal/noise estimates it implies:
//   x_hat = alpha z - sigma v,  eps_hat = alpha v + sigma z.
struct PredictionTriple {
  Tensor v_hat;
  Tensor x_hat;
  Tensor eps_hat;
  double t = 0.0;
  Tensor z_t;
};

PredictionTriple triple_from_v(const NoiseSchedule& sched, const Tensor& z_t, const Tensor& v_hat, double t);

// Inverse map: v = alpha eps_hat - sigma x_hat.
Tensor v_from_signal_noise(const NoiseSchedule& sched, const Tensor& x_hat, const Tensor& eps_hat, double t);

// Velocity that reproduces a given signal estimate; needs sigma_t > 0.
Tensor v_from_signal(const NoiseSchedule& sched, const Tensor& z_t, const Tensor& x_hat, double t);

// DDIM in signal form: z_s = alpha_s x_hat + sigma_s (z_t - alpha_t x_hat) / sigma_t.
Tensor ddim_step_eps(const NoiseSchedule& sched, const Tensor& z_t, const Tensor& x_hat, double t, double s);

// DDIM in velocity form: z_s = alpha_s (alpha_t z_t - sigma_t v) + sigma_s (alpha_t v + sigma_t z_t).
// Finite at every endpoint, so it is the form used for the terminal step.
Tensor ddim_step_v(const NoiseSchedule& sched, const Tensor& z_t, const Tensor& v_hat, double t, double s);

// Partial real-value predictor: z_s = alpha_s x_hat + sigma_s eps, reusing the
// exact noise that produced z_t.
Tensor prev_step(const NoiseSchedule& sched, const Tensor& x_hat, const Tensor& eps_true, double s);

struct NoiseTransport {
  Tensor x_hat_s_implied;
  Tensor eps_hat_s_assumed;
};

// Moves a (signal, noise) prediction from time t to time s along the DDIM
// update, imposes equal noise predictions at both times, and reads off the
// signal prediction that the velocity model must then produce at s.
NoiseTransport noise_transport(const NoiseSchedule& sched, const Tensor& x_hat_t, const Tensor& eps_hat_t,
                                 double t, double s);

}  // namespace cdd
