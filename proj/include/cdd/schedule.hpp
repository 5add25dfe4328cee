#pragma once

#include <string>
#include <string_view>

#include "cdd/tensor.hpp"

namespace cdd {

enum class ScheduleKind { cosine, linear_alpha2 };

ScheduleKind parse_schedule_kind(std::string_view s);
std::string to_string(ScheduleKind k);

struct AlphaSigma {
  double alpha;
  double sigma;
};

struct DriftDiffusion {
  double f_coef;  // f(z, t) = f_coef * z
  double g_sq;    // g(t)^2
};

// Variance-preserving schedule on dimensionless time t in [0, 1]:
// alpha^2 + sigma^2 = 1, alpha(0) = 1, alpha(1) = 0.
//
//   cosine         alpha = cos(pi t / 2),  sigma = sin(pi t / 2)
//   linear_alpha2  alpha = sqrt(1 - t),    sigma = sqrt(t)
class NoiseSchedule {
 public:
  explicit NoiseSchedule(ScheduleKind kind = ScheduleKind::cosine) : kind_(kind) {}

  ScheduleKind kind() const { return kind_; }

  AlphaSigma eval(double t) const;
  double alpha(double t) const { return eval(t).alpha; }
  double sigma(double t) const { return eval(t).sigma; }

  // d log(alpha)/dt and d(sigma^2)/dt; both diverge or are undefined at t = 1.
  double dlog_alpha_dt(double t) const;
  double dsigma2_dt(double t) const;

 private:
  ScheduleKind kind_;
};

AlphaSigma eval_schedule(const NoiseSchedule& sched, double t);

// Probability-flow ODE coefficients: f = (d log alpha/dt) z and
// g^2 = d sigma^2/dt - 2 (d log alpha/dt) sigma^2.
DriftDiffusion drift_diffusion(const NoiseSchedule& sched, double t);

// z_t = alpha_t x + sigma_t eps.
Tensor forward_sample(const NoiseSchedule& sched, const Tensor& x, double t, const Tensor& eps);

// (alpha_t x_hat - z_t) / sigma_t^2; undefined at t = 0.
Tensor score_from_signal(const NoiseSchedule& sched, const Tensor& z_t, const Tensor& x_hat, double t);

}  // namespace cdd
