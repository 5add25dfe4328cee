#include "cdd/schedule.hpp"

#include <cmath>
#include <numbers>

#include "cdd/error.hpp"

namespace cdd {

namespace {

void check_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("schedule time " + std::to_string(t) + " outside [0, 1]");
}

constexpr double kHalfPi = std::numbers::pi / 2.0;

}  // namespace

ScheduleKind parse_schedule_kind(std::string_view s) {
  if (s == "cosine") return ScheduleKind::cosine;
  if (s == "linear_alpha2") return ScheduleKind::linear_alpha2;
  throw ConfigError("unknown schedule '" + std::string(s) + "' (expected cosine|linear_alpha2)");
}

std::string to_string(ScheduleKind k) { return k == ScheduleKind::cosine ? "cosine" : "linear_alpha2"; }

AlphaSigma NoiseSchedule::eval(double t) const {
  check_time(t);
  // Exact endpoints; cos(pi/2) is 6e-17 in floating point.
  if (t == 0.0) return {1.0, 0.0};
  if (t == 1.0) return {0.0, 1.0};
  switch (kind_) {
    case ScheduleKind::cosine:
      return {std::cos(kHalfPi * t), std::sin(kHalfPi * t)};
    case ScheduleKind::linear_alpha2:
      return {std::sqrt(1.0 - t), std::sqrt(t)};
  }
  return {1.0, 0.0};
}

double NoiseSchedule::dlog_alpha_dt(double t) const {
  check_time(t);
  if (t == 1.0) throw DomainError("d log(alpha)/dt is singular at t = 1");
  switch (kind_) {
    case ScheduleKind::cosine:
      return -kHalfPi * std::tan(kHalfPi * t);
    case ScheduleKind::linear_alpha2:
      return -0.5 / (1.0 - t);
  }
  return 0.0;
}

double NoiseSchedule::dsigma2_dt(double t) const {
  check_time(t);
  switch (kind_) {
    case ScheduleKind::cosine:
      return kHalfPi * std::sin(std::numbers::pi * t);
    case ScheduleKind::linear_alpha2:
      return 1.0;
  }
  return 0.0;
}

AlphaSigma eval_schedule(const NoiseSchedule& sched, double t) { return sched.eval(t); }

DriftDiffusion drift_diffusion(const NoiseSchedule& sched, double t) {
  const double f = sched.dlog_alpha_dt(t);
  const double s = sched.sigma(t);
  return {f, sched.dsigma2_dt(t) - 2.0 * f * s * s};
}

Tensor forward_sample(const NoiseSchedule& sched, const Tensor& x, double t, const Tensor& eps) {
  require_same_shape(x, eps, "forward_sample");
  const auto [a, s] = sched.eval(t);
  return axpby(a, x, s, eps);
}

Tensor score_from_signal(const NoiseSchedule& sched, const Tensor& z_t, const Tensor& x_hat, double t) {
  require_same_shape(z_t, x_hat, "score_from_signal");
  const auto [a, s] = sched.eval(t);
  if (s == 0.0) throw DomainError("score_from_signal: sigma_t = 0 at t = " + std::to_string(t));
  const double inv = 1.0 / (s * s);
  Tensor out(z_t.shape());
  for (std::size_t i = 0; i < z_t.size(); ++i) out[i] = (a * x_hat[i] - z_t[i]) * inv;
  return out;
}

}  // namespace cdd
