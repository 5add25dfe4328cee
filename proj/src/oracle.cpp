#include "cdd/oracle.hpp"

#include <cmath>
#include <numbers>

#include "cdd/error.hpp"

namespace cdd::oracle {

namespace {

void check_mean(const GaussianData& g, const Tensor& z) {
  if (g.mean.size() != z.cols()) {
    throw ShapeError("oracle: mean has " + std::to_string(g.mean.size()) + " entries, latent rows have " +
                     std::to_string(z.cols()));
  }
}

}  // namespace

GaussianData make_gaussian(Tensor mean, double stddev) {
  if (!(stddev > 0.0)) throw DomainError("GaussianData: stddev must be positive");
  return {std::move(mean), stddev};
}

Marginal exact_marginal(const GaussianData& g, const NoiseSchedule& sched, double t) {
  const auto [a, s] = sched.eval(t);
  return {scaled(g.mean, a), std::sqrt(a * a * g.stddev * g.stddev + s * s)};
}

Tensor optimal_denoiser(const GaussianData& g, const NoiseSchedule& sched, const Tensor& z_t, double t) {
  check_mean(g, z_t);
  const auto [a, s] = sched.eval(t);
  const double var = g.stddev * g.stddev;
  const double gain = a * var / (a * a * var + s * s);
  const std::size_t d = z_t.cols();
  Tensor out(z_t.shape());
  for (std::size_t i = 0; i < z_t.size(); ++i) {
    const double m = g.mean[i % d];
    out[i] = m + gain * (z_t[i] - a * m);
  }
  return out;
}

Tensor exact_score(const GaussianData& g, const NoiseSchedule& sched, const Tensor& z_t, double t) {
  check_mean(g, z_t);
  const auto [a, s] = sched.eval(t);
  const double var = a * a * g.stddev * g.stddev + s * s;
  const std::size_t d = z_t.cols();
  Tensor out(z_t.shape());
  for (std::size_t i = 0; i < z_t.size(); ++i) out[i] = -(z_t[i] - a * g.mean[i % d]) / var;
  return out;
}

double ddim_scale(const NoiseSchedule& sched, int steps) {
  if (steps < 1) throw DomainError("ddim_scale: steps must be >= 1");
  double scale = 1.0;
  for (int k = steps; k >= 1; --k) {
    const double t = static_cast<double>(k) / steps;
    const double s = static_cast<double>(k - 1) / steps;
    const auto [at, st] = sched.eval(t);
    const auto [as, ss] = sched.eval(s);
    scale *= as * at + ss * st;
  }
  return scale;
}

double exact_ddim_scale(int steps) {
  if (steps < 1) throw DomainError("exact_ddim_scale: steps must be >= 1");
  if (steps == 1) return 0.0;
  return std::pow(std::cos(std::numbers::pi / (2.0 * steps)), steps);
}

}  // namespace cdd::oracle
