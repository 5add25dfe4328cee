#pragma once

#include "cdd/schedule.hpp"
#include "cdd/tensor.hpp"

// Closed-form ground truth for isotropic Gaussian data x ~ N(m, s^2 I) pushed
// through a variance-preserving schedule.
namespace cdd::oracle {

struct GaussianData {
  Tensor mean;  // one row; broadcast over batch rows
  double stddev = 1.0;
};

GaussianData make_gaussian(Tensor mean, double stddev);

struct Marginal {
  Tensor mean;
  double stddev;
};

// q(z_t) = N(alpha m, (alpha^2 s^2 + sigma^2) I).
Marginal exact_marginal(const GaussianData& g, const NoiseSchedule& sched, double t);

// E[x | z_t] = m + alpha s^2 / (alpha^2 s^2 + sigma^2) (z - alpha m), row-wise.
Tensor optimal_denoiser(const GaussianData& g, const NoiseSchedule& sched, const Tensor& z_t, double t);

// Gradient of log q(z_t): -(z - alpha m) / (alpha^2 s^2 + sigma^2).
Tensor exact_score(const GaussianData& g, const NoiseSchedule& sched, const Tensor& z_t, double t);

// Output scale of K uniform DDIM steps from t = 1 to t = 0 with the optimal
// denoiser for N(0, I) data: the product of per-step factors
// alpha_s alpha_t + sigma_s sigma_t, evaluated on `sched`.
double ddim_scale(const NoiseSchedule& sched, int steps);

// Closed form of ddim_scale for the cosine schedule: cos(pi / (2K))^K.
double exact_ddim_scale(int steps);

}  // namespace cdd::oracle
