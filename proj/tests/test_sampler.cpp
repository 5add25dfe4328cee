#include <cmath>

#include "cdd/error.hpp"
#include "cdd/model.hpp"
#include "cdd/oracle.hpp"
#include "cdd/parametrization.hpp"
#include "cdd/sampler.hpp"
#include "doctest.h"

using namespace cdd;

namespace {

const NoiseSchedule kSched;

// Velocity of the exact denoiser for N(0, I) data.
VelocityFn unit_gaussian_velocity() {
  auto g = oracle::make_gaussian(Tensor({3}, 0.0), 1.0);
  return [g](const Tensor& z, double t) {
    return v_from_signal(kSched, z, oracle::optimal_denoiser(g, kSched, z, t), t);
  };
}

}  // namespace

TEST_CASE("sampling grid") {
  auto g = sampling_grid(4);
  REQUIRE(g.size() == 5);
  CHECK(g.front() == 1.0);
  CHECK(g.back() == 0.0);
  CHECK(g[2] == 0.5);
  CHECK_THROWS_AS(sampling_grid(0), DomainError);
}

TEST_CASE("one step with the exact denoiser collapses to zero") {
  Tensor noise = initial_noise(50, 3, 1);
  auto run = sample_with(unit_gaussian_velocity(), kSched, noise, 1);
  for (double v : run.output().values()) CHECK(std::abs(v) < 1e-15);
}

TEST_CASE("four steps scale the noise by cos(pi/8)^4") {
  Tensor noise = initial_noise(50, 3, 2);
  for (auto form : {StepForm::velocity, StepForm::signal}) {
    auto run = sample_with(unit_gaussian_velocity(), kSched, noise, 4, form);
    CHECK(max_abs_diff(run.output(), scaled(noise, oracle::exact_ddim_scale(4))) < 1e-12);
    CHECK(std::abs(oracle::exact_ddim_scale(4) - 0.728553) < 5e-7);
  }
}

TEST_CASE("run layout") {
  Tensor noise = initial_noise(5, 3, 3);
  auto run = sample_with(unit_gaussian_velocity(), kSched, noise, 3);
  CHECK(run.steps == 3);
  CHECK(run.times.size() == 4);
  CHECK(run.z.size() == 4);
  CHECK(run.x_hat.size() == 3);
  CHECK(run.z.front().bit_equal(noise));
  // The last signal estimate from the exact denoiser at t = 1/3 is alpha z.
  CHECK(max_abs_diff(run.x_hat.back(), scaled(run.z[2], kSched.alpha(1.0 / 3.0))) < 1e-12);
  CHECK_THROWS_AS(sample_with(unit_gaussian_velocity(), kSched, noise, 0), DomainError);
}

TEST_CASE("record_xhat") {
  Tensor z({2}, {1.0, -2.0}), v({2}, {0.5, 0.25});
  Tensor x = record_xhat(kSched, z, v, 0.4);
  auto tr = triple_from_v(kSched, z, v, 0.4);
  CHECK(x.bit_equal(tr.x_hat));
}

TEST_CASE("model sampling is deterministic given the seed") {
  Arch arch;
  arch.data_dim = 2;
  arch.cond_dim = 3;
  arch.hidden = 8;
  arch.layers = 2;
  arch.encoder_layers = 1;
  arch.time_freqs = 2;
  AdaptedModel m = init_adapted(arch, 4, InitMode::random);
  m.set_gate_mu(0.5);
  Tensor c({4, 3}, 0.25);
  auto a = sample(m, kSched, c, 4, 7);
  auto b = sample(m, kSched, c, 4, 7);
  for (std::size_t i = 0; i < a.z.size(); ++i) CHECK(a.z[i].bit_equal(b.z[i]));
  for (std::size_t i = 0; i < a.x_hat.size(); ++i) CHECK(a.x_hat[i].bit_equal(b.x_hat[i]));
  CHECK(a.z.front().bit_equal(initial_noise(4, 2, 7)));
  auto other = sample(m, kSched, c, 4, 8);
  CHECK_FALSE(other.output().bit_equal(a.output()));
  CHECK_THROWS_AS(sample(m, kSched, c, 0, 7), DomainError);
}
