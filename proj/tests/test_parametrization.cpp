#include <cmath>
#include <numbers>

#include "cdd/error.hpp"
#include "cdd/parametrization.hpp"
#include "cdd/rng.hpp"
#include "doctest.h"

using namespace cdd;

namespace {

double cosine_time(double alpha) { return std::acos(alpha) * 2.0 / std::numbers::pi; }

const NoiseSchedule kSched;

}  // namespace

TEST_CASE("triple_from_v hand values") {
  const double t = cosine_time(0.6);
  auto tr = triple_from_v(kSched, Tensor::scalar(1.0), Tensor::scalar(-0.5), t);
  CHECK(tr.x_hat.item() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(tr.eps_hat.item() == doctest::Approx(0.5).epsilon(1e-12));
  auto t0 = triple_from_v(kSched, Tensor::scalar(1.3), Tensor::scalar(-0.2), 0.0);
  CHECK(t0.x_hat.item() == 1.3);
  CHECK(t0.eps_hat.item() == -0.2);
  CHECK_THROWS_AS(triple_from_v(kSched, Tensor({2}), Tensor({3}), 0.5), ShapeError);
}

TEST_CASE("signal and noise reconstruct the latent and the velocity") {
  Rng rng(4);
  std::uniform_real_distribution<double> ut(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double t = ut(rng);
    Tensor z = randn({4, 3}, rng), v = randn({4, 3}, rng);
    auto tr = triple_from_v(kSched, z, v, t);
    const auto [a, s] = kSched.eval(t);
    CHECK(max_abs_diff(axpby(a, tr.x_hat, s, tr.eps_hat), z) < 1e-12);
    CHECK(max_abs_diff(v_from_signal_noise(kSched, tr.x_hat, tr.eps_hat, t), v) < 1e-12);
    if (s > 1e-3) CHECK(max_abs_diff(v_from_signal(kSched, z, tr.x_hat, t), v) < 1e-9);
  }
  CHECK_THROWS_AS(v_from_signal(kSched, Tensor::scalar(1), Tensor::scalar(1), 0.0), DomainError);
}

TEST_CASE("ddim steps hand values") {
  const double t = cosine_time(0.6), s = cosine_time(0.8);
  auto a = ddim_step_eps(kSched, Tensor::scalar(1.0), Tensor::scalar(1.0), t, s);
  CHECK(a.item() == doctest::Approx(1.1).epsilon(1e-12));
  auto b = ddim_step_v(kSched, Tensor::scalar(1.0), Tensor::scalar(-0.5), t, s);
  CHECK(b.item() == doctest::Approx(1.1).epsilon(1e-12));
  auto c = ddim_step_eps(kSched, Tensor::scalar(1.0), Tensor::scalar(0.0), t, s);
  CHECK(c.item() == doctest::Approx(0.6 / 0.8).epsilon(1e-12));
}

TEST_CASE("ddim steps approach identity as s approaches t") {
  Rng rng(8);
  Tensor z = randn({2, 2}, rng), x = randn({2, 2}, rng);
  Tensor v = v_from_signal(kSched, z, x, 0.6);
  double prev = 1e9;
  for (double gap : {1e-2, 1e-4, 1e-6}) {
    double d = max_abs_diff(ddim_step_eps(kSched, z, x, 0.6, 0.6 - gap), z);
    CHECK(d < prev);
    prev = d;
    CHECK(max_abs_diff(ddim_step_v(kSched, z, v, 0.6, 0.6 - gap), z) < 10 * gap);
  }
  CHECK(prev < 1e-5);
}

TEST_CASE("ddim v-form lands on the clean point at s = 0") {
  const double t = 0.7;
  Tensor z = Tensor({3}, {0.4, -1.2, 2.0});
  Tensor x = scaled(z, 1.0 / kSched.alpha(t));
  Tensor v = v_from_signal(kSched, z, x, t);
  CHECK(max_abs_diff(ddim_step_v(kSched, z, v, t, 0.0), x) < 1e-12);
}

TEST_CASE("ddim step errors") {
  Tensor z = Tensor::scalar(1.0);
  CHECK_THROWS_AS(ddim_step_eps(kSched, z, z, 0.5, 0.5), DomainError);
  CHECK_THROWS_AS(ddim_step_eps(kSched, z, z, 0.4, 0.5), DomainError);
  CHECK_THROWS_AS(ddim_step_v(kSched, z, z, 0.5, 0.6), DomainError);
  CHECK_THROWS_AS(ddim_step_eps(kSched, z, z, 0.0, -0.1), DomainError);
}

TEST_CASE("signal and velocity DDIM forms agree") {
  Rng rng(21);
  std::uniform_real_distribution<double> ut(0.01, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double t = ut(rng);
    const double s = t * ut(rng) * 0.99;
    Tensor z = randn({3, 2}, rng), v = randn({3, 2}, rng);
    auto tr = triple_from_v(kSched, z, v, t);
    CHECK(max_abs_diff(ddim_step_eps(kSched, z, tr.x_hat, t, s), ddim_step_v(kSched, z, v, t, s)) < 1e-10);
  }
}

TEST_CASE("prev step") {
  const double s = cosine_time(0.8);
  auto z = prev_step(kSched, Tensor::scalar(0.9), Tensor::scalar(0.5), s);
  CHECK(z.item() == doctest::Approx(1.02).epsilon(1e-12));
  Rng rng(2);
  Tensor x = randn({3, 3}, rng), eps = randn({3, 3}, rng);
  CHECK(prev_step(kSched, x, eps, 0.0).bit_equal(x));
  CHECK(prev_step(kSched, x, eps, 0.3).bit_equal(forward_sample(kSched, x, 0.3, eps)));
  // With the true noise and a perfect signal, prev equals the signal-form DDIM update.
  Tensor zt = forward_sample(kSched, x, 0.7, eps);
  CHECK(max_abs_diff(prev_step(kSched, x, eps, 0.3), ddim_step_eps(kSched, zt, x, 0.7, 0.3)) < 1e-12);
  CHECK_THROWS_AS(prev_step(kSched, x, Tensor({3}), 0.3), ShapeError);
}

TEST_CASE("noise consistency transport preserves the signal prediction") {
  Rng rng(6);
  std::uniform_real_distribution<double> ut(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const double t = ut(rng);
    const double s = t * ut(rng);
    Tensor x = randn({2, 3}, rng), e = randn({2, 3}, rng);
    auto tr = noise_transport(kSched, x, e, t, s);
    CHECK(max_abs_diff(tr.x_hat_s_implied, x) < 1e-10);
    CHECK(max_abs_diff(tr.eps_hat_s_assumed, e) < 1e-10);
  }
  Tensor zero({4});
  auto z = noise_transport(kSched, zero, zero, 0.8, 0.2);
  for (double v : z.x_hat_s_implied.values()) CHECK(v == 0.0);
  Rng r2(1);
  Tensor x = randn({4}, r2), e = randn({4}, r2);
  CHECK(max_abs_diff(noise_transport(kSched, x, e, 0.4, 0.4).x_hat_s_implied, x) < 1e-12);
  CHECK_THROWS_AS(noise_transport(kSched, x, e, 1.0, 1.0), DomainError);
}

TEST_CASE("predictor names") {
  for (auto p : {Predictor::ddim_eps, Predictor::ddim_v, Predictor::prev}) CHECK(parse_predictor(to_string(p)) == p);
  CHECK_THROWS_AS(parse_predictor("euler"), ConfigError);
}
