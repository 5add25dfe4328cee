#include <cmath>
#include <numbers>

#include "cdd/error.hpp"
#include "cdd/oracle.hpp"
#include "cdd/rng.hpp"
#include "doctest.h"

using namespace cdd;
using namespace cdd::oracle;

namespace {
const NoiseSchedule kSched;
}

TEST_CASE("exact marginal") {
  auto g = make_gaussian(Tensor({2}, {1.5, -0.5}), 0.3);
  auto m0 = exact_marginal(g, kSched, 0.0);
  CHECK(m0.mean.bit_equal(g.mean));
  CHECK(m0.stddev == 0.3);
  auto m1 = exact_marginal(g, kSched, 1.0);
  CHECK(m1.mean[0] == 0.0);
  CHECK(m1.stddev == 1.0);
  auto unit = make_gaussian(Tensor({2}, 0.0), 1.0);
  for (double t : {0.1, 0.37, 0.8}) CHECK(exact_marginal(unit, kSched, t).stddev == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(make_gaussian(Tensor({2}), 0.0), DomainError);
}

TEST_CASE("optimal denoiser") {
  Rng rng(3);
  Tensor z = randn({5, 2}, rng);
  auto unit = make_gaussian(Tensor({2}, 0.0), 1.0);
  for (double t : {0.2, 0.6}) {
    CHECK(max_abs_diff(optimal_denoiser(unit, kSched, z, t), scaled(z, kSched.alpha(t))) < 1e-14);
  }
  auto g = make_gaussian(Tensor({2}, {2.0, -1.0}), 0.5);
  CHECK(max_abs_diff(optimal_denoiser(g, kSched, z, 0.0), z) < 1e-14);
  auto far = optimal_denoiser(g, kSched, z, 1.0);
  for (std::size_t r = 0; r < 5; ++r) {
    CHECK(far.at(r, 0) == doctest::Approx(2.0));
    CHECK(far.at(r, 1) == doctest::Approx(-1.0));
  }
  CHECK_THROWS_AS(optimal_denoiser(g, kSched, Tensor({2, 3}), 0.5), ShapeError);
}

TEST_CASE("exact score") {
  auto g = make_gaussian(Tensor({2}, {1.0, 2.0}), 0.7);
  auto m = exact_marginal(g, kSched, 0.4);
  Tensor at_mode({1, 2}, {m.mean[0], m.mean[1]});
  Tensor at_mode_score = exact_score(g, kSched, at_mode, 0.4);
  for (double v : at_mode_score.values()) CHECK(std::abs(v) < 1e-15);
  Rng rng(9);
  Tensor z = randn({4, 2}, rng);
  auto unit = make_gaussian(Tensor({2}, 0.0), 1.0);
  CHECK(max_abs_diff(exact_score(unit, kSched, z, 0.3), scaled(z, -1.0)) < 1e-14);
  // Tweedie: score = (alpha E[x|z] - z) / sigma^2.
  Tensor xs = optimal_denoiser(g, kSched, z, 0.5);
  CHECK(max_abs_diff(exact_score(g, kSched, z, 0.5), score_from_signal(kSched, z, xs, 0.5)) < 1e-12);
}

TEST_CASE("DDIM output scale") {
  CHECK(std::abs(exact_ddim_scale(1)) < 1e-15);
  CHECK(exact_ddim_scale(4) == doctest::Approx(0.728553).epsilon(1e-6));
  CHECK(exact_ddim_scale(64) > exact_ddim_scale(8));
  CHECK(exact_ddim_scale(8) > exact_ddim_scale(4));
  CHECK(exact_ddim_scale(1000) < 1.0);
  for (int k : {1, 2, 4, 8, 16}) CHECK(std::abs(ddim_scale(kSched, k) - exact_ddim_scale(k)) <= 1e-12);
  CHECK_THROWS_AS(exact_ddim_scale(0), DomainError);
  CHECK_THROWS_AS(ddim_scale(kSched, -1), DomainError);
}
