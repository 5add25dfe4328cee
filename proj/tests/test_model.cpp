#include <cmath>

#include "cdd/error.hpp"
#include "cdd/model.hpp"
#include "cdd/rng.hpp"
#include "doctest.h"

using namespace cdd;

namespace {

Arch small_arch() {
  Arch a;
  a.data_dim = 3;
  a.cond_dim = 2;
  a.hidden = 16;
  a.layers = 3;
  a.encoder_layers = 2;
  a.time_freqs = 4;
  return a;
}

}  // namespace

TEST_CASE("zero weights give zero velocity") {
  Arch arch = small_arch();
  AdaptedModel m = init_adapted(arch, 1, InitMode::random);
  for (auto& [_, t] : m.params) t = Tensor(t.shape(), 0.0);
  Rng rng(2);
  Tensor v = forward_uncond(m, randn({4, 3}, rng), 0.3);
  for (double x : v.values()) CHECK(x == 0.0);
}

TEST_CASE("forward is deterministic") {
  Arch arch = small_arch();
  AdaptedModel a = init_adapted(arch, 5, InitMode::random);
  AdaptedModel b = init_adapted(arch, 5, InitMode::random);
  Rng r1(3), r2(3);
  Tensor z1 = randn({4, 3}, r1), z2 = randn({4, 3}, r2);
  CHECK(forward_uncond(a, z1, 0.3).bit_equal(forward_uncond(b, z2, 0.3)));
}

TEST_CASE("zero gate reproduces the unconditional network") {
  Arch arch = small_arch();
  ParamMap backbone = init_backbone(arch, 11);
  AdaptedModel m = init_adapted(arch, 12, InitMode::pretrained, &backbone);
  CHECK(m.gate_mu() == 0.0);
  Rng rng(4);
  Tensor z = randn({6, 3}, rng);
  Tensor c = randn({6, 2}, rng);
  Tensor u = forward_uncond(m, z, 0.45);
  CHECK(forward_cond(m, z, c, 0.45).bit_equal(u));
  CHECK(forward_cond(m, z, randn({6, 2}, rng), 0.45).bit_equal(u));
  // The backbone is the checkpoint verbatim.
  for (const auto& [name, t] : backbone) CHECK(m.params.at(name).bit_equal(t));
}

TEST_CASE("adapter encoder starts as a copy of the backbone encoder") {
  Arch arch = small_arch();
  AdaptedModel m = init_adapted(arch, 3, InitMode::random);
  std::size_t copies = 0;
  for (const auto& name : m.adapter_names()) {
    if (name.find("gate_mu") != std::string::npos || name.find("proj.") != std::string::npos) continue;
    const std::string src = std::string(kBackbonePrefix) + name.substr(kAdapterPrefix.size());
    CHECK(m.params.at(name).bit_equal(m.params.at(src)));
    ++copies;
  }
  CHECK(copies == 2 * arch.encoder_layers);
}

TEST_CASE("saturated gate with a full encoder ignores the latent") {
  Arch arch = small_arch();
  arch.encoder_layers = arch.layers;
  AdaptedModel m = init_adapted(arch, 8, InitMode::random);
  m.set_gate_mu(1.0);
  Rng rng(6);
  Tensor c = randn({3, 2}, rng);
  Tensor a = forward_cond(m, randn({3, 3}, rng), c, 0.2);
  Tensor b = forward_cond(m, randn({3, 3}, rng), c, 0.9);
  CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("different seeds give different random models") {
  Arch arch = small_arch();
  AdaptedModel a = init_adapted(arch, 1, InitMode::random);
  AdaptedModel b = init_adapted(arch, 2, InitMode::random);
  bool differ = false;
  for (const auto& [name, t] : a.params)
    if (!t.bit_equal(b.params.at(name))) differ = true;
  CHECK(differ);
}

TEST_CASE("incompatible checkpoint lists the mismatches") {
  Arch arch = small_arch();
  ParamMap backbone = init_backbone(arch, 1);
  auto it = backbone.begin();
  const std::string first = it->first;
  backbone.erase(it);
  Arch wider = arch;
  wider.hidden = 32;
  ParamMap other = init_backbone(wider, 1);
  try {
    init_adapted(arch, 0, InitMode::pretrained, &backbone);
    FAIL("expected an error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find(first) != std::string::npos);
  }
  try {
    init_adapted(arch, 0, InitMode::pretrained, &other);
    FAIL("expected an error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("expected") != std::string::npos);
  }
  CHECK_THROWS(init_adapted(arch, 0, InitMode::pretrained, nullptr));
}

TEST_CASE("freeze modes") {
  Arch arch = small_arch();
  AdaptedModel m = init_adapted(arch, 1, InitMode::random);
  AdaptedModel full = apply_freeze(m, FreezeMode::full);
  CHECK(full.frozen.empty());
  CHECK(full.trainable_count() == full.parameter_count());
  AdaptedModel ad = apply_freeze(m, FreezeMode::adapter_only);
  for (const auto& name : ad.backbone_names()) CHECK(ad.frozen.count(name) == 1);
  for (const auto& name : ad.adapter_names()) CHECK(ad.frozen.count(name) == 0);
  CHECK(ad.trainable_count() < ad.parameter_count());
  CHECK(apply_freeze(ad, FreezeMode::full).frozen.empty());
}

TEST_CASE("per-level gates") {
  Arch arch = small_arch();
  arch.per_level_gate = true;
  AdaptedModel m = init_adapted(arch, 1, InitMode::random);
  CHECK(m.params.count(gate_name(arch, 0)) == 1);
  CHECK(m.params.count(gate_name(arch, 1)) == 1);
  m.set_gate_mu(0.25);
  CHECK(m.gate_mu(1) == 0.25);
}

TEST_CASE("input shape errors") {
  Arch arch = small_arch();
  AdaptedModel m = init_adapted(arch, 1, InitMode::random);
  CHECK_THROWS_AS(forward_uncond(m, Tensor({4, 2}), 0.5), ShapeError);
  CHECK_THROWS_AS(forward_cond(m, Tensor({4, 3}), Tensor({4, 3}), 0.5), ShapeError);
  CHECK_THROWS_AS(forward_cond(m, Tensor({4, 3}), Tensor({3, 2}), 0.5), ShapeError);
  std::vector<double> ts = {0.1, 0.2};
  CHECK_THROWS_AS(forward_uncond(m, Tensor({4, 3}), ts), ShapeError);
}

TEST_CASE("arch validation and names") {
  Arch a = small_arch();
  a.encoder_layers = 4;
  CHECK_THROWS_AS(a.validate(), ConfigError);
  a.encoder_layers = 0;
  CHECK_THROWS_AS(a.validate(), ConfigError);
  CHECK(parse_activation("tanh") == Activation::tanh);
  CHECK(parse_freeze_mode("adapter_only") == FreezeMode::adapter_only);
  CHECK(parse_init_mode("random") == InitMode::random);
  CHECK_THROWS_AS(parse_activation("gelu"), ConfigError);
}

TEST_CASE("time embedding columns") {
  std::vector<double> t = {0.0, 0.5};
  Tensor e = time_embedding(t, 4);
  CHECK(e.rows() == 2);
  CHECK(e.cols() == 8);
  CHECK(e.at(0, 0) == 0.0);
  CHECK(e.at(0, 4) == 1.0);
  CHECK(e.at(1, 0) == doctest::Approx(std::sin(0.5)));
  CHECK(e.at(1, 7) == doctest::Approx(std::cos(64.0 * 0.5)));
}
