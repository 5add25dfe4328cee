#include <filesystem>
#include <fstream>
#include <string>

#include "cdd/config.hpp"
#include "cdd/error.hpp"
#include "doctest.h"

using namespace cdd;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config_text(text, "cfg");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("minimal file takes the documented defaults") {
  RunConfig c = parse_config_text("task = toy_sr\n");
  RunConfig d;
  CHECK(c.task == TaskKind::toy_sr);
  CHECK(c.distill.ema_gamma == d.distill.ema_gamma);
  CHECK(c.distill.predictor == Predictor::prev);
  CHECK(c.distill.time_grid == 64);
  CHECK(c.distill.guidance_weight == 1.0);
  CHECK(c.distill.optimizer.kind == OptimizerKind::sgd);
  CHECK(c.schedule == ScheduleKind::cosine);
  auto defaults = config_defaults();
  CHECK(defaults.at("gamma") == "0.94999999999999996");
  CHECK(defaults.count("task") == 1);
}

TEST_CASE("comments and whitespace") {
  RunConfig c = parse_config_text("# header\n  task=mixture   # trailing\n\nsteps =  12\n");
  CHECK(c.task == TaskKind::mixture);
  CHECK(c.distill.steps == 12);
}

TEST_CASE("range errors name the key and line") {
  std::string e = error_of("task = mixture\ngamma = 1.5\n");
  CHECK(e.find("gamma") != std::string::npos);
  CHECK(e.find("cfg:2") != std::string::npos);
  CHECK(!error_of("task = mixture\nlearning_rate = -1\n").empty());
  CHECK(!error_of("task = mixture\ndelta_t = 0\n").empty());
}

TEST_CASE("duplicate keys name both lines") {
  std::string e = error_of("task = mixture\nsteps = 3\n# x\nsteps = 4\n");
  CHECK(e.find("steps") != std::string::npos);
  CHECK(e.find("line 2") != std::string::npos);
  CHECK(e.find("line 4") != std::string::npos);
}

TEST_CASE("unknown keys, bad types and missing keys") {
  std::string e = error_of("task = mixture\nlearning_rat = 0.1\n");
  CHECK(e.find("learning_rat") != std::string::npos);
  CHECK(e.find("cfg:2") != std::string::npos);
  e = error_of("task = mixture\nsteps = many\n");
  CHECK(e.find("steps") != std::string::npos);
  CHECK(!error_of("task = mixture\nsteps = 1.5\n").empty());
  CHECK(!error_of("task = mixture\nper_level_gate = maybe\n").empty());
  CHECK(!error_of("task = mixture\npredictor = euler\n").empty());
  CHECK(!error_of("task = mixture\njust text\n").empty());
  e = error_of("steps = 3\n");
  CHECK(e.find("task") != std::string::npos);
}

TEST_CASE("echo parses back to the same configuration") {
  RunConfig c = parse_config_text(
      "task = toy_sr\npredictor = ddim_v\nlearning_rate = 0.00123456789\nfreeze_mode = adapter_only\n"
      "per_level_gate = true\nout_dir = some/where\n");
  RunConfig back = parse_config_text(c.echo());
  CHECK(back.echo() == c.echo());
  CHECK(back.hash() == c.hash());
  CHECK(back.distill.optimizer.learning_rate == 0.00123456789);
  CHECK(c.hash().size() == 16);
  RunConfig other = parse_config_text("task = toy_sr\n");
  CHECK(other.hash() != c.hash());
}

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("config files") {
  auto p = std::filesystem::temp_directory_path() / "cdd_test_config.cfg";
  std::ofstream(p) << "task = mixture\nseed = 9\n";
  CHECK(parse_config(p).seed == 9);
  std::filesystem::remove(p);
  CHECK_THROWS_AS(parse_config(p), IoError);
}
