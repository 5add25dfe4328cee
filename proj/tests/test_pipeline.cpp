#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cdd/checkpoint.hpp"
#include "cdd/config.hpp"
#include "cdd/error.hpp"
#include "cdd/pipeline.hpp"
#include "doctest.h"

using namespace cdd;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("cdd_test_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

// A run small enough for a unit test.
RunConfig tiny(const fs::path& out) {
  RunConfig c = parse_config_text(
      "task = mixture\nmixture_modes = 4\ntrain_size = 128\neval_size = 32\nhidden = 16\nlayers = 3\n"
      "time_freqs = 4\npretrain_steps = 20\npretrain_batch_size = 32\nsteps = 10\nbatch_size = 32\n"
      "optimizer = adam\nmetrics_every = 5\nsample_count = 8\neval_seeds = 2\n");
  c.out_dir = out.string();
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CDD_BINARY) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("pretrain, distill, sample and eval chain in one directory") {
  fs::path dir = scratch("chain");
  RunConfig cfg = tiny(dir);
  std::ostringstream log;
  CHECK(run_subcommand("pretrain", cfg, log) == kExitOk);
  CHECK(fs::exists(dir / "pretrained.ckpt"));
  CHECK(fs::exists(dir / "pretrain_loss.csv"));
  CHECK(run_subcommand("distill", cfg, log) == kExitOk);
  CHECK(fs::exists(dir / "distilled.ckpt"));
  std::string metrics = slurp(dir / "train_metrics.csv");
  CHECK(metrics.rfind("step,loss,consistency,guidance,eval_mmd,eval_cond_mse\n", 0) == 0);
  CHECK(run_subcommand("sample", cfg, log) == kExitOk);
  CHECK(fs::exists(dir / "samples.csv"));
  CHECK(fs::exists(dir / "trajectory.csv"));
  CHECK(run_subcommand("eval", cfg, log) == kExitOk);
  CHECK(fs::exists(dir / "metrics.csv"));
  CHECK(fs::exists(dir / "summary.csv"));
  CHECK(fs::exists(dir / "scatter_4.svg"));
  CHECK_FALSE(fs::exists(dir / ".cdd.lock"));
  // The effective config parses back to the same run.
  RunConfig echoed = parse_config(dir / kEffectiveConfigName);
  CHECK(echoed.hash() == cfg.hash());
  fs::remove_all(dir);
}

TEST_CASE("sampling twice with seed 7 gives identical files") {
  fs::path dir = scratch("sample");
  RunConfig cfg = tiny(dir);
  std::ostringstream log;
  run_subcommand("pretrain", cfg, log);
  run_subcommand("distill", cfg, log);
  cfg.seed = 7;
  cfg.sample_steps = 4;
  run_subcommand("sample", cfg, log);
  const std::string a = slurp(dir / "samples.csv"), ta = slurp(dir / "trajectory.csv");
  run_subcommand("sample", cfg, log);
  CHECK(slurp(dir / "samples.csv") == a);
  CHECK(slurp(dir / "trajectory.csv") == ta);
  fs::remove_all(dir);
}

TEST_CASE("adapter-only distillation keeps the backbone bytes") {
  fs::path dir = scratch("freeze");
  RunConfig cfg = tiny(dir);
  cfg.distill.freeze_mode = FreezeMode::adapter_only;
  std::ostringstream log;
  run_subcommand("pretrain", cfg, log);
  run_subcommand("distill", cfg, log);
  Checkpoint in = read_checkpoint(dir / "pretrained.ckpt");
  Checkpoint out = read_checkpoint(dir / "distilled.ckpt");
  for (const auto& name : out.model.backbone_names()) {
    REQUIRE(in.model.params.count(name) == 1);
    CHECK(out.model.params.at(name).bit_equal(in.model.params.at(name)));
  }
  CHECK(out.model.frozen.size() == out.model.backbone_names().size());
  fs::remove_all(dir);
}

TEST_CASE("distill with a missing pretrained checkpoint is an I/O error") {
  fs::path dir = scratch("missing");
  RunConfig cfg = tiny(dir);
  std::ostringstream log;
  try {
    run_subcommand("distill", cfg, log);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(exit_code_for(e) == kExitIo);
  }
  CHECK_FALSE(fs::exists(dir / ".cdd.lock"));
  fs::remove_all(dir);
}

TEST_CASE("output lock is exclusive") {
  fs::path dir = scratch("lock");
  {
    OutputLock lock(dir);
    CHECK(fs::exists(dir / ".cdd.lock"));
    CHECK_THROWS_AS(OutputLock{dir}, IoError);
    RunConfig cfg = tiny(dir);
    std::ostringstream log;
    CHECK_THROWS_AS(run_subcommand("pretrain", cfg, log), IoError);
  }
  CHECK_FALSE(fs::exists(dir / ".cdd.lock"));
  OutputLock again(dir);
  fs::remove_all(dir);
}

TEST_CASE("exit code classes") {
  CHECK(exit_code_for(ConfigError("x")) == kExitConfig);
  CHECK(exit_code_for(DomainError("x")) == kExitConfig);
  CHECK(exit_code_for(NumericError("x")) == kExitNumeric);
  CHECK(exit_code_for(IoError("x")) == kExitIo);
  CHECK(exit_code_for(FormatError("x")) == kExitIo);
  std::ostringstream log;
  CHECK_THROWS_AS(run_subcommand("train", tiny(scratch("x")), log), ConfigError);
}

TEST_CASE("verify passes on a fresh build") {
  std::ostringstream out;
  CHECK(run_verify(nullptr, out));
  CHECK(out.str().find("FAIL") == std::string::npos);
}

TEST_CASE("command-line exit codes") {
  fs::path dir = scratch("cli");
  fs::create_directories(dir);
  std::ofstream(dir / "ok.cfg") << "task = mixture\n";
  std::ofstream(dir / "bad.cfg") << "task = mixture\ngamma = 1.5\n";
  CHECK(run_cli("") == kExitConfig);
  CHECK(run_cli("pretrain --config " + (dir / "absent.cfg").string()) == kExitConfig);
  CHECK(run_cli("pretrain --config " + (dir / "bad.cfg").string() + " --out " + (dir / "o").string()) ==
        kExitConfig);
  CHECK(run_cli("sample --config " + (dir / "ok.cfg").string() + " --out " + (dir / "o").string()) == kExitIo);
  CHECK(run_cli("verify --config " + (dir / "ok.cfg").string() + " --out " + (dir / "v").string()) == kExitOk);
  CHECK(fs::exists(dir / "v" / "verify.txt"));
  fs::remove_all(dir);
}
