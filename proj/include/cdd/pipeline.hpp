#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cdd/config.hpp"
#include "cdd/data.hpp"
#include "cdd/distill.hpp"
#include "cdd/eval.hpp"
#include "cdd/model.hpp"

// The pretrain -> distill -> sample -> eval chain behind the CLI. The
// in-memory functions do no I/O so tests can drive the same code paths.
namespace cdd {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitNumeric = 2, kExitIo = 3 };
int exit_code_for(const std::exception& e);

Dataset make_train_data(const RunConfig& cfg);
// Independent draw from the same task, for metrics.
Dataset make_eval_data(const RunConfig& cfg);
Arch arch_from(const RunConfig& cfg, const Dataset& data);
DiffusionTrainConfig pretrain_config(const RunConfig& cfg);
DistillConfig distill_config(const RunConfig& cfg);

struct TrainMetricRow {
  std::size_t step = 0;
  LossParts loss;
  double eval_mmd = 0.0;
  double eval_cond_mse = 0.0;
};

// Metrics on `eval` at `steps` sampling steps for one sampling seed.
TrainMetricRow quick_eval(const AdaptedModel& model, const NoiseSchedule& sched, const Dataset& eval, int steps,
                          std::uint64_t seed);

ParamMap pretrain_model(const RunConfig& cfg, const Dataset& train, std::vector<double>* losses = nullptr);

// Builds the adapted model (from `backbone` when init = pretrained), runs the
// distillation and returns the online model. With metrics_every > 0 every
// evaluation point is appended to `rows`.
AdaptedModel distill_model(const RunConfig& cfg, const Dataset& train, const Dataset& eval, const ParamMap* backbone,
                           std::vector<TrainMetricRow>* rows = nullptr);

// Conditional fine-tune of the adapted model with the ordinary velocity loss;
// the many-step baseline that distillation is compared against.
AdaptedModel finetune_teacher(const RunConfig& cfg, const Dataset& train, const ParamMap& backbone,
                              std::size_t steps);

// Exclusive marker file in an output directory; removed on destruction.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path marker_;
};

inline constexpr const char* kEffectiveConfigName = "config.effective";

std::filesystem::path write_effective_config(const RunConfig& cfg, const std::filesystem::path& dir);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::filesystem::path model_path(const RunConfig& cfg);

// Subcommands. Each creates and locks cfg.out_dir, writes the effective
// config and its artifacts, and throws on failure.
void run_pretrain(const RunConfig& cfg);
void run_distill(const RunConfig& cfg);
void run_sample(const RunConfig& cfg);
void run_eval(const RunConfig& cfg);
// Prints the check table to `out`; returns false if any check failed.
bool run_verify(const RunConfig* cfg, std::ostream& out);

int run_subcommand(const std::string& name, const RunConfig& cfg, std::ostream& out);

}  // namespace cdd
