#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "cdd/data.hpp"
#include "cdd/distill.hpp"
#include "cdd/model.hpp"
#include "cdd/schedule.hpp"
#include "cdd/train.hpp"

namespace cdd {

// Flat `key = value` run configuration. Every key is declared with a type, a
// default and a range; unknown keys, duplicates and malformed values are
// rejected with the offending line.
struct RunConfig {
  // task and data
  TaskKind task = TaskKind::mixture;
  std::uint64_t data_seed = 1234;
  std::size_t train_size = 4096;
  std::size_t eval_size = 256;
  std::size_t mixture_modes = 8;
  double mixture_radius = 2.0;
  double mixture_noise = 0.2;
  std::size_t sr_length = 16;
  std::size_t sr_pool = 4;
  double sr_obs_noise = 0.05;
  std::string csv_path;
  std::size_t csv_x_cols = 0;

  ScheduleKind schedule = ScheduleKind::cosine;
  std::uint64_t seed = 0;
  std::string out_dir = "out";

  // architecture (data and condition widths come from the task)
  std::size_t hidden = 64;
  std::size_t layers = 4;
  std::size_t encoder_layers = 2;
  std::size_t time_freqs = 8;
  Activation activation = Activation::silu;
  bool per_level_gate = false;

  // pretraining
  DiffusionTrainConfig pretrain{};

  // distillation
  InitMode init = InitMode::pretrained;
  std::string checkpoint;
  DistillConfig distill{};
  std::size_t metrics_every = 100;
  int metrics_steps = 4;

  // sampling and evaluation; `model` defaults to <out_dir>/distilled.ckpt
  std::string model;
  int sample_steps = 4;
  std::size_t sample_count = 16;
  std::size_t eval_seeds = 5;

  // Canonical `key = value` text of every key, in declaration order; parsing
  // it back yields an identical configuration.
  std::string echo() const;
  // FNV-1a 64 of echo(), as 16 hex digits.
  std::string hash() const;
  std::uint64_t hash_value() const;
};

RunConfig parse_config_text(std::string_view text, const std::string& source = "<config>");
RunConfig parse_config(const std::filesystem::path& path);

// Key names with their documented defaults, for --help and the README.
std::map<std::string, std::string> config_defaults();

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace cdd
