#include "cdd/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cdd/checkpoint.hpp"
#include "cdd/error.hpp"
#include "cdd/sampler.hpp"
#include "cdd/train.hpp"
#include "cdd/verify.hpp"

namespace fs = std::filesystem;

namespace cdd {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const IoError*>(&e)) return kExitIo;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return kExitIo;
  return kExitConfig;
}

Dataset make_train_data(const RunConfig& cfg) {
  switch (cfg.task) {
    case TaskKind::mixture:
      return make_cond_mixture(cfg.mixture_modes, cfg.mixture_radius, cfg.mixture_noise, cfg.train_size,
                               cfg.data_seed);
    case TaskKind::toy_sr:
      return make_toy_sr(cfg.sr_length, cfg.sr_pool, cfg.sr_obs_noise, cfg.train_size, cfg.data_seed);
    case TaskKind::csv:
      return load_csv_dataset(cfg.csv_path, cfg.csv_x_cols);
  }
  throw ConfigError("unknown task");
}

Dataset make_eval_data(const RunConfig& cfg) {
  const std::uint64_t seed = mix_seed(cfg.data_seed, 7);
  switch (cfg.task) {
    case TaskKind::mixture:
      return make_cond_mixture(cfg.mixture_modes, cfg.mixture_radius, cfg.mixture_noise, cfg.eval_size, seed);
    case TaskKind::toy_sr:
      return make_toy_sr(cfg.sr_length, cfg.sr_pool, cfg.sr_obs_noise, cfg.eval_size, seed);
    case TaskKind::csv: {
      // No generator behind a file: evaluate on its leading rows.
      Dataset all = load_csv_dataset(cfg.csv_path, cfg.csv_x_cols);
      std::vector<std::size_t> idx(std::min(cfg.eval_size, all.size()));
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      all.x = select_rows(all.x, idx);
      all.c = select_rows(all.c, idx);
      return all;
    }
  }
  throw ConfigError("unknown task");
}

Arch arch_from(const RunConfig& cfg, const Dataset& data) {
  Arch a;
  a.data_dim = data.data_dim();
  a.cond_dim = data.cond_dim();
  a.hidden = cfg.hidden;
  a.layers = cfg.layers;
  a.encoder_layers = cfg.encoder_layers;
  a.time_freqs = cfg.time_freqs;
  a.activation = cfg.activation;
  a.per_level_gate = cfg.per_level_gate;
  a.validate();
  return a;
}

DiffusionTrainConfig pretrain_config(const RunConfig& cfg) {
  DiffusionTrainConfig p = cfg.pretrain;
  p.seed = mix_seed(cfg.seed, 1);
  return p;
}

DistillConfig distill_config(const RunConfig& cfg) {
  DistillConfig d = cfg.distill;
  d.seed = mix_seed(cfg.seed, 2);
  d.validate();
  return d;
}

TrainMetricRow quick_eval(const AdaptedModel& model, const NoiseSchedule& sched, const Dataset& eval, int steps,
                          std::uint64_t seed) {
  TrainMetricRow row;
  SampleRun run = sample(model, sched, eval.c, steps, seed);
  row.eval_mmd = mmd_rbf(run.output(), eval.x, median_bandwidth(eval.x, eval.x));
  row.eval_cond_mse = cond_mse(run.output(), eval.c, ground_truth_for(eval));
  return row;
}

ParamMap pretrain_model(const RunConfig& cfg, const Dataset& train, std::vector<double>* losses) {
  return pretrain_backbone(arch_from(cfg, train), NoiseSchedule(cfg.schedule), train, pretrain_config(cfg), losses);
}

AdaptedModel distill_model(const RunConfig& cfg, const Dataset& train, const Dataset& eval, const ParamMap* backbone,
                           std::vector<TrainMetricRow>* rows) {
  const Arch arch = arch_from(cfg, train);
  if (cfg.init == InitMode::pretrained && !backbone) {
    throw ConfigError("init = pretrained needs a pretrained checkpoint");
  }
  AdaptedModel init =
      init_adapted(arch, mix_seed(cfg.seed, 3), cfg.init, cfg.init == InitMode::pretrained ? backbone : nullptr);
  const DistillConfig dc = distill_config(cfg);
  const NoiseSchedule sched(cfg.schedule);
  TrainerState state = make_trainer(init, sched, dc);
  const std::uint64_t eval_seed = mix_seed(cfg.seed, 4);
  run_distillation(state, train, dc, rows ? cfg.metrics_every : 0, [&](const TrainerState& s) {
    TrainMetricRow r = quick_eval(s.online, sched, eval, cfg.metrics_steps, eval_seed);
    r.step = s.step_count;
    r.loss = s.history.back().loss;
    rows->push_back(r);
  });
  return state.online;
}

AdaptedModel finetune_teacher(const RunConfig& cfg, const Dataset& train, const ParamMap& backbone,
                              std::size_t steps) {
  AdaptedModel model = init_adapted(arch_from(cfg, train), mix_seed(cfg.seed, 3), InitMode::pretrained, &backbone);
  DiffusionTrainConfig tc = pretrain_config(cfg);
  tc.steps = steps;
  tc.seed = mix_seed(cfg.seed, 5);
  train_velocity(model, NoiseSchedule(cfg.schedule), train, tc, true);
  return model;
}

OutputLock::OutputLock(const fs::path& dir) : marker_(dir / ".cdd.lock") {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  int fd = ::open(marker_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      throw IoError("output directory " + dir.string() + " is locked by another run (remove " + marker_.string() +
                    " if stale)");
    }
    throw IoError("cannot create lock " + marker_.string() + ": " + std::strerror(errno));
  }
  std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(marker_, ec);
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

fs::path write_effective_config(const RunConfig& cfg, const fs::path& dir) {
  const fs::path path = dir / kEffectiveConfigName;
  write_text_file(path, "# config hash " + cfg.hash() + "\n" + cfg.echo());
  return path;
}

fs::path model_path(const RunConfig& cfg) {
  return cfg.model.empty() ? fs::path(cfg.out_dir) / "distilled.ckpt" : fs::path(cfg.model);
}

namespace {

fs::path pretrained_path(const RunConfig& cfg) {
  return cfg.checkpoint.empty() ? fs::path(cfg.out_dir) / "pretrained.ckpt" : fs::path(cfg.checkpoint);
}

AdaptedModel load_adapted(const RunConfig& cfg, const Dataset& data) {
  Checkpoint ck = read_checkpoint(model_path(cfg));
  const Arch want = arch_from(cfg, data);
  if (!(ck.model.arch == want)) {
    throw ConfigError(model_path(cfg).string() + ": checkpoint architecture does not match the config");
  }
  if (ck.model.adapter_names().empty()) {
    throw ConfigError(model_path(cfg).string() + ": not a conditional (adapted) checkpoint");
  }
  return ck.model;
}

}  // namespace

void run_pretrain(const RunConfig& cfg) {
  const fs::path dir = cfg.out_dir;
  OutputLock lock(dir);
  write_effective_config(cfg, dir);
  const Dataset train = make_train_data(cfg);
  std::vector<double> losses;
  AdaptedModel m;
  m.arch = arch_from(cfg, train);
  m.params = pretrain_model(cfg, train, &losses);
  write_checkpoint(dir / "pretrained.ckpt", m, cfg.hash_value());
  std::ostringstream os;
  os << "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) os << i + 1 << ',' << format_double(losses[i]) << '\n';
  write_text_file(dir / "pretrain_loss.csv", os.str());
}

void run_distill(const RunConfig& cfg) {
  const fs::path dir = cfg.out_dir;
  OutputLock lock(dir);
  write_effective_config(cfg, dir);
  const Dataset train = make_train_data(cfg);
  const Dataset eval = make_eval_data(cfg);
  std::optional<ParamMap> backbone;
  if (cfg.init == InitMode::pretrained) {
    const fs::path p = pretrained_path(cfg);
    if (!fs::exists(p)) throw IoError("init = pretrained but checkpoint " + p.string() + " does not exist");
    backbone = read_checkpoint(p).model.params;
  }
  std::vector<TrainMetricRow> rows;
  AdaptedModel model = distill_model(cfg, train, eval, backbone ? &*backbone : nullptr, &rows);
  write_checkpoint(dir / "distilled.ckpt", model, cfg.hash_value());
  std::ostringstream os;
  os << "step,loss,consistency,guidance,eval_mmd,eval_cond_mse\n";
  for (const auto& r : rows) {
    os << r.step << ',' << format_double(r.loss.total) << ',' << format_double(r.loss.consistency) << ','
       << format_double(r.loss.guidance) << ',' << format_double(r.eval_mmd) << ','
       << format_double(r.eval_cond_mse) << '\n';
  }
  write_text_file(dir / "train_metrics.csv", os.str());
}

void run_sample(const RunConfig& cfg) {
  const fs::path dir = cfg.out_dir;
  OutputLock lock(dir);
  write_effective_config(cfg, dir);
  const Dataset eval = make_eval_data(cfg);
  const AdaptedModel model = load_adapted(cfg, eval);
  std::vector<std::size_t> idx(std::min(cfg.sample_count, eval.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const Tensor c = select_rows(eval.c, idx);
  SampleRun run = sample(model, NoiseSchedule(cfg.schedule), c, cfg.sample_steps, cfg.seed);

  std::ostringstream s;
  s << "row";
  for (std::size_t j = 0; j < run.output().cols(); ++j) s << ",x" << j;
  s << '\n';
  for (std::size_t i = 0; i < run.output().rows(); ++i) {
    s << i;
    for (double v : run.output().row(i)) s << ',' << format_double(v);
    s << '\n';
  }
  write_text_file(dir / "samples.csv", s.str());

  // Signal estimate at every visited time, then the final latent.
  std::ostringstream t;
  t << "step,time,row";
  for (std::size_t j = 0; j < run.output().cols(); ++j) t << ",x" << j;
  t << '\n';
  for (std::size_t k = 0; k < run.x_hat.size(); ++k) {
    for (std::size_t i = 0; i < run.x_hat[k].rows(); ++i) {
      t << k << ',' << format_double(run.times[k]) << ',' << i;
      for (double v : run.x_hat[k].row(i)) t << ',' << format_double(v);
      t << '\n';
    }
  }
  write_text_file(dir / "trajectory.csv", t.str());
}

void run_eval(const RunConfig& cfg) {
  const fs::path dir = cfg.out_dir;
  OutputLock lock(dir);
  write_effective_config(cfg, dir);
  const Dataset eval = make_eval_data(cfg);
  const AdaptedModel model = load_adapted(cfg, eval);
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < cfg.eval_seeds; ++i) seeds.push_back(cfg.seed + i);
  MetricReport rep = evaluate_model(model, NoiseSchedule(cfg.schedule), eval, kStepCounts, seeds);
  rep.config_hash = cfg.hash();
  emit_report(rep, dir);
}

bool run_verify(const RunConfig* cfg, std::ostream& out) {
  const auto results = run_all_checks(cfg ? cfg->seed : 0);
  out << format_checks(results);
  const bool ok = all_passed(results);
  out << (ok ? "all checks passed\n" : "SOME CHECKS FAILED\n");
  if (cfg) {
    const fs::path dir = cfg->out_dir;
    OutputLock lock(dir);
    write_effective_config(*cfg, dir);
    write_text_file(dir / "verify.txt", format_checks(results));
  }
  return ok;
}

int run_subcommand(const std::string& name, const RunConfig& cfg, std::ostream& out) {
  if (name == "pretrain") {
    run_pretrain(cfg);
  } else if (name == "distill") {
    run_distill(cfg);
  } else if (name == "sample") {
    run_sample(cfg);
  } else if (name == "eval") {
    run_eval(cfg);
  } else if (name == "verify") {
    return run_verify(&cfg, out) ? kExitOk : kExitNumeric;
  } else {
    throw ConfigError("unknown subcommand '" + name + "'");
  }
  out << name << ": wrote " << cfg.out_dir << " (config " << cfg.hash() << ")\n";
  return kExitOk;
}

}  // namespace cdd
