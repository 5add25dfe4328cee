#include "cdd/distill.hpp"

#include <cmath>
#include <sstream>

#include "cdd/error.hpp"

namespace cdd {

GuidanceKind parse_guidance(std::string_view s) {
  if (s == "l2_data") return GuidanceKind::l2_data;
  if (s == "smooth_l1") return GuidanceKind::smooth_l1;
  if (s == "none") return GuidanceKind::none;
  throw ConfigError("unknown guidance distance '" + std::string(s) + "' (expected l2_data|smooth_l1|none)");
}

TimeMode parse_time_mode(std::string_view s) {
  if (s == "shared") return TimeMode::shared;
  if (s == "per_item") return TimeMode::per_item;
  throw ConfigError("unknown time mode '" + std::string(s) + "' (expected shared|per_item)");
}

TargetTime parse_target_time(std::string_view s) {
  if (s == "s") return TargetTime::s;
  if (s == "t") return TargetTime::t;
  throw ConfigError("unknown target time '" + std::string(s) + "' (expected s|t)");
}

std::string to_string(GuidanceKind k) {
  switch (k) {
    case GuidanceKind::l2_data: return "l2_data";
    case GuidanceKind::smooth_l1: return "smooth_l1";
    case GuidanceKind::none: return "none";
  }
  return "?";
}

std::string to_string(TimeMode m) { return m == TimeMode::shared ? "shared" : "per_item"; }
std::string to_string(TargetTime m) { return m == TargetTime::s ? "s" : "t"; }

void DistillConfig::validate() const {
  if (time_grid == 0) throw ConfigError("time_grid must be positive");
  if (!(delta_t >= 1.0) || delta_t > static_cast<double>(time_grid)) {
    throw ConfigError("delta_t must be at least one grid step and at most time_grid");
  }
  if (!(ema_gamma >= 0.0 && ema_gamma <= 1.0)) throw ConfigError("gamma must be in [0, 1]");
  if (!(optimizer.learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(guidance_weight >= 0.0)) throw ConfigError("guidance_weight must be >= 0");
}

TrainerState make_trainer(const AdaptedModel& init, const NoiseSchedule& sched, const DistillConfig& cfg) {
  AdaptedModel online = apply_freeze(init, cfg.freeze_mode);
  TrainerState state{.online = online,
                     .target = online,
                     .teacher = online,
                     .schedule = sched,
                     .optimizer = Optimizer(cfg.optimizer),
                     .rng = Rng(mix_seed(cfg.seed, 11)),
                     .step_count = 0,
                     .history = {}};
  return state;
}

std::vector<double> sample_batch_time(const DistillConfig& cfg, std::size_t batch_size, Rng& rng) {
  const auto lo = static_cast<long>(std::ceil(cfg.delta_t));
  const auto hi = static_cast<long>(cfg.time_grid);
  if (lo > hi) throw DomainError("sample_batch_time: delta_t exceeds the time grid");
  std::uniform_int_distribution<long> pick(lo, hi);
  const double n = static_cast<double>(cfg.time_grid);
  std::vector<double> t(batch_size);
  if (cfg.time_mode == TimeMode::shared) {
    const double shared = static_cast<double>(pick(rng)) / n;
    for (auto& v : t) v = shared;
  } else {
    for (auto& v : t) v = static_cast<double>(pick(rng)) / n;
  }
  return t;
}

double guidance_distance(GuidanceKind kind, const Tensor& x, const Tensor& x_hat) {
  require_same_shape(x, x_hat, "guidance_distance");
  double acc = 0.0;
  switch (kind) {
    case GuidanceKind::none:
      return 0.0;
    case GuidanceKind::l2_data:
      for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - x_hat[i]) * (x[i] - x_hat[i]);
      break;
    case GuidanceKind::smooth_l1:
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = std::abs(x[i] - x_hat[i]);
        acc += d <= 1.0 ? 0.5 * d * d : d - 0.5;
      }
      break;
  }
  return acc / static_cast<double>(x.size());
}

ParamMap ema_update(const ParamMap& target, const ParamMap& online, double gamma) {
  if (target.size() != online.size()) throw ShapeError("ema_update: parameter sets differ in size");
  ParamMap out;
  for (const auto& [name, tp] : target) {
    auto it = online.find(name);
    if (it == online.end()) throw ShapeError("ema_update: online model lacks '" + name + "'");
    require_same_shape(tp, it->second, "ema_update " + name);
    // target + (1 - gamma)(online - target): exact when the two already agree.
    const Tensor& op = it->second;
    Tensor next = tp;
    if (gamma == 0.0) {
      next = op;
    } else {
      for (std::size_t i = 0; i < next.size(); ++i) next[i] += (1.0 - gamma) * (op[i] - tp[i]);
    }
    out[name] = std::move(next);
  }
  return out;
}

namespace {

struct Coefficients {
  Tensor alpha_t, sigma_t, alpha_s, sigma_s;
  std::vector<double> s;
};

Coefficients batch_coefficients(const NoiseSchedule& sched, const std::vector<double>& t, const DistillConfig& cfg) {
  const std::size_t b = t.size();
  Coefficients k{Tensor({b, 1}), Tensor({b, 1}), Tensor({b, 1}), Tensor({b, 1}), std::vector<double>(b)};
  const double dt = cfg.delta_t / static_cast<double>(cfg.time_grid);
  for (std::size_t i = 0; i < b; ++i) {
    double s = t[i] - dt;
    if (s < 0.0 && s > -1e-12) s = 0.0;
    if (s < 0.0) {
      throw DomainError("distill: s = t - delta_t is negative (t = " + std::to_string(t[i]) + ")");
    }
    const auto at = sched.eval(t[i]);
    const auto as = sched.eval(s);
    k.alpha_t[i] = at.alpha;
    k.sigma_t[i] = at.sigma;
    k.alpha_s[i] = as.alpha;
    k.sigma_s[i] = as.sigma;
    k.s[i] = s;
  }
  return k;
}

// Numeric z_s for the detached predictors.
Tensor detached_zs(const TrainerState& state, const ConditionalBatch& batch, const Tensor& z_t, const Coefficients& k,
                   const DistillConfig& cfg) {
  const std::size_t d = z_t.cols();
  Tensor zs(z_t.shape());
  if (cfg.predictor == Predictor::ddim_eps) {
    // Signal-form DDIM driven by the frozen starting model, without the true noise.
    const Tensor v = forward_uncond(state.teacher, z_t, batch.t);
    for (std::size_t i = 0; i < z_t.size(); ++i) {
      const std::size_t r = i / d;
      const double xh = k.alpha_t[r] * z_t[i] - k.sigma_t[r] * v[i];
      zs[i] = k.alpha_s[r] * xh + k.sigma_s[r] * (z_t[i] - k.alpha_t[r] * xh) / k.sigma_t[r];
    }
  } else {
    const Tensor v = forward_cond(state.online, z_t, batch.c, batch.t);
    for (std::size_t i = 0; i < z_t.size(); ++i) {
      const std::size_t r = i / d;
      const double xh = k.alpha_t[r] * z_t[i] - k.sigma_t[r] * v[i];
      const double eh = k.alpha_t[r] * v[i] + k.sigma_t[r] * z_t[i];
      zs[i] = cfg.predictor == Predictor::prev ? k.alpha_s[r] * xh + k.sigma_s[r] * batch.eps[i]
                                               : k.alpha_s[r] * xh + k.sigma_s[r] * eh;
    }
  }
  return zs;
}

}  // namespace

LossGraph build_distill_graph(const TrainerState& state, const ConditionalBatch& batch, const DistillConfig& cfg) {
  const std::size_t b = batch.size();
  if (batch.t.size() != b) throw ShapeError("distill: batch has " + std::to_string(batch.t.size()) + " times for " +
                                            std::to_string(b) + " rows");
  require_same_shape(batch.x, batch.eps, "distill batch eps");
  const NoiseSchedule& sched = state.schedule;
  const Coefficients k = batch_coefficients(sched, batch.t, cfg);

  Tensor z_t(batch.x.shape());
  for (std::size_t i = 0; i < z_t.size(); ++i) {
    const std::size_t r = i / batch.x.cols();
    z_t[i] = k.alpha_t[r] * batch.x[i] + k.sigma_t[r] * batch.eps[i];
  }

  LossGraph g;
  ad::Tape& tape = g.tape;
  auto bind = [&](const std::string& name, Tensor value) {
    ad::NodeId id = tape.input(name, false);
    g.inputs[name] = std::move(value);
    return id;
  };
  const ad::NodeId z = bind("z_t", z_t);
  const ad::NodeId c = bind("c", batch.c);
  const ad::NodeId x = bind("x", batch.x);
  const ad::NodeId eps = bind("eps", batch.eps);
  const ad::NodeId at = bind("alpha_t", k.alpha_t);
  const ad::NodeId st = bind("sigma_t", k.sigma_t);
  const ad::NodeId as = bind("alpha_s", k.alpha_s);
  const ad::NodeId ss = bind("sigma_s", k.sigma_s);
  const ad::NodeId temb_t = bind("temb_t", time_embedding(batch.t, state.online.arch.time_freqs));
  const auto& target_times = cfg.target_time == TargetTime::s ? k.s : batch.t;
  const ad::NodeId temb_tgt = bind("temb_target", time_embedding(target_times, state.target.arch.time_freqs));

  auto online_ids = add_param_inputs(tape, state.online.params, "online.", true);
  auto target_ids = add_param_inputs(tape, state.target.params, "target.", false);
  for (const auto& [name, v] : state.online.params) {
    g.inputs["online." + name] = v;
    if (!state.online.frozen.count(name)) g.online_inputs.push_back("online." + name);
  }
  for (const auto& [name, v] : state.target.params) {
    g.inputs["target." + name] = v;
    g.target_inputs.push_back("target." + name);
  }
  auto lookup = [](const std::map<std::string, ad::NodeId>& ids) {
    return [&ids](const std::string& name) {
      auto it = ids.find(name);
      if (it == ids.end()) throw Error("distill: model lacks parameter '" + name + "'");
      return it->second;
    };
  };

  // Online branch: velocity, then signal and noise estimates.
  const ad::NodeId v = build_velocity(tape, state.online.arch, z, temb_t, c, lookup(online_ids));
  const ad::NodeId x_hat = tape.add(tape.mul(at, z), tape.mul(st, v), 1.0, -1.0);
  const ad::NodeId eps_hat = tape.add(tape.mul(at, v), tape.mul(st, z));
  tape.set_label(x_hat, "x_hat");
  tape.set_label(eps_hat, "eps_hat");

  ad::NodeId zs;
  if (cfg.predictor == Predictor::prev && !cfg.zs_stopgrad) {
    zs = tape.add(tape.mul(as, x_hat), tape.mul(ss, eps));
  } else {
    zs = bind("z_s", detached_zs(state, batch, z_t, k, cfg));
  }

  // Target branch at (z_s, s); its parameters are non-differentiable leaves.
  const ad::NodeId v_tgt = build_velocity(tape, state.target.arch, zs, temb_tgt, c, lookup(target_ids));
  const ad::NodeId eps_tgt = tape.add(tape.mul(as, v_tgt), tape.mul(ss, zs));

  const ad::NodeId cons =
      tape.reduce(tape.pointwise(tape.sub(eps_tgt, eps_hat), ad::Pointwise::square), ad::Reduction::mean);
  ad::NodeId guid = 0;
  switch (cfg.d_x) {
    case GuidanceKind::l2_data:
      guid = tape.reduce(tape.pointwise(tape.sub(x, x_hat), ad::Pointwise::square), ad::Reduction::mean);
      break;
    case GuidanceKind::smooth_l1:
      guid = tape.reduce(tape.pointwise(tape.sub(x, x_hat), ad::Pointwise::huber, 1.0), ad::Reduction::mean);
      break;
    case GuidanceKind::none:
      guid = tape.constant(Tensor::scalar(0.0));
      break;
  }
  const ad::NodeId total = tape.add(cons, guid, 1.0, cfg.guidance_weight);

  tape.mark_output("loss", total);
  tape.mark_output("consistency", cons);
  tape.mark_output("guidance", guid);
  tape.mark_output("x_hat", x_hat);
  tape.mark_output("eps_hat", eps_hat);
  tape.mark_output("z_s", zs);
  return g;
}

LossParts distill_loss(const TrainerState& state, const ConditionalBatch& batch, const DistillConfig& cfg) {
  LossGraph g = build_distill_graph(state, batch, cfg);
  auto out = g.tape.forward(g.inputs);
  return {out.at("loss").item(), out.at("consistency").item(), out.at("guidance").item()};
}

void distill_step(TrainerState& state, ConditionalBatch batch, const DistillConfig& cfg) {
  if (batch.t.empty()) batch.t = sample_batch_time(cfg, batch.size(), state.rng);
  LossGraph g = build_distill_graph(state, batch, cfg);
  auto out = g.tape.forward(g.inputs);
  LossParts parts{out.at("loss").item(), out.at("consistency").item(), out.at("guidance").item()};
  if (!std::isfinite(parts.total)) {
    std::ostringstream os;
    os << "non-finite distillation loss at step " << state.step_count << " (consistency " << parts.consistency
       << ", guidance " << parts.guidance << ", gate " << state.online.gate_mu() << ", t " << batch.t.front() << ")";
    throw NumericError(os.str());
  }

  auto grads = g.tape.backward("loss", g.online_inputs);
  std::map<std::string, Tensor> named;
  for (auto& [name, grad] : grads) named[name.substr(7)] = std::move(grad);  // strip "online."
  state.optimizer.step(state.online.params, named, state.online.frozen);
  state.target.params = ema_update(state.target.params, state.online.params, cfg.ema_gamma);
  state.history.push_back({state.step_count, parts});
  ++state.step_count;
}

void run_distillation(TrainerState& state, const Dataset& data, const DistillConfig& cfg, std::size_t every,
                      const std::function<void(const TrainerState&)>& on_eval) {
  cfg.validate();
  BatchIterator batches(data, std::min(cfg.batch_size, data.size()), mix_seed(cfg.seed, 12));
  for (std::size_t i = 0; i < cfg.steps; ++i) {
    distill_step(state, batches.next(), cfg);
    if (every > 0 && on_eval && ((i + 1) % every == 0 || i + 1 == cfg.steps)) on_eval(state);
  }
}

}  // namespace cdd
