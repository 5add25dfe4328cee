#include "cdd/train.hpp"

#include <cmath>

#include "cdd/error.hpp"
#include "cdd/rng.hpp"

namespace cdd {

std::vector<double> train_velocity(AdaptedModel& model, const NoiseSchedule& sched, const Dataset& data,
                                   const DiffusionTrainConfig& cfg, bool conditional) {
  const Arch& arch = model.arch;
  if (data.data_dim() != arch.data_dim) throw ShapeError("train_velocity: dataset width does not match arch");
  if (conditional && data.cond_dim() != arch.cond_dim) throw ShapeError("train_velocity: condition width mismatch");

  BatchIterator batches(data, std::min(cfg.batch_size, data.size()), mix_seed(cfg.seed, 31));
  Rng time_rng(mix_seed(cfg.seed, 32));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Optimizer opt(cfg.optimizer);
  std::vector<double> losses;
  losses.reserve(cfg.steps);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    ConditionalBatch b = batches.next();
    const std::size_t rows = b.size();
    b.t.resize(rows);
    // t in (0, 1]
    for (auto& t : b.t) t = 1.0 - unit(time_rng);

    Tensor z(b.x.shape()), target(b.x.shape());
    for (std::size_t i = 0; i < rows; ++i) {
      const auto [a, s] = sched.eval(b.t[i]);
      for (std::size_t j = 0; j < arch.data_dim; ++j) {
        z.at(i, j) = a * b.x.at(i, j) + s * b.eps.at(i, j);
        target.at(i, j) = a * b.eps.at(i, j) - s * b.x.at(i, j);
      }
    }

    ad::Tape tape;
    std::map<std::string, Tensor> inputs;
    auto bind = [&](const std::string& name, Tensor value) {
      inputs[name] = std::move(value);
      return tape.input(name, false);
    };
    const ad::NodeId zn = bind("z", z);
    const ad::NodeId temb = bind("temb", time_embedding(b.t, arch.time_freqs));
    const ad::NodeId vt = bind("v_target", target);
    std::optional<ad::NodeId> cn;
    if (conditional) cn = bind("c", b.c);
    auto ids = add_param_inputs(tape, model.params, "", true);
    std::vector<std::string> wrt;
    for (const auto& [name, value] : model.params) {
      inputs[name] = value;
      if (!model.frozen.count(name)) wrt.push_back(name);
    }
    const ad::NodeId v = build_velocity(tape, arch, zn, temb, cn, [&](const std::string& n) { return ids.at(n); });
    const ad::NodeId loss =
        tape.reduce(tape.pointwise(tape.sub(v, vt), ad::Pointwise::square), ad::Reduction::mean);
    tape.mark_output("loss", loss);
    const double value = tape.forward(inputs).at("loss").item();
    if (!std::isfinite(value)) {
      throw NumericError("non-finite diffusion loss at step " + std::to_string(step));
    }
    losses.push_back(value);
    opt.step(model.params, tape.backward("loss", wrt), model.frozen);
  }
  return losses;
}

ParamMap pretrain_backbone(const Arch& arch, const NoiseSchedule& sched, const Dataset& data,
                           const DiffusionTrainConfig& cfg, std::vector<double>* losses) {
  AdaptedModel model;
  model.arch = arch;
  model.params = init_backbone(arch, cfg.seed);
  auto l = train_velocity(model, sched, data, cfg, false);
  if (losses) *losses = std::move(l);
  return model.params;
}

}  // namespace cdd
