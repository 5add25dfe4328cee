#include "cdd/model.hpp"

#include <cmath>
#include <sstream>

#include "cdd/error.hpp"
#include "cdd/rng.hpp"

namespace cdd {

namespace {

std::string layer_name(std::string_view prefix, std::size_t l, const char* field) {
  return std::string(prefix) + "layer" + std::to_string(l) + "." + field;
}

ad::Pointwise activation_fn(Activation a) { return a == Activation::silu ? ad::Pointwise::silu : ad::Pointwise::tanh; }

Tensor glorot(Shape shape, Rng& rng) {
  const double fan_in = static_cast<double>(shape[0]);
  return randn(std::move(shape), rng, 1.0 / std::sqrt(fan_in));
}

bool starts_with(const std::string& s, std::string_view p) { return s.compare(0, p.size(), p) == 0; }

Tensor evaluate(const AdaptedModel& model, const Tensor& z_t, const Tensor* c, std::span<const double> t) {
  const Arch& arch = model.arch;
  if (z_t.rank() != 2 || z_t.cols() != arch.data_dim) {
    throw ShapeError("model input z_t must be [B x " + std::to_string(arch.data_dim) + "], got " +
                     shape_str(z_t.shape()));
  }
  if (t.size() != z_t.rows() && t.size() != 1) {
    throw ShapeError("model: " + std::to_string(t.size()) + " times for " + std::to_string(z_t.rows()) + " rows");
  }
  if (c && (c->rank() != 2 || c->cols() != arch.cond_dim || c->rows() != z_t.rows())) {
    throw ShapeError("model condition must be [" + std::to_string(z_t.rows()) + " x " +
                     std::to_string(arch.cond_dim) + "], got " + shape_str(c->shape()));
  }
  std::vector<double> times(t.begin(), t.end());
  if (times.size() == 1 && z_t.rows() != 1) times.assign(z_t.rows(), t[0]);

  ad::Tape tape;
  std::map<std::string, Tensor> inputs;
  ad::NodeId z = tape.input("z", false);
  ad::NodeId temb = tape.input("temb", false);
  inputs["z"] = z_t;
  inputs["temb"] = time_embedding(times, arch.time_freqs);
  std::optional<ad::NodeId> cond;
  if (c) {
    cond = tape.input("c", false);
    inputs["c"] = *c;
  }
  auto ids = add_param_inputs(tape, model.params, "", false);
  for (const auto& [name, value] : model.params) inputs[name] = value;
  ad::NodeId v = build_velocity(tape, arch, z, temb, cond, [&](const std::string& name) {
    auto it = ids.find(name);
    if (it == ids.end()) throw Error("model is missing parameter '" + name + "'");
    return it->second;
  });
  tape.mark_output("v", v);
  return tape.forward(inputs).at("v");
}

}  // namespace

Activation parse_activation(std::string_view s) {
  if (s == "silu") return Activation::silu;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + std::string(s) + "' (expected silu|tanh)");
}

FreezeMode parse_freeze_mode(std::string_view s) {
  if (s == "full") return FreezeMode::full;
  if (s == "adapter_only") return FreezeMode::adapter_only;
  throw ConfigError("unknown freeze mode '" + std::string(s) + "' (expected full|adapter_only)");
}

InitMode parse_init_mode(std::string_view s) {
  if (s == "pretrained") return InitMode::pretrained;
  if (s == "random") return InitMode::random;
  throw ConfigError("unknown init '" + std::string(s) + "' (expected pretrained|random)");
}

std::string to_string(Activation a) { return a == Activation::silu ? "silu" : "tanh"; }
std::string to_string(FreezeMode m) { return m == FreezeMode::full ? "full" : "adapter_only"; }
std::string to_string(InitMode m) { return m == InitMode::pretrained ? "pretrained" : "random"; }

void Arch::validate() const {
  if (data_dim == 0 || cond_dim == 0 || hidden == 0 || layers == 0 || time_freqs == 0) {
    throw ConfigError("arch: all widths must be positive");
  }
  if (encoder_layers == 0 || encoder_layers > layers) {
    throw ConfigError("arch: encoder_layers must be in [1, layers]");
  }
}

double AdaptedModel::gate_mu(std::size_t level) const { return params.at(gate_name(arch, level)).item(); }

void AdaptedModel::set_gate_mu(double mu) {
  const std::size_t n = arch.per_level_gate ? arch.encoder_layers : 1;
  for (std::size_t l = 0; l < n; ++l) params[gate_name(arch, l)] = Tensor::scalar(mu);
}

std::vector<std::string> AdaptedModel::backbone_names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : params)
    if (starts_with(name, kBackbonePrefix)) out.push_back(name);
  return out;
}

std::vector<std::string> AdaptedModel::adapter_names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : params)
    if (starts_with(name, kAdapterPrefix)) out.push_back(name);
  return out;
}

std::vector<std::string> AdaptedModel::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : params)
    if (!frozen.count(name)) out.push_back(name);
  return out;
}

std::size_t AdaptedModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params) n += t.size();
  return n;
}

std::size_t AdaptedModel::trainable_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params)
    if (!frozen.count(name)) n += t.size();
  return n;
}

std::map<std::string, Shape> backbone_layout(const Arch& arch) {
  std::map<std::string, Shape> out;
  std::size_t in = arch.input_width();
  for (std::size_t l = 0; l < arch.layers; ++l) {
    out[layer_name(kBackbonePrefix, l, "weight")] = {in, arch.hidden};
    out[layer_name(kBackbonePrefix, l, "bias")] = {arch.hidden};
    in = arch.hidden;
  }
  out[std::string(kBackbonePrefix) + "out.weight"] = {arch.hidden, arch.data_dim};
  out[std::string(kBackbonePrefix) + "out.bias"] = {arch.data_dim};
  return out;
}

std::string gate_name(const Arch& arch, std::size_t level) {
  std::string base = std::string(kAdapterPrefix) + "gate_mu";
  return arch.per_level_gate ? base + "." + std::to_string(level) : base;
}

std::map<std::string, Shape> adapter_layout(const Arch& arch) {
  std::map<std::string, Shape> out;
  out[std::string(kAdapterPrefix) + "proj.weight"] = {arch.cond_dim, arch.input_width()};
  out[std::string(kAdapterPrefix) + "proj.bias"] = {arch.input_width()};
  std::size_t in = arch.input_width();
  for (std::size_t l = 0; l < arch.encoder_layers; ++l) {
    out[layer_name(kAdapterPrefix, l, "weight")] = {in, arch.hidden};
    out[layer_name(kAdapterPrefix, l, "bias")] = {arch.hidden};
    in = arch.hidden;
  }
  const std::size_t gates = arch.per_level_gate ? arch.encoder_layers : 1;
  for (std::size_t l = 0; l < gates; ++l) out[gate_name(arch, l)] = {1};
  return out;
}

Tensor time_embedding(std::span<const double> t, std::size_t freqs) {
  Tensor out({t.size(), 2 * freqs});
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (std::size_t k = 0; k < freqs; ++k) {
      const double f = freqs == 1 ? 1.0 : std::pow(64.0, static_cast<double>(k) / static_cast<double>(freqs - 1));
      out.at(i, k) = std::sin(f * t[i]);
      out.at(i, freqs + k) = std::cos(f * t[i]);
    }
  }
  return out;
}

ad::NodeId build_velocity(ad::Tape& tape, const Arch& arch, ad::NodeId z, ad::NodeId temb,
                          std::optional<ad::NodeId> cond,
                          const std::function<ad::NodeId(const std::string&)>& param) {
  const auto act = activation_fn(arch.activation);
  ad::NodeId h = tape.concat(z, temb);
  tape.set_label(h, "backbone.input");

  std::optional<ad::NodeId> eta;
  if (cond) {
    eta = tape.affine(*cond, param(std::string(kAdapterPrefix) + "proj.weight"),
                      param(std::string(kAdapterPrefix) + "proj.bias"));
    tape.set_label(*eta, "adapter.proj");
  }

  for (std::size_t l = 0; l < arch.layers; ++l) {
    ad::NodeId pre = tape.affine(h, param(layer_name(kBackbonePrefix, l, "weight")),
                                 param(layer_name(kBackbonePrefix, l, "bias")));
    tape.set_label(pre, layer_name(kBackbonePrefix, l, "affine"));
    h = tape.pointwise(pre, act);
    if (eta && l < arch.encoder_layers) {
      ad::NodeId epre = tape.affine(*eta, param(layer_name(kAdapterPrefix, l, "weight")),
                                    param(layer_name(kAdapterPrefix, l, "bias")));
      tape.set_label(epre, layer_name(kAdapterPrefix, l, "affine"));
      eta = tape.pointwise(epre, act);
      h = tape.gate_blend(h, *eta, param(gate_name(arch, l)));
      tape.set_label(h, "blend" + std::to_string(l));
    }
  }
  ad::NodeId out = tape.affine(h, param(std::string(kBackbonePrefix) + "out.weight"),
                               param(std::string(kBackbonePrefix) + "out.bias"));
  tape.set_label(out, "backbone.out");
  return out;
}

std::map<std::string, ad::NodeId> add_param_inputs(ad::Tape& tape, const ParamMap& params, const std::string& prefix,
                                                   bool requires_grad) {
  std::map<std::string, ad::NodeId> ids;
  for (const auto& [name, _] : params) ids[name] = tape.input(prefix + name, requires_grad);
  return ids;
}

Tensor forward_uncond(const AdaptedModel& model, const Tensor& z_t, double t) {
  return evaluate(model, z_t, nullptr, std::span<const double>(&t, 1));
}

Tensor forward_uncond(const AdaptedModel& model, const Tensor& z_t, std::span<const double> t) {
  return evaluate(model, z_t, nullptr, t);
}

Tensor forward_cond(const AdaptedModel& model, const Tensor& z_t, const Tensor& c, double t) {
  return evaluate(model, z_t, &c, std::span<const double>(&t, 1));
}

Tensor forward_cond(const AdaptedModel& model, const Tensor& z_t, const Tensor& c, std::span<const double> t) {
  return evaluate(model, z_t, &c, t);
}

ParamMap init_backbone(const Arch& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(mix_seed(seed, 101));
  ParamMap params;
  // Layout order is map order, so draws are reproducible per name set.
  for (const auto& [name, shape] : backbone_layout(arch)) {
    params[name] = shape.size() == 2 ? glorot(shape, rng) : Tensor(shape, 0.0);
  }
  return params;
}

AdaptedModel init_adapted(const Arch& arch, std::uint64_t seed, InitMode init, const ParamMap* checkpoint) {
  arch.validate();
  AdaptedModel model;
  model.arch = arch;
  if (init == InitMode::pretrained) {
    if (!checkpoint) throw Error("init_adapted: init=pretrained needs a backbone checkpoint");
    std::ostringstream problems;
    for (const auto& [name, shape] : backbone_layout(arch)) {
      auto it = checkpoint->find(name);
      if (it == checkpoint->end()) {
        problems << "\n  missing " << name << " " << shape_str(shape);
      } else if (it->second.shape() != shape) {
        problems << "\n  " << name << ": expected " << shape_str(shape) << ", found " << shape_str(it->second.shape());
      } else {
        model.params[name] = it->second;
      }
    }
    if (!problems.str().empty()) throw ShapeError("checkpoint incompatible with arch:" + problems.str());
  } else {
    model.params = init_backbone(arch, seed);
  }

  Rng rng(mix_seed(seed, 202));
  for (const auto& [name, shape] : adapter_layout(arch)) {
    if (name.find("gate_mu") != std::string::npos) {
      model.params[name] = Tensor(shape, 0.0);
    } else if (name.starts_with(std::string(kAdapterPrefix) + "proj.")) {
      model.params[name] = shape.size() == 2 ? glorot(shape, rng) : Tensor(shape, 0.0);
    } else {
      const std::string source = std::string(kBackbonePrefix) + name.substr(kAdapterPrefix.size());
      model.params[name] = model.params.at(source);
    }
  }
  return model;
}

AdaptedModel apply_freeze(AdaptedModel model, FreezeMode mode) {
  model.frozen.clear();
  if (mode == FreezeMode::adapter_only) {
    for (auto& name : model.backbone_names()) model.frozen.insert(name);
  }
  return model;
}

}  // namespace cdd
