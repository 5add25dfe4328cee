#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cdd/autodiff.hpp"
#include "cdd/tensor.hpp"

namespace cdd {

using ParamMap = std::map<std::string, Tensor>;

enum class Activation { silu, tanh };
enum class FreezeMode { full, adapter_only };
enum class InitMode { pretrained, random };

Activation parse_activation(std::string_view s);
FreezeMode parse_freeze_mode(std::string_view s);
InitMode parse_init_mode(std::string_view s);
std::string to_string(Activation a);
std::string to_string(FreezeMode m);
std::string to_string(InitMode m);

// MLP velocity network. The input row is [z, embed(t)]; the first
// `encoder_layers` hidden layers are the encoder whose features the
// conditional branch blends into, the remaining hidden layers and the output
// layer form the decoder.
struct Arch {
  std::size_t data_dim = 2;
  std::size_t cond_dim = 8;
  std::size_t hidden = 64;
  std::size_t layers = 4;
  std::size_t encoder_layers = 2;
  std::size_t time_freqs = 8;
  Activation activation = Activation::silu;
  bool per_level_gate = false;

  std::size_t input_width() const { return data_dim + 2 * time_freqs; }
  void validate() const;
  bool operator==(const Arch&) const = default;
};

inline constexpr std::string_view kBackbonePrefix = "backbone.";
inline constexpr std::string_view kAdapterPrefix = "adapter.";

struct AdaptedModel {
  Arch arch;
  ParamMap params;
  std::set<std::string> frozen;

  double gate_mu(std::size_t level = 0) const;
  void set_gate_mu(double mu);
  std::vector<std::string> backbone_names() const;
  std::vector<std::string> adapter_names() const;
  std::vector<std::string> trainable_names() const;
  std::size_t parameter_count() const;
  std::size_t trainable_count() const;
};

// Names of the backbone tensors for `arch`, in map order, with shapes.
std::map<std::string, Shape> backbone_layout(const Arch& arch);
std::map<std::string, Shape> adapter_layout(const Arch& arch);
std::string gate_name(const Arch& arch, std::size_t level);

// Sinusoidal embedding [sin(f_k t), cos(f_k t)] with f_k geometric in [1, 64].
Tensor time_embedding(std::span<const double> t, std::size_t freqs);

// Appends the velocity network to a tape. `param` maps a parameter name to its
// tape node; `cond` is empty for the unconditional network.
ad::NodeId build_velocity(ad::Tape& tape, const Arch& arch, ad::NodeId z, ad::NodeId temb,
                          std::optional<ad::NodeId> cond,
                          const std::function<ad::NodeId(const std::string&)>& param);

// Binds every parameter of `params` as a tape input named prefix + name.
std::map<std::string, ad::NodeId> add_param_inputs(ad::Tape& tape, const ParamMap& params, const std::string& prefix,
                                                   bool requires_grad);

Tensor forward_uncond(const AdaptedModel& model, const Tensor& z_t, double t);
Tensor forward_uncond(const AdaptedModel& model, const Tensor& z_t, std::span<const double> t);
Tensor forward_cond(const AdaptedModel& model, const Tensor& z_t, const Tensor& c, double t);
Tensor forward_cond(const AdaptedModel& model, const Tensor& z_t, const Tensor& c, std::span<const double> t);

// Unconditional network with random weights; the starting point of pretraining.
ParamMap init_backbone(const Arch& arch, std::uint64_t seed);

// Builds the conditional model. With init = pretrained the backbone comes from
// `checkpoint`, otherwise it is drawn from `seed`. Either way the adapter
// encoder layers are copies of the backbone encoder and the gate starts at 0.
AdaptedModel init_adapted(const Arch& arch, std::uint64_t seed, InitMode init,
                          const ParamMap* checkpoint = nullptr);

AdaptedModel apply_freeze(AdaptedModel model, FreezeMode mode);

}  // namespace cdd
