#include "cdd/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "cdd/error.hpp"
#include "cdd/eval.hpp"

namespace cdd {

namespace {

struct KeySpec {
  const char* name;
  bool required;
  std::function<std::string(const RunConfig&)> get;
  // Throws std::invalid_argument with a short reason on bad input.
  std::function<void(RunConfig&, const std::string&)> set;
};

[[noreturn]] void bad(const std::string& why) { throw std::invalid_argument(why); }

std::uint64_t to_u64(const std::string& v, std::uint64_t lo = 0, std::uint64_t hi = UINT64_MAX) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad("expected a non-negative integer, got '" + v + "'");
  if (out < lo || out > hi) bad("value " + v + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return out;
}

double to_real(const std::string& v, double lo, double hi, bool open_lo = false) {
  double out = 0.0;
  try {
    std::size_t used = 0;
    out = std::stod(v, &used);
    if (used != v.size()) bad("expected a real number, got '" + v + "'");
  } catch (const std::invalid_argument&) {
    bad("expected a real number, got '" + v + "'");
  } catch (const std::out_of_range&) {
    bad("real number out of range: '" + v + "'");
  }
  if (!std::isfinite(out) || out < lo || out > hi || (open_lo && out == lo)) {
    bad("value " + v + " outside " + std::string(open_lo ? "(" : "[") + format_double(lo) + ", " + format_double(hi) +
        "]");
  }
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad("expected true|false, got '" + v + "'");
}

template <typename F>
auto enum_value(F parse, const std::string& v) {
  try {
    return parse(v);
  } catch (const ConfigError& e) {
    bad(e.what());
  }
}

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt_u(std::uint64_t v) { return std::to_string(v); }

const std::vector<KeySpec>& registry() {
  static const std::vector<KeySpec> keys = [] {
    std::vector<KeySpec> k;
    auto size_key = [&k](const char* name, std::size_t RunConfig::*field, std::uint64_t lo, std::uint64_t hi) {
      k.push_back({name, false, [field](const RunConfig& c) { return fmt_u(c.*field); },
                   [field, lo, hi](RunConfig& c, const std::string& v) { c.*field = to_u64(v, lo, hi); }});
    };
    auto real_key = [&k](const char* name, double RunConfig::*field, double lo, double hi, bool open_lo) {
      k.push_back({name, false, [field](const RunConfig& c) { return format_double(c.*field); },
                   [field, lo, hi, open_lo](RunConfig& c, const std::string& v) { c.*field = to_real(v, lo, hi, open_lo); }});
    };

    k.push_back({"task", true, [](const RunConfig& c) { return to_string(c.task); },
                 [](RunConfig& c, const std::string& v) { c.task = enum_value(parse_task_kind, v); }});
    k.push_back({"data_seed", false, [](const RunConfig& c) { return fmt_u(c.data_seed); },
                 [](RunConfig& c, const std::string& v) { c.data_seed = to_u64(v); }});
    size_key("train_size", &RunConfig::train_size, 1, 10'000'000);
    size_key("eval_size", &RunConfig::eval_size, 2, 1'000'000);
    size_key("mixture_modes", &RunConfig::mixture_modes, 2, 1024);
    real_key("mixture_radius", &RunConfig::mixture_radius, 0.0, kInf, true);
    real_key("mixture_noise", &RunConfig::mixture_noise, 0.0, kInf, true);
    size_key("sr_length", &RunConfig::sr_length, 1, 4096);
    size_key("sr_pool", &RunConfig::sr_pool, 1, 4096);
    real_key("sr_obs_noise", &RunConfig::sr_obs_noise, 0.0, kInf, false);
    k.push_back({"csv_path", false, [](const RunConfig& c) { return c.csv_path; },
                 [](RunConfig& c, const std::string& v) { c.csv_path = v; }});
    size_key("csv_x_cols", &RunConfig::csv_x_cols, 0, 1'000'000);
    k.push_back({"schedule", false, [](const RunConfig& c) { return to_string(c.schedule); },
                 [](RunConfig& c, const std::string& v) { c.schedule = enum_value(parse_schedule_kind, v); }});
    k.push_back({"seed", false, [](const RunConfig& c) { return fmt_u(c.seed); },
                 [](RunConfig& c, const std::string& v) { c.seed = to_u64(v); }});
    k.push_back({"out_dir", false, [](const RunConfig& c) { return c.out_dir; },
                 [](RunConfig& c, const std::string& v) {
                   if (v.empty()) bad("out_dir must not be empty");
                   c.out_dir = v;
                 }});

    size_key("hidden", &RunConfig::hidden, 1, 4096);
    size_key("layers", &RunConfig::layers, 1, 64);
    size_key("encoder_layers", &RunConfig::encoder_layers, 1, 64);
    size_key("time_freqs", &RunConfig::time_freqs, 1, 64);
    k.push_back({"activation", false, [](const RunConfig& c) { return to_string(c.activation); },
                 [](RunConfig& c, const std::string& v) { c.activation = enum_value(parse_activation, v); }});
    k.push_back({"per_level_gate", false, [](const RunConfig& c) { return c.per_level_gate ? "true" : "false"; },
                 [](RunConfig& c, const std::string& v) { c.per_level_gate = to_bool(v); }});

    k.push_back({"pretrain_steps", false, [](const RunConfig& c) { return fmt_u(c.pretrain.steps); },
                 [](RunConfig& c, const std::string& v) { c.pretrain.steps = to_u64(v, 1, 100'000'000); }});
    k.push_back({"pretrain_batch_size", false, [](const RunConfig& c) { return fmt_u(c.pretrain.batch_size); },
                 [](RunConfig& c, const std::string& v) { c.pretrain.batch_size = to_u64(v, 1, 1'000'000); }});
    k.push_back({"pretrain_optimizer", false, [](const RunConfig& c) { return to_string(c.pretrain.optimizer.kind); },
                 [](RunConfig& c, const std::string& v) { c.pretrain.optimizer.kind = enum_value(parse_optimizer, v); }});
    k.push_back({"pretrain_learning_rate", false,
                 [](const RunConfig& c) { return format_double(c.pretrain.optimizer.learning_rate); },
                 [](RunConfig& c, const std::string& v) { c.pretrain.optimizer.learning_rate = to_real(v, 0.0, kInf); }});

    k.push_back({"init", false, [](const RunConfig& c) { return to_string(c.init); },
                 [](RunConfig& c, const std::string& v) { c.init = enum_value(parse_init_mode, v); }});
    k.push_back({"checkpoint", false, [](const RunConfig& c) { return c.checkpoint; },
                 [](RunConfig& c, const std::string& v) { c.checkpoint = v; }});
    k.push_back({"delta_t", false, [](const RunConfig& c) { return format_double(c.distill.delta_t); },
                 [](RunConfig& c, const std::string& v) { c.distill.delta_t = to_real(v, 1.0, kInf); }});
    k.push_back({"time_grid", false, [](const RunConfig& c) { return fmt_u(c.distill.time_grid); },
                 [](RunConfig& c, const std::string& v) { c.distill.time_grid = to_u64(v, 1, 1'000'000); }});
    k.push_back({"gamma", false, [](const RunConfig& c) { return format_double(c.distill.ema_gamma); },
                 [](RunConfig& c, const std::string& v) { c.distill.ema_gamma = to_real(v, 0.0, 1.0); }});
    k.push_back({"learning_rate", false,
                 [](const RunConfig& c) { return format_double(c.distill.optimizer.learning_rate); },
                 [](RunConfig& c, const std::string& v) { c.distill.optimizer.learning_rate = to_real(v, 0.0, kInf); }});
    k.push_back({"optimizer", false, [](const RunConfig& c) { return to_string(c.distill.optimizer.kind); },
                 [](RunConfig& c, const std::string& v) { c.distill.optimizer.kind = enum_value(parse_optimizer, v); }});
    k.push_back({"adam_beta1", false, [](const RunConfig& c) { return format_double(c.distill.optimizer.beta1); },
                 [](RunConfig& c, const std::string& v) {
                   c.distill.optimizer.beta1 = c.pretrain.optimizer.beta1 = to_real(v, 0.0, 1.0);
                 }});
    k.push_back({"adam_beta2", false, [](const RunConfig& c) { return format_double(c.distill.optimizer.beta2); },
                 [](RunConfig& c, const std::string& v) {
                   c.distill.optimizer.beta2 = c.pretrain.optimizer.beta2 = to_real(v, 0.0, 1.0);
                 }});
    k.push_back({"batch_size", false, [](const RunConfig& c) { return fmt_u(c.distill.batch_size); },
                 [](RunConfig& c, const std::string& v) { c.distill.batch_size = to_u64(v, 1, 1'000'000); }});
    k.push_back({"steps", false, [](const RunConfig& c) { return fmt_u(c.distill.steps); },
                 [](RunConfig& c, const std::string& v) { c.distill.steps = to_u64(v, 1, 100'000'000); }});
    k.push_back({"predictor", false, [](const RunConfig& c) { return to_string(c.distill.predictor); },
                 [](RunConfig& c, const std::string& v) { c.distill.predictor = enum_value(parse_predictor, v); }});
    k.push_back({"d_eps", false, [](const RunConfig&) { return std::string("l2"); },
                 [](RunConfig&, const std::string& v) {
                   if (v != "l2") bad("d_eps supports only l2, got '" + v + "'");
                 }});
    k.push_back({"d_x", false, [](const RunConfig& c) { return to_string(c.distill.d_x); },
                 [](RunConfig& c, const std::string& v) { c.distill.d_x = enum_value(parse_guidance, v); }});
    k.push_back({"guidance_weight", false, [](const RunConfig& c) { return format_double(c.distill.guidance_weight); },
                 [](RunConfig& c, const std::string& v) { c.distill.guidance_weight = to_real(v, 0.0, kInf); }});
    k.push_back({"time_mode", false, [](const RunConfig& c) { return to_string(c.distill.time_mode); },
                 [](RunConfig& c, const std::string& v) { c.distill.time_mode = enum_value(parse_time_mode, v); }});
    k.push_back({"freeze_mode", false, [](const RunConfig& c) { return to_string(c.distill.freeze_mode); },
                 [](RunConfig& c, const std::string& v) { c.distill.freeze_mode = enum_value(parse_freeze_mode, v); }});
    k.push_back({"target_time", false, [](const RunConfig& c) { return to_string(c.distill.target_time); },
                 [](RunConfig& c, const std::string& v) { c.distill.target_time = enum_value(parse_target_time, v); }});
    k.push_back({"zs_stopgrad", false, [](const RunConfig& c) { return c.distill.zs_stopgrad ? "true" : "false"; },
                 [](RunConfig& c, const std::string& v) { c.distill.zs_stopgrad = to_bool(v); }});
    size_key("metrics_every", &RunConfig::metrics_every, 0, 100'000'000);
    k.push_back({"metrics_steps", false, [](const RunConfig& c) { return std::to_string(c.metrics_steps); },
                 [](RunConfig& c, const std::string& v) { c.metrics_steps = static_cast<int>(to_u64(v, 1, 4096)); }});
    k.push_back({"sample_steps", false, [](const RunConfig& c) { return std::to_string(c.sample_steps); },
                 [](RunConfig& c, const std::string& v) { c.sample_steps = static_cast<int>(to_u64(v, 1, 4096)); }});
    k.push_back({"model", false, [](const RunConfig& c) { return c.model; },
                 [](RunConfig& c, const std::string& v) { c.model = v; }});
    size_key("sample_count", &RunConfig::sample_count, 1, 1'000'000);
    size_key("eval_seeds", &RunConfig::eval_seeds, 1, 1000);
    return k;
  }();
  return keys;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

void cross_validate(const RunConfig& c, const std::string& source) {
  auto fail = [&](const std::string& key, const std::string& why) {
    throw ConfigError(source + ": " + key + ": " + why);
  };
  if (c.encoder_layers > c.layers) fail("encoder_layers", "must not exceed layers");
  if (c.sr_length % c.sr_pool != 0) fail("sr_pool", "must divide sr_length");
  if (c.distill.delta_t > static_cast<double>(c.distill.time_grid)) fail("delta_t", "exceeds time_grid");
  if (c.task == TaskKind::csv && (c.csv_path.empty() || c.csv_x_cols == 0)) {
    fail("csv_path", "task = csv needs csv_path and csv_x_cols");
  }
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string RunConfig::echo() const {
  std::ostringstream os;
  for (const auto& k : registry()) os << k.name << " = " << k.get(*this) << '\n';
  return os.str();
}

std::uint64_t RunConfig::hash_value() const { return fnv1a64(echo()); }

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_value()));
  return buf;
}

RunConfig parse_config_text(std::string_view text, const std::string& source) {
  RunConfig cfg;
  std::map<std::string, int> seen;
  std::map<std::string, const KeySpec*> by_name;
  for (const auto& k : registry()) by_name[k.name] = &k;

  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto spec = by_name.find(key);
    if (spec == by_name.end()) throw ConfigError(where + ": unknown key '" + key + "'");
    if (auto prev = seen.find(key); prev != seen.end()) {
      throw ConfigError(where + ": duplicate key '" + key + "' (first set on line " + std::to_string(prev->second) +
                        ", again on line " + std::to_string(lineno) + ")");
    }
    seen[key] = lineno;
    try {
      spec->second->set(cfg, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where + ": " + key + ": " + e.what());
    }
  }
  for (const auto& k : registry()) {
    if (k.required && !seen.count(k.name)) throw ConfigError(source + ": missing required key '" + k.name + "'");
  }
  cross_validate(cfg, source);
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

std::map<std::string, std::string> config_defaults() {
  RunConfig defaults;
  std::map<std::string, std::string> out;
  for (const auto& k : registry()) out[k.name] = k.get(defaults);
  return out;
}

}  // namespace cdd
