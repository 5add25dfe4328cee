#include "cdd/verify.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>

#include "cdd/autodiff.hpp"
#include "cdd/data.hpp"
#include "cdd/distill.hpp"
#include "cdd/model.hpp"
#include "cdd/oracle.hpp"
#include "cdd/parametrization.hpp"
#include "cdd/rng.hpp"
#include "cdd/sampler.hpp"
#include "cdd/schedule.hpp"

namespace cdd {

namespace {

using Clock = std::chrono::steady_clock;

// Runs `body`, which returns the worst error, and records it against `tol`.
CheckResult timed(const std::string& suite, const std::string& name, double tol,
                  const std::function<double(std::string&)>& body) {
  CheckResult r{.suite = suite, .name = name, .pass = false, .measured = 0.0, .tolerance = tol, .seconds = 0.0,
                .detail = {}};
  auto start = Clock::now();
  try {
    r.measured = body(r.detail);
    r.pass = std::isfinite(r.measured) && r.measured <= tol;
  } catch (const std::exception& e) {
    r.detail = std::string("threw: ") + e.what();
    r.measured = INFINITY;
  }
  r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return r;
}

const NoiseSchedule kSchedules[] = {NoiseSchedule(ScheduleKind::cosine), NoiseSchedule(ScheduleKind::linear_alpha2)};

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Arch small_arch() {
  Arch a;
  a.data_dim = 2;
  a.cond_dim = 3;
  a.hidden = 5;
  a.layers = 3;
  a.encoder_layers = 2;
  a.time_freqs = 2;
  return a;
}

}  // namespace

std::vector<CheckResult> algebraic_suite(std::size_t cases, std::uint64_t seed) {
  const std::string suite = "algebraic";
  std::vector<CheckResult> out;

  out.push_back(timed(suite, "vp_identity", 1e-12, [&](std::string& detail) {
    Rng rng(mix_seed(seed, 1));
    double worst = 0.0;
    for (const auto& sched : kSchedules) {
      for (std::size_t i = 0; i < cases; ++i) {
        double t = i == 0 ? 0.0 : i == 1 ? 1.0 : uniform(rng, 0.0, 1.0);
        auto [a, s] = sched.eval(t);
        worst = std::max(worst, std::abs(a * a + s * s - 1.0));
      }
    }
    detail = std::to_string(2 * cases) + " times";
    return worst;
  }));

  out.push_back(timed(suite, "signal_noise_reconstruction", 1e-10, [&](std::string& detail) {
    Rng rng(mix_seed(seed, 2));
    double worst = 0.0;
    for (const auto& sched : kSchedules) {
      for (std::size_t i = 0; i < cases; ++i) {
        double t = uniform(rng, 0.0, 1.0);
        Tensor z = randn({3}, rng), v = randn({3}, rng);
        auto p = triple_from_v(sched, z, v, t);
        auto [a, s] = sched.eval(t);
        worst = std::max(worst, max_abs_diff(axpby(a, p.x_hat, s, p.eps_hat), z));
        worst = std::max(worst, max_abs_diff(v_from_signal_noise(sched, p.x_hat, p.eps_hat, t), v));
        // From a known (x, eps) pair the estimates recover it exactly.
        Tensor x = randn({3}, rng), eps = randn({3}, rng);
        Tensor zt = forward_sample(sched, x, t, eps);
        auto q = triple_from_v(sched, zt, axpby(a, eps, -s, x), t);
        worst = std::max({worst, max_abs_diff(q.x_hat, x), max_abs_diff(q.eps_hat, eps)});
      }
    }
    detail = "alpha x_hat + sigma eps_hat = z, v round trip, (x, eps) recovery";
    return worst;
  }));

  out.push_back(timed(suite, "ddim_signal_vs_velocity_form", 1e-10, [&](std::string& detail) {
    Rng rng(mix_seed(seed, 3));
    double worst = 0.0;
    for (const auto& sched : kSchedules) {
      for (std::size_t i = 0; i < cases; ++i) {
        double t = uniform(rng, 1e-3, 1.0);
        if (i == 0) t = 1.0;
        double s = uniform(rng, 0.0, t);
        if (i == 1) s = 0.0;
        Tensor z = randn({3}, rng), v = randn({3}, rng);
        Tensor x_hat = triple_from_v(sched, z, v, t).x_hat;
        worst = std::max(worst, max_abs_diff(ddim_step_eps(sched, z, x_hat, t, s), ddim_step_v(sched, z, v, t, s)));
      }
    }
    detail = "mutually consistent (x_hat, v)";
    return worst;
  }));

  out.push_back(timed(suite, "prev_equals_ddim_at_true_noise", 1e-10, [&](std::string&) {
    Rng rng(mix_seed(seed, 4));
    double worst = 0.0;
    for (const auto& sched : kSchedules) {
      for (std::size_t i = 0; i < cases; ++i) {
        double t = uniform(rng, 1e-3, 1.0);
        double s = uniform(rng, 0.0, t);
        Tensor x_hat = randn({3}, rng), eps = randn({3}, rng);
        Tensor z = forward_sample(sched, x_hat, t, eps);
        worst = std::max(worst,
                         max_abs_diff(prev_step(sched, x_hat, eps, s), ddim_step_eps(sched, z, x_hat, t, s)));
      }
    }
    return worst;
  }));

  out.push_back(timed(suite, "noise_consistency_transport", 1e-10, [&](std::string& detail) {
    Rng rng(mix_seed(seed, 5));
    double worst = 0.0;
    for (const auto& sched : kSchedules) {
      for (std::size_t i = 0; i < cases; ++i) {
        double t = uniform(rng, 1e-3, 1.0);
        double s = i == 0 ? t : uniform(rng, 0.0, t);
        if (sched.alpha(s) < 1e-3) s = 0.5 * t;
        Tensor x_hat = randn({3}, rng), eps_hat = randn({3}, rng);
        auto tr = noise_transport(sched, x_hat, eps_hat, t, s);
        worst = std::max({worst, max_abs_diff(tr.x_hat_s_implied, x_hat), max_abs_diff(tr.eps_hat_s_assumed, eps_hat)});
      }
    }
    detail = "implied signal at s equals signal at t";
    return worst;
  }));

  out.push_back(timed(suite, "zero_gate_equivalence", 1e-12, [&](std::string& detail) {
    Rng rng(mix_seed(seed, 6));
    Arch arch = small_arch();
    arch.per_level_gate = true;
    double worst = 0.0;
    const std::size_t models = 4;
    const std::size_t rows = (cases + models - 1) / models;
    for (std::size_t m = 0; m < models; ++m) {
      AdaptedModel model = init_adapted(arch, mix_seed(seed, 60 + m), InitMode::random);
      // Adapter weights distinct from the backbone so the branch is nonzero.
      for (const auto& name : model.adapter_names()) {
        if (name.find("gate") == std::string::npos) model.params[name] = randn(model.params[name].shape(), rng);
      }
      model.set_gate_mu(0.0);
      Tensor z = randn({rows, arch.data_dim}, rng);
      Tensor c = randn({rows, arch.cond_dim}, rng);
      std::vector<double> t(rows);
      for (auto& v : t) v = uniform(rng, 0.0, 1.0);
      worst = std::max(worst, max_abs_diff(forward_cond(model, z, c, t), forward_uncond(model, z, t)));
    }
    detail = std::to_string(models * rows) + " (z, c, t) rows";
    return worst;
  }));

  return out;
}

std::vector<CheckResult> gradient_suite(std::uint64_t seed, double step, double tol) {
  const std::string suite = "gradient";
  std::vector<CheckResult> out;

  // A tape over every primitive with broadcasting operands; 100 seeded draws.
  out.push_back(timed(suite, "primitives", tol, [&](std::string& detail) {
    double worst = 0.0;
    const ad::Pointwise fns[] = {ad::Pointwise::silu, ad::Pointwise::tanh, ad::Pointwise::relu,
                                 ad::Pointwise::square, ad::Pointwise::huber, ad::Pointwise::scale};
    for (int inst = 0; inst < 100; ++inst) {
      Rng rng(mix_seed(seed, 200 + inst));
      ad::Tape tape;
      auto a = tape.input("a");
      auto w = tape.input("w");
      auto b = tape.input("b");
      auto col = tape.input("col");
      auto mu = tape.input("mu");
      auto h = tape.affine(a, w, b);           // [4 x 3]
      auto g = tape.mul(h, col);               // broadcast [4 x 1]
      auto k = tape.add(g, tape.matmul(a, w), 0.7, -1.3);
      auto p = tape.pointwise(k, fns[inst % 6], fns[inst % 6] == ad::Pointwise::huber ? 0.8 : 1.7);
      auto q = tape.gate_blend(p, tape.pointwise(h, ad::Pointwise::tanh), mu);
      auto cat = tape.concat(q, tape.add(tape.mul(b, b), col));  // rank-1 row broadcast
      auto sq = tape.pointwise(tape.concat(cat, tape.add(a, col)), ad::Pointwise::square);
      tape.mark_output("loss", tape.reduce(sq, inst % 2 ? ad::Reduction::mean : ad::Reduction::sum));
      tape.forward({{"a", randn({4, 2}, rng)},
                    {"w", randn({2, 3}, rng)},
                    {"b", randn({3}, rng)},
                    {"col", randn({4, 1}, rng)},
                    {"mu", Tensor::scalar(uniform(rng, 0.1, 0.9))}});
      for (const char* name : {"a", "w", "b", "col", "mu"}) {
        auto rep = ad::grad_check(tape, "loss", name, step, tol);
        if (rep.max_rel_error > worst) {
          worst = rep.max_rel_error;
          detail = "worst at instance " + std::to_string(inst) + " input " + name;
        }
      }
    }
    return worst;
  }));

  out.push_back(timed(suite, "velocity_network", tol, [&](std::string& detail) {
    double worst = 0.0;
    for (int inst = 0; inst < 6; ++inst) {
      Rng rng(mix_seed(seed, 300 + inst));
      Arch arch = small_arch();
      arch.activation = inst % 2 ? Activation::tanh : Activation::silu;
      arch.per_level_gate = inst % 3 == 0;
      AdaptedModel model = init_adapted(arch, mix_seed(seed, 310 + inst), InitMode::random);
      for (auto& [name, t] : model.params) {
        if (name.find("gate") == std::string::npos) t = randn(t.shape(), rng, 0.7);
      }
      for (const auto& name : model.adapter_names()) {
        if (name.find("gate") != std::string::npos) model.params[name] = Tensor::scalar(uniform(rng, 0.2, 0.8));
      }
      ad::Tape tape;
      auto z = tape.input("z");
      auto temb = tape.input("temb", false);
      auto c = tape.input("c");
      auto ids = add_param_inputs(tape, model.params, "", true);
      auto v = build_velocity(tape, arch, z, temb, c, [&](const std::string& n) { return ids.at(n); });
      auto target = tape.input("target", false);
      tape.mark_output("loss", tape.reduce(tape.pointwise(tape.sub(v, target), ad::Pointwise::square),
                                           ad::Reduction::mean));
      std::map<std::string, Tensor> inputs = model.params;
      const std::size_t rows = 4;
      std::vector<double> t(rows);
      for (auto& x : t) x = uniform(rng, 0.0, 1.0);
      inputs["z"] = randn({rows, arch.data_dim}, rng);
      inputs["temb"] = time_embedding(t, arch.time_freqs);
      inputs["c"] = randn({rows, arch.cond_dim}, rng);
      inputs["target"] = randn({rows, arch.data_dim}, rng);
      tape.forward(inputs);
      for (const auto& [name, _] : inputs) {
        if (name == "temb" || name == "target") continue;
        auto rep = ad::grad_check(tape, "loss", name, step, tol);
        if (rep.max_rel_error > worst) {
          worst = rep.max_rel_error;
          detail = "worst at instance " + std::to_string(inst) + " input " + name;
        }
      }
    }
    return worst;
  }));

  out.push_back(timed(suite, "distillation_loss", tol, [&](std::string& detail) {
    double worst = 0.0;
    const Predictor predictors[] = {Predictor::prev, Predictor::ddim_v, Predictor::ddim_eps};
    const GuidanceKind guidance[] = {GuidanceKind::l2_data, GuidanceKind::smooth_l1, GuidanceKind::none};
    int inst = 0;
    for (Predictor pred : predictors) {
      for (GuidanceKind gk : guidance) {
        for (bool per_item : {false, true}) {
          Rng rng(mix_seed(seed, 400 + inst));
          Arch arch = small_arch();
          AdaptedModel model = init_adapted(arch, mix_seed(seed, 410 + inst), InitMode::random);
          for (auto& [name, t] : model.params) {
            if (name.find("gate") == std::string::npos) t = randn(t.shape(), rng, 0.6);
          }
          model.set_gate_mu(uniform(rng, 0.2, 0.8));
          DistillConfig cfg;
          cfg.predictor = pred;
          cfg.d_x = gk;
          cfg.guidance_weight = 0.7;
          cfg.time_mode = per_item ? TimeMode::per_item : TimeMode::shared;
          cfg.target_time = inst % 2 ? TargetTime::t : TargetTime::s;
          cfg.freeze_mode = inst % 4 == 3 ? FreezeMode::adapter_only : FreezeMode::full;
          cfg.time_grid = 8;
          cfg.delta_t = 1.0 + (inst % 3);
          cfg.seed = seed + inst;
          TrainerState state = make_trainer(model, NoiseSchedule(), cfg);
          // Target lags the online model by a perturbation.
          for (auto& [name, t] : state.target.params) {
            for (auto& x : t.storage()) x += 0.05 * std::normal_distribution<double>()(rng);
          }
          ConditionalBatch batch;
          const std::size_t rows = 3;
          batch.x = randn({rows, arch.data_dim}, rng);
          batch.c = randn({rows, arch.cond_dim}, rng);
          batch.eps = randn({rows, arch.data_dim}, rng);
          batch.t = sample_batch_time(cfg, rows, state.rng);
          LossGraph g = build_distill_graph(state, batch, cfg);
          g.tape.forward(g.inputs);
          for (const auto& name : g.online_inputs) {
            auto rep = ad::grad_check(g.tape, "loss", name, step, tol);
            if (rep.max_rel_error > worst) {
              worst = rep.max_rel_error;
              detail = "worst: " + to_string(pred) + "/" + to_string(gk) + " input " + name;
            }
          }
          ++inst;
        }
      }
    }
    if (detail.empty()) detail = std::to_string(inst) + " configurations";
    return worst;
  }));

  return out;
}

std::vector<CheckResult> oracle_suite(std::uint64_t seed, std::size_t draws) {
  const std::string suite = "oracle";
  std::vector<CheckResult> out;
  const NoiseSchedule cosine(ScheduleKind::cosine);

  out.push_back(timed(suite, "ddim_scale_closed_form", 1e-12, [&](std::string& detail) {
    double worst = std::abs(oracle::exact_ddim_scale(1));
    worst = std::max(worst, std::abs(oracle::exact_ddim_scale(4) - 0.728553) - 5e-7);
    for (int k : {1, 2, 3, 4, 8, 16, 64}) {
      worst = std::max(worst, std::abs(oracle::ddim_scale(cosine, k) - oracle::exact_ddim_scale(k)));
    }
    if (!(oracle::exact_ddim_scale(64) > oracle::exact_ddim_scale(8) &&
          oracle::exact_ddim_scale(8) > oracle::exact_ddim_scale(4))) {
      detail = "not monotone in K";
      return 1.0;
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "K=4 scale %.9f", oracle::exact_ddim_scale(4));
    detail = buf;
    return worst;
  }));

  out.push_back(timed(suite, "ddim_sampler_pushforward", 1e-12, [&](std::string& detail) {
    auto g = oracle::make_gaussian(Tensor({2}, 0.0), 1.0);
    Rng rng(mix_seed(seed, 500));
    Tensor noise = randn({64, 2}, rng);
    VelocityFn denoise_v = [&](const Tensor& z, double t) {
      return v_from_signal(cosine, z, oracle::optimal_denoiser(g, cosine, z, t), t);
    };
    double worst = 0.0;
    for (int k : {1, 2, 4, 8}) {
      for (StepForm form : {StepForm::velocity, StepForm::signal}) {
        SampleRun a = sample_with(denoise_v, cosine, noise, k, form);
        SampleRun b = sample_with(denoise_v, cosine, noise, k, form);
        if (!a.output().bit_equal(b.output())) {
          detail = "non-deterministic at K=" + std::to_string(k);
          return 1.0;
        }
        worst = std::max(worst, max_abs_diff(a.output(), scaled(noise, oracle::exact_ddim_scale(k))));
      }
    }
    detail = "both update forms, K in {1,2,4,8}";
    return worst;
  }));

  out.push_back(timed(suite, "score_equivalence", 1e-12, [&](std::string&) {
    Rng rng(mix_seed(seed, 501));
    double worst = 0.0;
    for (const auto& sched : kSchedules) {
      for (int i = 0; i < 1000; ++i) {
        auto g = oracle::make_gaussian(randn({3}, rng), uniform(rng, 0.2, 2.0));
        // The signal route divides by sigma^2, so stay clear of t = 0.
        double t = uniform(rng, 0.05, 1.0);
        Tensor z = randn({3}, rng, 2.0);
        Tensor a = oracle::exact_score(g, sched, z, t);
        Tensor b = score_from_signal(sched, z, oracle::optimal_denoiser(g, sched, z, t), t);
        worst = std::max(worst, max_abs_diff(a, b) / std::max(1.0, std::abs(a[0])));
      }
    }
    return worst;
  }));

  // Standardized error in units of standard errors; passes below 5.
  out.push_back(timed(suite, "marginal_moments_monte_carlo", 5.0, [&](std::string& detail) {
    Rng rng(mix_seed(seed, 502));
    double worst = 0.0;
    const double n = static_cast<double>(draws);
    for (const auto& sched : kSchedules) {
      for (double t : {0.0, 0.25, 0.5, 0.8, 1.0}) {
        auto g = oracle::make_gaussian(Tensor({2}, {1.5, -0.5}), 0.7);
        Tensor x(Shape{draws, 2});
        for (std::size_t r = 0; r < draws; ++r) {
          x.at(r, 0) = 1.5 + 0.7 * std::normal_distribution<double>()(rng);
          x.at(r, 1) = -0.5 + 0.7 * std::normal_distribution<double>()(rng);
        }
        Tensor eps = randn({draws, 2}, rng);
        Tensor z = forward_sample(sched, x, t, eps);
        auto m = oracle::exact_marginal(g, sched, t);
        for (std::size_t d = 0; d < 2; ++d) {
          double sum = 0.0, sq = 0.0;
          for (std::size_t r = 0; r < draws; ++r) sum += z.at(r, d);
          double mean = sum / n;
          for (std::size_t r = 0; r < draws; ++r) sq += (z.at(r, d) - mean) * (z.at(r, d) - mean);
          double var = sq / (n - 1.0);
          double sd = m.stddev;
          double mean_z = std::abs(mean - m.mean[d]) / (sd / std::sqrt(n));
          double var_z = std::abs(var - sd * sd) / (sd * sd * std::sqrt(2.0 / (n - 1.0)));
          worst = std::max({worst, mean_z, var_z});
        }
      }
    }
    detail = std::to_string(draws) + " draws per time, worst |z-score|";
    return worst;
  }));

  return out;
}

std::vector<CheckResult> run_all_checks(std::uint64_t seed) {
  std::vector<CheckResult> all = algebraic_suite(1000, seed);
  for (auto& r : gradient_suite(seed)) all.push_back(std::move(r));
  for (auto& r : oracle_suite(seed)) all.push_back(std::move(r));
  return all;
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const auto& r : results) {
    if (!r.pass) return false;
  }
  return !results.empty();
}

std::string format_checks(const std::vector<CheckResult>& results) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %-34s %-4s %12s %10s %8s  %s\n", "suite", "check", "", "worst", "tol", "sec",
                "detail");
  os << line;
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%-10s %-34s %-4s %12.3e %10.1e %8.3f  ", r.suite.c_str(), r.name.c_str(),
                  r.pass ? "PASS" : "FAIL", r.measured, r.tolerance, r.seconds);
    os << line << r.detail << "\n";
  }
  return os.str();
}

}  // namespace cdd
