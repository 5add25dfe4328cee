#include "cdd/parametrization.hpp"

#include "cdd/error.hpp"

namespace cdd {

namespace {

void check_step_times(double t, double s, const char* what) {
  if (!(s < t)) {
    throw DomainError(std::string(what) + ": need s < t, got s = " + std::to_string(s) + ", t = " + std::to_string(t));
  }
}

}  // namespace

Predictor parse_predictor(std::string_view s) {
  if (s == "ddim_eps") return Predictor::ddim_eps;
  if (s == "ddim_v") return Predictor::ddim_v;
  if (s == "prev") return Predictor::prev;
  throw ConfigError("unknown predictor '" + std::string(s) + "' (expected ddim_eps|ddim_v|prev)");
}

std::string to_string(Predictor p) {
  switch (p) {
    case Predictor::ddim_eps: return "ddim_eps";
    case Predictor::ddim_v: return "ddim_v";
    case Predictor::prev: return "prev";
  }
  return "?";
}

PredictionTriple triple_from_v(const NoiseSchedule& sched, const Tensor& z_t, const Tensor& v_hat, double t) {
  require_same_shape(z_t, v_hat, "triple_from_v");
  const auto [a, s] = sched.eval(t);
  PredictionTriple out;
  out.v_hat = v_hat;
  out.x_hat = axpby(a, z_t, -s, v_hat);
  out.eps_hat = axpby(a, v_hat, s, z_t);
  out.t = t;
  out.z_t = z_t;
  return out;
}

Tensor v_from_signal_noise(const NoiseSchedule& sched, const Tensor& x_hat, const Tensor& eps_hat, double t) {
  require_same_shape(x_hat, eps_hat, "v_from_signal_noise");
  const auto [a, s] = sched.eval(t);
  return axpby(a, eps_hat, -s, x_hat);
}

Tensor v_from_signal(const NoiseSchedule& sched, const Tensor& z_t, const Tensor& x_hat, double t) {
  require_same_shape(z_t, x_hat, "v_from_signal");
  const auto [a, s] = sched.eval(t);
  if (s == 0.0) throw DomainError("v_from_signal: sigma_t = 0");
  return axpby(a / s, z_t, -1.0 / s, x_hat);
}

Tensor ddim_step_eps(const NoiseSchedule& sched, const Tensor& z_t, const Tensor& x_hat, double t, double s) {
  require_same_shape(z_t, x_hat, "ddim_step_eps");
  check_step_times(t, s, "ddim_step_eps");
  const auto [at, st] = sched.eval(t);
  const auto [as, ss] = sched.eval(s);
  if (st == 0.0) throw DomainError("ddim_step_eps: sigma_t = 0 at t = " + std::to_string(t));
  Tensor out(z_t.shape());
  for (std::size_t i = 0; i < z_t.size(); ++i) {
    const double eps_hat = (z_t[i] - at * x_hat[i]) / st;
    out[i] = as * x_hat[i] + ss * eps_hat;
  }
  return out;
}

Tensor ddim_step_v(const NoiseSchedule& sched, const Tensor& z_t, const Tensor& v_hat, double t, double s) {
  require_same_shape(z_t, v_hat, "ddim_step_v");
  check_step_times(t, s, "ddim_step_v");
  const auto [at, st] = sched.eval(t);
  const auto [as, ss] = sched.eval(s);
  Tensor out(z_t.shape());
  for (std::size_t i = 0; i < z_t.size(); ++i) {
    const double x_hat = at * z_t[i] - st * v_hat[i];
    const double eps_hat = at * v_hat[i] + st * z_t[i];
    out[i] = as * x_hat + ss * eps_hat;
  }
  return out;
}

Tensor prev_step(const NoiseSchedule& sched, const Tensor& x_hat, const Tensor& eps_true, double s) {
  require_same_shape(x_hat, eps_true, "prev_step");
  const auto [as, ss] = sched.eval(s);
  return axpby(as, x_hat, ss, eps_true);
}

NoiseTransport noise_transport(const NoiseSchedule& sched, const Tensor& x_hat_t, const Tensor& eps_hat_t,
                                 double t, double s) {
  require_same_shape(x_hat_t, eps_hat_t, "noise_transport");
  const auto [at, st] = sched.eval(t);
  const auto [as, ss] = sched.eval(s);
  if (as == 0.0) throw DomainError("noise_transport: alpha_s = 0 at s = " + std::to_string(s));

  // Reconstruct the latent and velocity at t.
  const Tensor z_t = axpby(at, x_hat_t, st, eps_hat_t);
  const Tensor v_t = axpby(at, eps_hat_t, -st, x_hat_t);

  // Latent at s by the DDIM rule.
  Tensor z_s(z_t.shape());
  for (std::size_t i = 0; i < z_t.size(); ++i) {
    z_s[i] = as * (at * z_t[i] - st * v_t[i]) + ss * (at * v_t[i] + st * z_t[i]);
  }

  // Equal noise predictions: alpha_s v_s + sigma_s z_s = alpha_t v_t + sigma_t z_t.
  NoiseTransport out{Tensor(z_t.shape()), Tensor(z_t.shape())};
  for (std::size_t i = 0; i < z_t.size(); ++i) {
    const double eps_t = at * v_t[i] + st * z_t[i];
    const double v_s = (eps_t - ss * z_s[i]) / as;
    out.x_hat_s_implied[i] = as * z_s[i] - ss * v_s;
    out.eps_hat_s_assumed[i] = as * v_s + ss * z_s[i];
  }
  return out;
}

}  // namespace cdd
