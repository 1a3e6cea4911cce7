#include "sgdlab/optim.hpp"

#include <algorithm>
#include <cmath>

#include "sgdlab/errors.hpp"
#include "sgdlab/spectra.hpp"

namespace sgdlab {

using Eigen::Index;
using Eigen::VectorXd;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Vanilla: return "vanilla";
    case Variant::Adaptive: return "adaptive";
    case Variant::Precond: return "precond";
    case Variant::Adam: return "adam";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "vanilla" || s == "sgd") return Variant::Vanilla;
  if (s == "adaptive") return Variant::Adaptive;
  if (s == "precond") return Variant::Precond;
  if (s == "adam") return Variant::Adam;
  throw InvalidInput("unknown optimizer variant '" + s + "'");
}

void OptimConfig::validate(Index n) const {
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw InvalidInput("eta must be finite and nonnegative");
  if (batch_m < 1 || batch_m > n) throw InvalidInput("batch size must lie in [1, n]");
  if (!(gamma1 >= 0.0 && gamma1 < 1.0) || !(gamma2 >= 0.0 && gamma2 < 1.0))
    throw InvalidInput("ADAM decay rates must lie in [0, 1)");
  if (!(adam_eps >= 0.0)) throw InvalidInput("adam_eps must be nonnegative");
  if (max_iters < 0) throw InvalidInput("max_iters must be nonnegative");
  if (l_refresh < 1) throw InvalidInput("l_refresh must be positive");
}

std::vector<int> sample_batch(Index n, int m, Rng& rng) {
  std::uniform_int_distribution<int> pick(0, static_cast<int>(n) - 1);
  std::vector<int> idx(static_cast<std::size_t>(m));
  for (auto& i : idx) i = pick(rng);
  return idx;
}

double estimate_curvature(const NetSpec& spec, const ParamVector& theta, const Dataset& data, std::uint64_t seed) {
  const HessianHandle h = hessian_operator(spec, theta, data);
  return power_iteration_norm([&](const VectorXd& v) { return h.apply(v); }, theta.size(), seed, 100, 1e-6);
}

namespace {

double full_loss(const NetSpec& spec, const ParamVector& theta, const Dataset& data, StepState& state) {
  if (std::isnan(state.cached_loss)) state.cached_loss = loss_value(spec, theta, data);
  return state.cached_loss;
}

double current_L(const NetSpec& spec, const ParamVector& theta, const Dataset& data, const OptimConfig& cfg,
                 StepState& state) {
  if (cfg.L > 0.0) return cfg.L;
  if (state.L <= 0.0 || state.t % cfg.l_refresh == 0) {
    const double est = estimate_curvature(spec, theta, data, derive_seed(cfg.seed, stream::kProbe, state.t));
    state.l_running_max = std::max(state.l_running_max, est);
    state.L = cfg.l_safety * state.l_running_max;
  }
  if (!(state.L > 0.0)) throw NumericError("curvature estimate is zero; supply L explicitly");
  return state.L;
}

// Applies theta' = theta - update, fills the shared record fields and
// advances the state.
StepResult finish_step(const NetSpec& spec, const ParamVector& theta, const Dataset& data, StepState& state,
                       StepRecord rec, const VectorXd& update) {
  ParamVector next = theta;
  next.values -= update;
  if (!next.values.allFinite())
    throw DivergenceError("non-finite iterate at t=" + std::to_string(rec.t), theta.values, rec.t);
  const double next_loss = loss_value(spec, next, data);
  if (!std::isfinite(next_loss))
    throw DivergenceError("non-finite loss at t=" + std::to_string(rec.t + 1), theta.values, rec.t);
  rec.delta_f = next_loss - rec.loss;
  state.cached_loss = next_loss;
  state.prev_grad = rec.grad_sg;
  ++state.t;
  return {std::move(next), std::move(rec)};
}

StepRecord begin_record(const NetSpec& spec, const ParamVector& theta, const Dataset& data, const OptimConfig& cfg,
                        Rng& rng, StepState& state) {
  cfg.validate(data.size());
  StepRecord rec;
  rec.t = state.t;
  rec.loss = full_loss(spec, theta, data, state);
  const auto idx = sample_batch(data.size(), cfg.batch_m, rng);
  rec.grad_sg = gradient(spec, theta, data.subset(idx));
  rec.grad_norm = rec.grad_sg.norm();
  if (state.prev_grad.size() == rec.grad_sg.size()) {
    const double denom = rec.grad_norm * state.prev_grad.norm();
    rec.cos_prev = denom > 0.0 ? std::clamp(rec.grad_sg.dot(state.prev_grad) / denom, -1.0, 1.0) : 0.0;
  }
  return rec;
}

StepResult halt(const ParamVector& theta, StepRecord rec, StepState& state, const char* reason) {
  rec.halted = true;
  rec.halt_reason = reason;
  rec.step_used = 0.0;
  rec.delta_f = 0.0;
  state.prev_grad = rec.grad_sg;
  ++state.t;
  return {theta, std::move(rec)};
}

// ||mu||^2 <= tr M always; below this ratio the step window is numerically empty.
bool stationary(const GradMoments& gm) { return gm.mu.squaredNorm() <= 1e-24 * gm.trace_m2; }

}  // namespace

StepResult step_vanilla(const NetSpec& spec, const ParamVector& theta, const Dataset& data, const OptimConfig& cfg,
                        Rng& rng, StepState& state) {
  StepRecord rec = begin_record(spec, theta, data, cfg, rng, state);
  rec.step_used = cfg.eta;
  const VectorXd update = cfg.eta * rec.grad_sg;
  return finish_step(spec, theta, data, state, std::move(rec), update);
}

double adaptive_eta(const VectorXd& mu, double trace_m2, double L) {
  if (!(L > 0.0)) throw InvalidInput("L must be positive");
  if (!(trace_m2 > 0.0)) return 0.0;
  return mu.squaredNorm() / (L * trace_m2);
}

VectorXd precond_diagonal(const VectorXd& mu, const VectorXd& m2_diag, double L) {
  if (!(L > 0.0)) throw InvalidInput("L must be positive");
  if (mu.size() != m2_diag.size()) throw InvalidInput("moment vectors differ in length");
  VectorXd a(mu.size());
  for (Index j = 0; j < mu.size(); ++j) a[j] = m2_diag[j] > 0.0 ? mu[j] * mu[j] / (L * m2_diag[j]) : 0.0;
  return a;
}

StepResult step_adaptive(const NetSpec& spec, const ParamVector& theta, const Dataset& data, const OptimConfig& cfg,
                         Rng& rng, StepState& state) {
  const GradMoments gm = compute_moments(spec, theta, data, std::nullopt, 0);
  const double L = current_L(spec, theta, data, cfg, state);
  StepRecord rec = begin_record(spec, theta, data, cfg, rng, state);
  if (gm.trace_m2 == 0.0) return halt(theta, std::move(rec), state, "global_minimum");
  if (stationary(gm)) return halt(theta, std::move(rec), state, "stationary");
  const double eta_t = adaptive_eta(gm.mu, gm.trace_m2, L);
  rec.step_used = eta_t;
  const VectorXd update = eta_t * rec.grad_sg;
  return finish_step(spec, theta, data, state, std::move(rec), update);
}

StepResult step_precond(const NetSpec& spec, const ParamVector& theta, const Dataset& data, const OptimConfig& cfg,
                        Rng& rng, StepState& state) {
  const GradMoments gm = compute_moments(spec, theta, data, std::nullopt, 0);
  const double L = current_L(spec, theta, data, cfg, state);
  StepRecord rec = begin_record(spec, theta, data, cfg, rng, state);
  if (gm.trace_m2 == 0.0) return halt(theta, std::move(rec), state, "global_minimum");
  if (stationary(gm)) return halt(theta, std::move(rec), state, "stationary");
  const VectorXd a = precond_diagonal(gm.mu, gm.m2_diag, L);
  rec.step_used = a.mean();
  const VectorXd update = a.cwiseProduct(rec.grad_sg);
  return finish_step(spec, theta, data, state, std::move(rec), update);
}

StepResult step_adam(const NetSpec& spec, const ParamVector& theta, const Dataset& data, const OptimConfig& cfg,
                     Rng& rng, StepState& state) {
  StepRecord rec = begin_record(spec, theta, data, cfg, rng, state);
  if (state.adam_m.size() != theta.size()) {
    state.adam_m = VectorXd::Zero(theta.size());
    state.adam_v = VectorXd::Zero(theta.size());
  }
  state.adam_m = cfg.gamma1 * state.adam_m + (1.0 - cfg.gamma1) * rec.grad_sg;
  state.adam_v = cfg.gamma2 * state.adam_v + (1.0 - cfg.gamma2) * rec.grad_sg.cwiseAbs2();
  const VectorXd update = cfg.eta * state.adam_m.cwiseQuotient((state.adam_v.cwiseSqrt().array() + cfg.adam_eps).matrix());
  rec.step_used = cfg.eta;
  return finish_step(spec, theta, data, state, std::move(rec), update);
}

StepResult step(const NetSpec& spec, const ParamVector& theta, const Dataset& data, const OptimConfig& cfg, Rng& rng,
                StepState& state) {
  switch (cfg.variant) {
    case Variant::Vanilla: return step_vanilla(spec, theta, data, cfg, rng, state);
    case Variant::Adaptive: return step_adaptive(spec, theta, data, cfg, rng, state);
    case Variant::Precond: return step_precond(spec, theta, data, cfg, rng, state);
    case Variant::Adam: return step_adam(spec, theta, data, cfg, rng, state);
  }
  throw InvalidInput("unknown variant");
}

RunTrace run_optimizer(const NetSpec& spec, const ParamVector& theta0, const Dataset& data, const OptimConfig& cfg,
                       int run_id, const SnapshotHook& hook) {
  cfg.validate(data.size());
  RunTrace trace;
  trace.run_id = run_id;
  trace.variant = cfg.variant;
  trace.records.reserve(static_cast<std::size_t>(cfg.max_iters));
  Rng rng = make_rng(cfg.seed, stream::kBatch, static_cast<std::uint64_t>(run_id));
  StepState state;
  ParamVector theta = theta0;
  if (hook) hook(0, theta);
  try {
    for (int t = 0; t < cfg.max_iters; ++t) {
      StepResult r = step(spec, theta, data, cfg, rng, state);
      r.record.grad_sg.resize(0);
      const bool halted = r.record.halted;
      trace.records.push_back(std::move(r.record));
      theta = std::move(r.theta);
      if (hook) hook(t + 1, theta);
      if (halted) break;
    }
  } catch (const DivergenceError& e) {
    trace.failed = true;
    trace.error = e.what();
    theta.values = e.last_finite();
  } catch (const NumericError& e) {
    trace.failed = true;
    trace.error = e.what();
  }
  trace.final_theta = std::move(theta);
  return trace;
}

DeviationParams deviation_params(const GradMoments& moments, double eta, double L, int m) {
  if (m < 1) throw InvalidInput("batch size must be positive");
  if (!(eta >= 0.0) || !(L >= 0.0)) throw InvalidInput("eta and L must be nonnegative");
  const double sm = std::sqrt(static_cast<double>(m));
  DeviationParams d;
  d.alpha1 = eta * std::abs(1.0 - eta * L) * moments.sigma_mu_norm / sm;
  d.beta1 = eta * std::abs(1.0 + eta * L) * moments.sigma_mu_norm / sm;
  d.alpha2 = eta * eta * L / (2.0 * m) * moments.sigma_frob;
  d.alpha3 = eta * eta * L / (2.0 * m) * moments.sigma_spec;
  const double centre = -eta * moments.mu.squaredNorm();
  const double half = 0.5 * eta * eta * L * moments.trace_m2;
  d.interval_lo = centre - half;
  d.interval_hi = centre + half;
  return d;
}

BernsteinParams bernstein_k2(BernsteinParams b) {
  if (!(b.eta > 0.0) || !(b.mu_bound > 0.0) || !(b.sigma_bound > 0.0) || !(b.L > 0.0) || !(b.L1 > 0.0) || b.m < 1 ||
      b.p < 1)
    throw InvalidInput("Bernstein parameters must be positive");
  const double m = b.m;
  b.K1 = 2.0 * b.L1 * b.eta * (b.mu_bound + std::sqrt(b.sigma_bound * b.p / m));
  b.K_inner = b.eta * b.eta * b.L * (b.sigma_bound + b.mu_bound * b.mu_bound) +
              (b.eta * b.mu_bound * b.mu_bound / std::sqrt(m)) * (1.0 + b.eta * b.L) * std::sqrt(b.sigma_bound) +
              (m + 1.0) * b.eta * b.eta * b.L * b.sigma_bound / (2.0 * m);
  b.K2 = std::max(b.K1, b.K_inner);
  return b;
}

Horizon convergence_horizon(double L, double f0, double fstar, double sigma2, int m, double eps) {
  if (!(eps > 0.0)) throw InvalidInput("eps must be positive");
  if (m < 1) throw InvalidInput("batch size must be positive");
  if (f0 < fstar) throw InvalidInput("f0 must not be below the global minimum");
  Horizon h;
  h.main = static_cast<long long>(std::ceil(2.0 * L * (f0 - fstar) * (sigma2 / m + eps) / (eps * eps)));
  h.appendix = static_cast<long long>(std::ceil(4.0 * L * (f0 - fstar) * (sigma2 + eps) / (eps * eps)));
  return h;
}

}  // namespace sgdlab
