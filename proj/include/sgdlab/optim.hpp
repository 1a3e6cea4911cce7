#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sgdlab/moments.hpp"
#include "sgdlab/netcore.hpp"
#include "sgdlab/rng.hpp"

namespace sgdlab {

enum class Variant { Vanilla, Adaptive, Precond, Adam };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct OptimConfig {
  Variant variant = Variant::Vanilla;
  double eta = 0.1;
  int batch_m = 5;
  double L = 0.0;  // <= 0 means estimate from the Hessian during the run
  double gamma1 = 0.9;
  double gamma2 = 0.999;
  double adam_eps = 1e-8;
  int max_iters = 100;
  std::uint64_t seed = 0;
  int l_refresh = 10;       // iterations between curvature re-estimates
  double l_safety = 1.1;    // multiplier on the running max spectral norm

  void validate(Eigen::Index n) const;
};

struct StepRecord {
  int t = 0;
  double loss = 0.0;             // f(theta_t) on the full training set
  Eigen::VectorXd grad_sg;       // stochastic gradient g_t
  double grad_norm = 0.0;        // ||g_t||_2
  double cos_prev = 0.0;         // cos(g_t, g_{t-1}); 0 at t = 0
  double delta_f = 0.0;          // f(theta_{t+1}) - f(theta_t)
  double step_used = 0.0;        // eta_t, or the mean of the diagonal A_t
  bool halted = false;           // adaptive/precond window degenerated
  std::string halt_reason;       // "stationary" | "global_minimum"
};

struct StepState {
  int t = 0;
  Eigen::VectorXd prev_grad;
  Eigen::VectorXd adam_m;  // first moment average
  Eigen::VectorXd adam_v;  // second moment average
  double cached_loss = std::numeric_limits<double>::quiet_NaN();
  double L = 0.0;
  double l_running_max = 0.0;
};

struct StepResult {
  ParamVector theta;
  StepRecord record;
};

// Indices of a mini-batch of size m drawn uniformly with replacement.
std::vector<int> sample_batch(Eigen::Index n, int m, Rng& rng);

StepResult step_vanilla(const NetSpec& spec, const ParamVector& theta, const Dataset& data, const OptimConfig& cfg,
                        Rng& rng, StepState& state);
StepResult step_adaptive(const NetSpec& spec, const ParamVector& theta, const Dataset& data, const OptimConfig& cfg,
                         Rng& rng, StepState& state);
StepResult step_precond(const NetSpec& spec, const ParamVector& theta, const Dataset& data, const OptimConfig& cfg,
                        Rng& rng, StepState& state);
StepResult step_adam(const NetSpec& spec, const ParamVector& theta, const Dataset& data, const OptimConfig& cfg,
                     Rng& rng, StepState& state);

StepResult step(const NetSpec& spec, const ParamVector& theta, const Dataset& data, const OptimConfig& cfg, Rng& rng,
                StepState& state);

// Step sizes for the adaptive rules, exposed for checks.
double adaptive_eta(const Eigen::VectorXd& mu, double trace_m2, double L);
Eigen::VectorXd precond_diagonal(const Eigen::VectorXd& mu, const Eigen::VectorXd& m2_diag, double L);

struct RunTrace {
  int run_id = 0;
  Variant variant = Variant::Vanilla;
  std::vector<StepRecord> records;  // grad_sg is cleared to save memory
  ParamVector final_theta;
  bool failed = false;
  std::string error;
};

// Called after the iterate for iteration t is known (t = 0 is theta_0).
using SnapshotHook = std::function<void(int t, const ParamVector& theta)>;

RunTrace run_optimizer(const NetSpec& spec, const ParamVector& theta0, const Dataset& data, const OptimConfig& cfg,
                       int run_id, const SnapshotHook& hook = {});

// Estimate of ||H_f(theta)||_2 by power iteration on Hessian-vector products.
double estimate_curvature(const NetSpec& spec, const ParamVector& theta, const Dataset& data, std::uint64_t seed);

struct DeviationParams {
  double alpha1 = 0.0;
  double beta1 = 0.0;
  double alpha2 = 0.0;
  double alpha3 = 0.0;
  double interval_lo = 0.0;
  double interval_hi = 0.0;
};

DeviationParams deviation_params(const GradMoments& moments, double eta, double L, int m);

struct BernsteinParams {
  double eta = 0.0;
  double mu_bound = 0.0;
  double sigma_bound = 0.0;
  double L = 0.0;
  double L1 = 0.0;
  int m = 1;
  int p = 1;
  double K1 = 0.0;
  double K_inner = 0.0;
  double K2 = 0.0;
};

// Fills K1, K_inner and K2 from the other fields.
BernsteinParams bernstein_k2(BernsteinParams params);

struct Horizon {
  long long main = 0;      // ceil(2 L (f0 - f*) (sigma2 / m + eps) / eps^2)
  long long appendix = 0;  // ceil(4 L (f0 - f*) (sigma2 + eps) / eps^2)
};

Horizon convergence_horizon(double L, double f0, double fstar, double sigma2, int m, double eps);

}  // namespace sgdlab
