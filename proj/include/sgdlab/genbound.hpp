#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sgdlab/netcore.hpp"

namespace sgdlab {

struct PriorSpec {
  Eigen::VectorXd theta0;
  Eigen::VectorXd sigmas;  // per-coordinate standard deviations

  static PriorSpec isotropic(const Eigen::VectorXd& theta0, double sigma = 1.0);
  void validate() const;
};

struct PosteriorSpec {
  Eigen::VectorXd theta;
  Eigen::VectorXd nus;  // precisions
};

// nu_j = max(H[j,j], 1 / sigma_j^2).
PosteriorSpec build_posterior(const Eigen::VectorXd& hess_diag, const PriorSpec& prior, const Eigen::VectorXd& theta);

// KL(Q || P) for the diagonal Gaussians Q = N(theta, diag(1/nu)), P = N(theta0, diag(sigma^2)).
double kl_gaussians(const PosteriorSpec& q, const PriorSpec& p);

enum class BiasMode { Cumulative, Flat };

struct AlphaTransform {
  std::vector<double> alphas;  // one per layer, product 1
  BiasMode bias_mode = BiasMode::Cumulative;

  void validate(std::size_t layers) const;
};

// Random transform with log(alpha) ~ N(0, spread^2), rescaled to unit product.
AlphaTransform random_alpha_transform(std::size_t layers, double spread, std::uint64_t seed, std::uint64_t index = 0);

// Per-coordinate positive scale a_j so that the transform is theta -> a .* theta.
Eigen::VectorXd alpha_scaling(const Layout& layout, const AlphaTransform& t);
ParamVector alpha_transform(const ParamVector& theta, const AlphaTransform& t);
// theta0 -> a .* theta0, sigma -> a .* sigma.
PriorSpec transform_prior(const PriorSpec& prior, const Layout& layout, const AlphaTransform& t);

double kl_bernoulli(double p, double q);
struct KlInverse {
  double value = 1.0;
  bool vacuous = false;
};
// Largest x in [p_hat, 1) with kl(p_hat || x) <= rhs, by bisection to 1e-10.
KlInverse kl_inverse(double p_hat, double rhs);

struct DiagonalEstimate {
  Eigen::VectorXd mean;
  Eigen::VectorXd std_error;
  int probes = 0;
};

// Rademacher estimate of diag(H) from Hessian-vector products.
DiagonalEstimate hutchinson_diagonal(const HessianHandle& h, int probes, std::uint64_t seed);

struct BoundOptions {
  double delta = 0.05;
  int mc_draws = 100;
  std::uint64_t seed = 0;
  Eigen::Index dense_limit = kDefaultDenseLimit;
  int hutchinson_probes = 10000;
};

struct BoundReport {
  int n = 0;
  int effective_dim = 0;
  double effective_curvature = 0.0;
  double weighted_frob = 0.0;
  double conf_term = 0.0;
  double kl_rhs = 0.0;
  double kl_value = 0.0;  // exact KL(Q || P), for reference
  double train_loss_mc = 0.0;
  double test_loss_mc = std::numeric_limits<double>::quiet_NaN();
  double train_error = 0.0;  // 0-1 error of theta itself
  double test_error = std::numeric_limits<double>::quiet_NaN();
  double gen_gap = std::numeric_limits<double>::quiet_NaN();     // test_error - train_error
  double gen_gap_mc = std::numeric_limits<double>::quiet_NaN();  // test_loss_mc - train_loss_mc
  double pop_loss_upper = 1.0;
  bool vacuous = false;
  std::string hess_diag_method;  // "exact" | "hutchinson"
};

// Losses entering the kl form are 0-1 classification errors.
BoundReport bound_report(const NetSpec& spec, const ParamVector& theta, const PriorSpec& prior, const Dataset& train,
                         const std::optional<Dataset>& test, const BoundOptions& opts,
                         const std::optional<Eigen::VectorXd>& hess_diag = std::nullopt);

// The parts of the report that depend only on the Hessian diagonal, theta
// and prior (no sampling).
BoundReport bound_terms(const Eigen::VectorXd& hess_diag, const Eigen::VectorXd& theta, const PriorSpec& prior, int n,
                        double delta);

}  // namespace sgdlab
