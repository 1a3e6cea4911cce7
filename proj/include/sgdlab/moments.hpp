#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "sgdlab/netcore.hpp"

namespace sgdlab {

// Moments of the per-sample gradient distribution at a fixed theta.
// Dense p x p forms are filled only when p <= dense_limit; the trace
// scalars are always available.
struct GradMoments {
  Eigen::Index n = 0;
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;     // centered covariance
  Eigen::MatrixXd m2;        // uncentered second moment G^T G / n
  Eigen::VectorXd m2_diag;   // diagonal of m2, always filled
  double trace_m2 = 0.0;
  double trace_sigma = 0.0;
  std::optional<int> batch_m;
  Eigen::MatrixXd m2_batch;  // sigma / m + mu mu^T when batch_m is set

  // Norms of sigma used by the deviation parameters.
  double sigma_mu_norm = 0.0;  // ||sigma^{1/2} mu||_2
  double sigma_frob = 0.0;     // ||sigma||_F
  double sigma_spec = 0.0;     // ||sigma||_2

  bool dense() const { return sigma.size() > 0; }
};

GradMoments compute_moments(const NetSpec& spec, const ParamVector& theta, const Dataset& data,
                            std::optional<int> m = std::nullopt,
                            Eigen::Index dense_limit = kDefaultDenseLimit);

// Moments from an explicit n x p per-sample gradient matrix.
GradMoments moments_from_gradients(const Eigen::MatrixXd& per_sample, std::optional<int> m = std::nullopt,
                                   Eigen::Index dense_limit = kDefaultDenseLimit);

// Matrix-free sigma * v from per-sample gradients.
Eigen::VectorXd sigma_apply(const Eigen::MatrixXd& per_sample, const Eigen::VectorXd& v);

struct ResidualHp {
  Eigen::MatrixXd hp;
};

// M - H_f.
ResidualHp residual_hp(const NetSpec& spec, const ParamVector& theta, const Dataset& data,
                       Eigen::Index dense_limit = kDefaultDenseLimit);
// (1/n) sum_i (1/p_i) d2 p_i, assembled from likelihood-ratio Hessian-vector products.
ResidualHp residual_hp_direct(const NetSpec& spec, const ParamVector& theta, const Dataset& data,
                              Eigen::Index dense_limit = kDefaultDenseLimit);

struct FisherResidualPoint {
  int n = 0;
  double mean_norm = 0.0;  // mean over trials of ||H_p||_F
  double sd_norm = 0.0;
};

struct FisherResidualReport {
  std::vector<FisherResidualPoint> points;
  double slope = 0.0;  // least-squares slope of log(mean_norm) against log(n)
  bool misspecified = false;
};

// Logistic data drawn from the model at theta_star (x ~ N(0, I_p), no
// intercept). H_p is evaluated at theta_star, or at theta_star + offset
// when `offset` is nonzero (misspecified evaluation point).
FisherResidualReport fisher_residual_check(const Eigen::VectorXd& theta_star, const std::vector<int>& ns,
                                           int trials, std::uint64_t seed,
                                           const Eigen::VectorXd& offset = Eigen::VectorXd());

}  // namespace sgdlab
