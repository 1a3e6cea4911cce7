#pragma once

#include <functional>

#include <Eigen/Core>

#include "sgdlab/netcore.hpp"

namespace sgdlab {

// Linear least-squares (real Y) or logistic regression (Y in {0, 1}).
struct RegressionProblem {
  Eigen::MatrixXd x;  // n x p
  Eigen::VectorXd y;  // n
  double noise_sigma = 1.0;

  Eigen::Index n() const { return x.rows(); }
  Eigen::Index p() const { return x.cols(); }
  void validate(bool logistic) const;
};

struct ClosedForm {
  double f = 0.0;
  Eigen::VectorXd mu;
  Eigen::MatrixXd hf;
  Eigen::MatrixXd m2;
  Eigen::MatrixXd hp;  // m2 - hf
};

ClosedForm ls_quantities(const RegressionProblem& prob, const Eigen::VectorXd& theta);
ClosedForm logit_quantities(const RegressionProblem& prob, const Eigen::VectorXd& theta);

// Equivalent single-layer network (identity activation, no bias) and the
// matching dataset, so netcore can be compared against the closed forms.
NetSpec regression_net(const RegressionProblem& prob, bool logistic);
Dataset regression_dataset(const RegressionProblem& prob, bool logistic);

using ScalarFn = std::function<double(const Eigen::VectorXd&)>;

double default_fd_step(const Eigen::VectorXd& theta);
Eigen::VectorXd fd_gradient(const ScalarFn& fn, const Eigen::VectorXd& theta, double h = 0.0);
Eigen::MatrixXd fd_hessian(const ScalarFn& fn, const Eigen::VectorXd& theta, double h = 0.0);
// Central differences of an analytic gradient; cheaper than fd_hessian when
// a gradient is available.
Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad,
                            const Eigen::VectorXd& theta, double h = 0.0);

// Premises for the least-squares descent guarantee with eta = alpha / (beta L).
struct LsPremises {
  double alpha_main = 0.0;      // sigma_min(X X^T / n)
  double alpha_appendix = 0.0;  // sigma_min(X X^T / n^2)
  double beta = 0.0;            // max_i ||x_i||^2
  double lipschitz = 0.0;       // ||X^T X / (n sigma^2)||_2
};

LsPremises ls_premises(const RegressionProblem& prob);

}  // namespace sgdlab
