#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sgdlab/netcore.hpp"

namespace sgdlab {

using LinearOperator = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct SpectrumReport {
  Eigen::VectorXd eigenvalues;   // descending
  Eigen::MatrixXd eigenvectors;  // p x q, columns match the leading eigenvalues
  std::string method;            // "dense" | "lanczos"
  Eigen::VectorXd residuals;     // ||A v - lambda v|| per returned eigenvector
  std::vector<bool> converged;
  bool breakdown = false;
  int iterations = 0;
};

// Full symmetric eigendecomposition. All eigenvalues are returned; vectors
// only for the leading `vectors_q` (-1 = all, 0 = none).
SpectrumReport dense_eigs(const Eigen::MatrixXd& h, int vectors_q = -1);

// Top-k Ritz pairs from `iters` Lanczos steps with full reorthogonalization.
SpectrumReport lanczos_top_k(const LinearOperator& op, Eigen::Index p, int k, int iters, std::uint64_t seed);

// Largest |eigenvalue| by power iteration; stops when the Rayleigh quotient
// changes by less than tol relative.
double power_iteration_norm(const LinearOperator& op, Eigen::Index p, std::uint64_t seed, int max_iters = 200,
                            double tol = 1e-8);

struct SubspaceOverlap {
  Eigen::VectorXd cosines;  // descending, in [0, 1]
  int dim_p = 0;
  int dim_q = 0;
};

SubspaceOverlap principal_angles(const Eigen::MatrixXd& u, const Eigen::MatrixXd& v);

struct DavisKahanReport {
  int s = 0;
  double sin_theta_frob = 0.0;
  double bound = 0.0;
  double eigengap = 0.0;
};

DavisKahanReport davis_kahan(const Eigen::MatrixXd& h, const Eigen::MatrixXd& delta, int s);

// Reports for s = 1..s_max from precomputed decompositions of H (all
// eigenvalues, at least s_max vectors) and H + Delta (at least s_max vectors).
// A zero eigengap gives an infinite bound instead of an error.
std::vector<DavisKahanReport> davis_kahan_curve(const SpectrumReport& h, const SpectrumReport& perturbed,
                                                double delta_spec, double delta_frob, int s_max);

struct LayerLoadings {
  Eigen::VectorXd raw;         // ||v_h||^2
  Eigen::VectorXd normalized;  // ||v_h||^2 / (layer parameter count)
};

LayerLoadings layer_loadings(const Eigen::VectorXd& eigvec, const Layout& layout);

}  // namespace sgdlab
