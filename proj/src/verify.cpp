#include "sgdlab/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "sgdlab/datagen.hpp"
#include "sgdlab/errors.hpp"
#include "sgdlab/genbound.hpp"
#include "sgdlab/moments.hpp"
#include "sgdlab/netcore.hpp"
#include "sgdlab/oracles.hpp"
#include "sgdlab/rng.hpp"

namespace sgdlab {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr std::uint64_t kVerifyStream = 0x76657269;  // "veri"

NetSpec gauss10_net() {
  NetSpec spec;
  spec.input_dim = 50;
  spec.hidden_widths = {10, 30};
  spec.num_classes = 10;
  return spec;
}

Dataset gauss10_data(std::uint64_t seed) {
  Dataset ds = generate_gauss_k(100, 50, 10, seed);
  ds.features *= 0.01;
  return ds;
}

double rel(const MatrixXd& a, const MatrixXd& b) { return (a - b).norm() / (1.0 + b.norm()); }

ParamVector kink_free_params(const NetSpec& spec, const Dataset& data, Rng& rng, double margin) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    ParamVector theta = random_params(spec, rng);
    if (spec.hidden_widths.empty() || min_abs_preactivation(spec, theta, data) > margin) return theta;
  }
  throw NumericError("could not draw a parameter vector away from the ReLU kinks");
}

CheckResult finish(std::string name, double value, double tol, std::string detail = {}) {
  CheckResult r;
  r.name = std::move(name);
  r.value = value;
  r.tolerance = tol;
  r.passed = std::isfinite(value) && value <= tol;
  r.detail = std::move(detail);
  return r;
}

CheckResult check_hessian_identity(const VerifyOptions& o) {
  const NetSpec spec = gauss10_net();
  const Dataset data = gauss10_data(derive_seed(o.seed, kVerifyStream, 1));
  Rng rng = make_rng(o.seed, kVerifyStream, 2);
  double worst = 0.0;
  for (int i = 0; i < o.identity_points; ++i) {
    const ParamVector theta = random_params(spec, rng);
    const MatrixXd hf = dense_hessian(spec, theta, data).dense;
    const MatrixXd m2 = compute_moments(spec, theta, data).m2;
    const MatrixXd hp = residual_hp_direct(spec, theta, data).hp;
    worst = std::max(worst, (hf - (m2 - hp)).norm() / (1.0 + hf.norm()));
  }
  return finish("hessian_identity", worst, 1e-9, std::to_string(o.identity_points) + " points, p=1150");
}

RegressionProblem random_problem(Rng& rng, int n, int p, bool logistic) {
  std::normal_distribution<double> normal(0.0, 1.0);
  RegressionProblem prob;
  prob.x = MatrixXd::NullaryExpr(n, p, [&] { return normal(rng); });
  prob.y.resize(n);
  for (int i = 0; i < n; ++i) prob.y[i] = logistic ? (normal(rng) > 0.0 ? 1.0 : 0.0) : normal(rng);
  prob.noise_sigma = logistic ? 1.0 : 0.7;
  return prob;
}

std::vector<CheckResult> check_closed_forms(const VerifyOptions& o) {
  std::vector<CheckResult> out;
  Rng rng = make_rng(o.seed, kVerifyStream, 3);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (bool logistic : {false, true}) {
    const RegressionProblem prob = random_problem(rng, 12, 4, logistic);
    const VectorXd th = VectorXd::NullaryExpr(4, [&] { return 0.5 * normal(rng); });
    const ClosedForm cf = logistic ? logit_quantities(prob, th) : ls_quantities(prob, th);
    const NetSpec spec = regression_net(prob, logistic);
    const Dataset data = regression_dataset(prob, logistic);
    const ParamVector theta(make_layout(spec), th);
    const double ef = std::abs(loss_value(spec, theta, data) - cf.f) / (1.0 + std::abs(cf.f));
    const double emu = rel(gradient(spec, theta, data), cf.mu);
    const double ehf = rel(dense_hessian(spec, theta, data).dense, cf.hf);
    const double em2 = rel(compute_moments(spec, theta, data).m2, cf.m2);
    const double ehp = rel(residual_hp_direct(spec, theta, data).hp, cf.hp);
    const std::string tag = logistic ? "logistic" : "least_squares";
    out.push_back(finish("closed_form_" + tag, std::max({ef, emu, ehf, em2, ehp}), 1e-10, "f, mu, H_f, M, H_p"));
    const ScalarFn fn = [&](const VectorXd& v) { return loss_value(spec, ParamVector(theta.layout, v), data); };
    const double efd = std::max(rel(fd_gradient(fn, th), cf.mu), rel(fd_hessian(fn, th), cf.hf));
    out.push_back(finish("closed_form_" + tag + "_fd", efd, 1e-5, "finite differences against closed form"));
  }
  return out;
}

std::vector<CheckResult> check_fd(const VerifyOptions& o) {
  const NetSpec spec = gauss10_net();
  const Dataset data = gauss10_data(derive_seed(o.seed, kVerifyStream, 4));
  Rng rng = make_rng(o.seed, kVerifyStream, 5);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst_grad = 0.0, worst_hvp_fd = 0.0, worst_hvp_col = 0.0, worst_lin = 0.0;
  for (int i = 0; i < o.fd_points; ++i) {
    const ParamVector theta = kink_free_params(spec, data, rng, 1e-3);
    const VectorXd g = gradient(spec, theta, data);
    const ScalarFn fn = [&](const VectorXd& v) { return loss_value(spec, ParamVector(theta.layout, v), data); };
    worst_grad = std::max(worst_grad, (fd_gradient(fn, theta.values) - g).norm() / std::max(g.norm(), 1e-12));

    const VectorXd u = VectorXd::NullaryExpr(theta.size(), [&] { return normal(rng); }).normalized();
    const VectorXd w = VectorXd::NullaryExpr(theta.size(), [&] { return normal(rng); }).normalized();
    const VectorXd hu = hessian_vector_product(spec, theta, data, u);
    const double h = default_fd_step(theta.values);
    const VectorXd gp = gradient(spec, ParamVector(theta.layout, theta.values + h * u), data);
    const VectorXd gm = gradient(spec, ParamVector(theta.layout, theta.values - h * u), data);
    worst_hvp_fd = std::max(worst_hvp_fd, ((gp - gm) / (2.0 * h) - hu).norm() / std::max(hu.norm(), 1e-12));

    const MatrixXd hd = dense_hessian(spec, theta, data).dense;
    for (Eigen::Index j : {Eigen::Index{0}, theta.size() / 2, theta.size() - 1}) {
      const VectorXd e = VectorXd::Unit(theta.size(), j);
      const VectorXd col = hessian_vector_product(spec, theta, data, e);
      worst_hvp_col = std::max(worst_hvp_col, (col - hd.col(j)).norm() / (1.0 + hd.col(j).norm()));
    }
    const VectorXd hw = hessian_vector_product(spec, theta, data, w);
    const VectorXd hc = hessian_vector_product(spec, theta, data, 2.0 * u - 3.0 * w);
    worst_lin = std::max(worst_lin, (hc - (2.0 * hu - 3.0 * hw)).norm() / (1.0 + hc.norm()));
  }
  const std::string pts = std::to_string(o.fd_points) + " kink-free points";
  return {finish("fd_gradient", worst_grad, 1e-5, pts), finish("fd_hvp", worst_hvp_fd, 1e-5, pts),
          finish("hvp_dense_column", worst_hvp_col, 1e-9, pts), finish("hvp_linearity", worst_lin, 1e-9, pts)};
}

std::vector<CheckResult> check_kl_invariance(const VerifyOptions& o) {
  NetSpec spec;
  spec.input_dim = 6;
  spec.hidden_widths = {5, 4};
  spec.num_classes = 3;
  Dataset data = generate_gauss_k(30, 6, 3, derive_seed(o.seed, kVerifyStream, 6));
  data.features *= 0.1;
  Rng rng = make_rng(o.seed, kVerifyStream, 7);
  const ParamVector theta = random_params(spec, rng);
  const PriorSpec prior = PriorSpec::isotropic(VectorXd::Zero(theta.size()), 1.0);
  const VectorXd d0 = hessian_diagonal(spec, theta, data);
  const BoundReport before = bound_terms(d0, theta.values, prior, static_cast<int>(data.size()), 0.05);
  double worst = 0.0, min_change = std::numeric_limits<double>::infinity();
  for (int i = 0; i < o.kl_transforms; ++i) {
    const AlphaTransform t = random_alpha_transform(3, 0.5, o.seed, static_cast<std::uint64_t>(i));
    const ParamVector moved = alpha_transform(theta, t);
    const VectorXd d1 = hessian_diagonal(spec, moved, data);
    const BoundReport after = bound_terms(d1, moved.values, transform_prior(prior, theta.layout, t),
                                          static_cast<int>(data.size()), 0.05);
    worst = std::max(worst, std::abs(after.kl_rhs - before.kl_rhs));
    min_change = std::min(min_change, (d1 - d0).cwiseAbs().maxCoeff());
  }
  const std::string n = std::to_string(o.kl_transforms) + " transforms";
  CheckResult changed = finish("kl_hessian_changes", -min_change, 0.0, n + "; value is -min ||diag change||_inf");
  changed.passed = min_change > 0.0;
  return {finish("kl_invariance", worst, 1e-9, n), changed};
}

}  // namespace

std::vector<CheckResult> run_verify_suite(const VerifyOptions& opts) {
  std::vector<CheckResult> out;
  out.push_back(check_hessian_identity(opts));
  for (auto& r : check_closed_forms(opts)) out.push_back(std::move(r));
  for (auto& r : check_fd(opts)) out.push_back(std::move(r));
  for (auto& r : check_kl_invariance(opts)) out.push_back(std::move(r));
  return out;
}

}  // namespace sgdlab
