#include "sgdlab/moments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

#include "sgdlab/errors.hpp"
#include "sgdlab/rng.hpp"

namespace sgdlab {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

VectorXd sigma_apply(const MatrixXd& per_sample, const VectorXd& v) {
  const double n = static_cast<double>(per_sample.rows());
  const VectorXd mu = per_sample.colwise().mean().transpose();
  const VectorXd gv = per_sample * v;
  return per_sample.transpose() * gv / n - mu * mu.dot(v);
}

GradMoments moments_from_gradients(const MatrixXd& per_sample, std::optional<int> m, Index dense_limit) {
  const Index n = per_sample.rows();
  const Index p = per_sample.cols();
  if (n == 0) throw InvalidInput("moments need at least one sample");
  if (m && (*m < 1)) throw InvalidInput("batch size must be positive");
  GradMoments gm;
  gm.n = n;
  gm.batch_m = m;
  gm.mu = per_sample.colwise().mean().transpose();
  const MatrixXd centered = per_sample.rowwise() - gm.mu.transpose();
  gm.m2_diag = per_sample.colwise().squaredNorm().transpose() / static_cast<double>(n);
  gm.trace_m2 = gm.m2_diag.sum();
  gm.trace_sigma = centered.squaredNorm() / static_cast<double>(n);

  const VectorXd cmu = centered * gm.mu;
  gm.sigma_mu_norm = std::sqrt(cmu.squaredNorm() / static_cast<double>(n));
  if (p <= dense_limit) {
    gm.sigma.noalias() = centered.transpose() * centered / static_cast<double>(n);
    gm.m2.noalias() = per_sample.transpose() * per_sample / static_cast<double>(n);
    if (m) gm.m2_batch = gm.sigma / static_cast<double>(*m) + gm.mu * gm.mu.transpose();
  }
  if (p <= dense_limit || n <= dense_limit) {
    // C^T C / n and C C^T / n share their nonzero spectrum; use the smaller one.
    const MatrixXd small = p <= n ? (gm.dense() ? gm.sigma : MatrixXd(centered.transpose() * centered / static_cast<double>(n)))
                                  : MatrixXd(centered * centered.transpose() / static_cast<double>(n));
    gm.sigma_frob = small.norm();
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(small, Eigen::EigenvaluesOnly);
    gm.sigma_spec = std::max(0.0, es.eigenvalues().maxCoeff());
  } else {
    gm.sigma_frob = std::numeric_limits<double>::quiet_NaN();
    gm.sigma_spec = std::numeric_limits<double>::quiet_NaN();
  }
  return gm;
}

GradMoments compute_moments(const NetSpec& spec, const ParamVector& theta, const Dataset& data, std::optional<int> m,
                            Index dense_limit) {
  if (data.size() == 0) throw InvalidInput("moments need a nonempty dataset");
  if (m && (*m < 1 || *m > data.size())) throw InvalidInput("batch size must lie in [1, n]");
  if (theta.size() <= dense_limit) return moments_from_gradients(per_sample_gradients(spec, theta, data), m, dense_limit);

  // Above the dense limit only vectors and scalars are kept; gradients are
  // produced in sample chunks so the n x p matrix never exists.
  constexpr Index kChunk = 256;
  const Index n = data.size();
  auto for_chunks = [&](auto&& fn) {
    std::vector<int> idx;
    for (Index start = 0; start < n; start += kChunk) {
      idx.clear();
      for (Index i = start; i < std::min(n, start + kChunk); ++i) idx.push_back(static_cast<int>(i));
      fn(per_sample_gradients(spec, theta, data.subset(idx)));
    }
  };
  GradMoments gm;
  gm.n = n;
  gm.batch_m = m;
  gm.mu = VectorXd::Zero(theta.size());
  gm.m2_diag = VectorXd::Zero(theta.size());
  for_chunks([&](const MatrixXd& g) {
    gm.mu += g.colwise().sum().transpose();
    gm.m2_diag += g.colwise().squaredNorm().transpose();
  });
  gm.mu /= static_cast<double>(n);
  gm.m2_diag /= static_cast<double>(n);
  gm.trace_m2 = gm.m2_diag.sum();
  gm.trace_sigma = std::max(0.0, gm.trace_m2 - gm.mu.squaredNorm());
  double proj = 0.0;
  for_chunks([&](const MatrixXd& g) { proj += (g * gm.mu).squaredNorm(); });
  const double mu2 = gm.mu.squaredNorm();
  gm.sigma_mu_norm = std::sqrt(std::max(0.0, proj / static_cast<double>(n) - mu2 * mu2));
  gm.sigma_frob = std::numeric_limits<double>::quiet_NaN();
  gm.sigma_spec = std::numeric_limits<double>::quiet_NaN();
  return gm;
}

ResidualHp residual_hp(const NetSpec& spec, const ParamVector& theta, const Dataset& data, Index dense_limit) {
  if (theta.size() > dense_limit) throw CapacityError("residual H_p needs dense matrices; p exceeds the dense limit");
  const GradMoments gm = compute_moments(spec, theta, data, std::nullopt, dense_limit);
  const HessianHandle h = dense_hessian(spec, theta, data, dense_limit);
  return {gm.m2 - h.dense};
}

ResidualHp residual_hp_direct(const NetSpec& spec, const ParamVector& theta, const Dataset& data, Index dense_limit) {
  const HessianHandle h = dense_hessian(spec, theta, data, dense_limit, SecondOrderTarget::LikelihoodRatio);
  return {h.dense};
}

FisherResidualReport fisher_residual_check(const VectorXd& theta_star, const std::vector<int>& ns, int trials,
                                           std::uint64_t seed, const VectorXd& offset) {
  const Index p = theta_star.size();
  if (p == 0 || p > 20) throw InvalidInput("fisher residual check expects 1 <= p <= 20");
  if (trials < 1 || ns.size() < 2) throw InvalidInput("need at least two sample sizes and one trial");
  if (offset.size() != 0 && offset.size() != p) throw InvalidInput("offset length mismatch");
  NetSpec spec;
  spec.input_dim = static_cast<int>(p);
  spec.num_classes = 1;
  spec.biases = false;
  spec.activation = Activation::Identity;
  spec.loss = LossKind::Logistic;
  ParamVector eval(spec);
  eval.values = theta_star;
  if (offset.size() == p) eval.values += offset;

  FisherResidualReport rep;
  rep.misspecified = offset.size() == p && offset.squaredNorm() > 0.0;
  for (std::size_t s = 0; s < ns.size(); ++s) {
    const int n = ns[s];
    if (n < 1) throw InvalidInput("sample sizes must be positive");
    std::vector<double> norms;
    for (int t = 0; t < trials; ++t) {
      Rng rng = make_rng(seed, stream::kData, s * 100003ULL + static_cast<std::uint64_t>(t));
      std::normal_distribution<double> normal(0.0, 1.0);
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      Dataset ds;
      ds.num_classes = 2;
      ds.features.resize(n, p);
      ds.labels.resize(n);
      for (int i = 0; i < n; ++i) {
        for (Index j = 0; j < p; ++j) ds.features(i, j) = normal(rng);
        const double z = ds.features.row(i).dot(theta_star);
        ds.labels[i] = unif(rng) < 1.0 / (1.0 + std::exp(-z)) ? 1 : 0;
      }
      norms.push_back(residual_hp_direct(spec, eval, ds).hp.norm());
    }
    double mean = 0.0, var = 0.0;
    for (double v : norms) mean += v;
    mean /= trials;
    for (double v : norms) var += (v - mean) * (v - mean);
    rep.points.push_back({n, mean, trials > 1 ? std::sqrt(var / (trials - 1)) : 0.0});
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double k = static_cast<double>(rep.points.size());
  for (const auto& pt : rep.points) {
    const double x = std::log(static_cast<double>(pt.n)), y = std::log(pt.mean_norm);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  rep.slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
  return rep;
}

}  // namespace sgdlab
