#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracle_support.hpp"
#include "sgdlab/errors.hpp"
#include "sgdlab/genbound.hpp"

using namespace sgdlab;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

NetSpec three_layer() {
  NetSpec s;
  s.input_dim = 6;
  s.hidden_widths = {5, 4};
  s.num_classes = 3;
  return s;
}

Dataset small_data(int n, std::uint64_t seed) {
  Dataset ds;
  ds.features = oracle::gaussian_matrix(n, 6, seed);
  ds.num_classes = 3;
  for (int i = 0; i < n; ++i) ds.labels.push_back(i % 3);
  return ds;
}

}  // namespace

TEST(Posterior, CappedPrecisions) {
  const VectorXd h = (VectorXd(5) << 3.0, 0.2, -1.0, 1.0, 50.0).finished();
  const PriorSpec prior{VectorXd::Zero(5), (VectorXd(5) << 1.0, 1.0, 2.0, 0.5, 0.1).finished()};
  const PosteriorSpec q = build_posterior(h, prior, VectorXd::Ones(5));
  for (int j = 0; j < 5; ++j) {
    const double cap = 1.0 / (prior.sigmas[j] * prior.sigmas[j]);
    EXPECT_DOUBLE_EQ(q.nus[j], h[j] > cap ? h[j] : cap);
    EXPECT_GE(q.nus[j], cap);
    EXPECT_GE(q.nus[j], h[j]);
  }
  const PosteriorSpec iso = build_posterior(h, PriorSpec::isotropic(VectorXd::Zero(5)), VectorXd::Zero(5));
  EXPECT_EQ(iso.nus, (VectorXd(5) << 3.0, 1.0, 1.0, 1.0, 50.0).finished());
}

TEST(Posterior, FlatHessianKeepsPriorCovariance) {
  const PriorSpec prior = PriorSpec::isotropic(VectorXd::Zero(4), 2.0);
  const VectorXd theta = (VectorXd(4) << 1.0, -1.0, 0.5, 0.0).finished();
  const PosteriorSpec q = build_posterior(VectorXd::Constant(4, 0.1), prior, theta);
  EXPECT_EQ(q.nus, VectorXd::Constant(4, 0.25));
  EXPECT_NEAR(kl_gaussians(q, prior), 0.5 * theta.squaredNorm() / 4.0, 1e-15);
}

TEST(KlGaussians, ClosedForms) {
  const PriorSpec p{VectorXd::Zero(1), VectorXd::Ones(1)};
  EXPECT_EQ(kl_gaussians({VectorXd::Zero(1), VectorXd::Ones(1)}, p), 0.0);
  EXPECT_DOUBLE_EQ(kl_gaussians({VectorXd::Ones(1), VectorXd::Ones(1)}, p), 0.5);
  EXPECT_THROW(kl_gaussians({VectorXd::Ones(1), VectorXd::Zero(1)}, p), InvalidInput);
  EXPECT_THROW((PriorSpec{VectorXd::Zero(2), VectorXd::Zero(2)}.validate()), InvalidInput);
}

TEST(KlGaussians, MonteCarloOracle) {
  const VectorXd theta0 = (VectorXd(5) << 0.1, -0.3, 0.0, 1.0, 0.5).finished();
  const VectorXd sig = (VectorXd(5) << 1.0, 0.5, 2.0, 1.5, 0.8).finished();
  const VectorXd theta = (VectorXd(5) << 0.4, 0.2, -1.0, 1.0, 0.0).finished();
  const VectorXd nus = (VectorXd(5) << 2.0, 4.0, 0.5, 3.0, 10.0).finished();
  const PriorSpec p{theta0, sig};
  const double exact = kl_gaussians({theta, nus}, p);
  std::mt19937_64 rng(17);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int draws = 1000000;
  double sum = 0.0, sumsq = 0.0;
  for (int d = 0; d < draws; ++d) {
    double lr = 0.0;
    for (int j = 0; j < 5; ++j) {
      const double sq = 1.0 / std::sqrt(nus[j]);
      const double x = theta[j] + sq * normal(rng);
      const double zq = (x - theta[j]) / sq, zp = (x - theta0[j]) / sig[j];
      lr += -std::log(sq) - 0.5 * zq * zq + std::log(sig[j]) + 0.5 * zp * zp;
    }
    sum += lr;
    sumsq += lr * lr;
  }
  const double mean = sum / draws, se = std::sqrt((sumsq / draws - mean * mean) / draws);
  EXPECT_LE(std::abs(mean - exact), 3.0 * se);
}

TEST(KlGaussians, InvariantUnderDiagonalReparameterization) {
  const VectorXd theta0 = oracle::gaussian_matrix(8, 1, 1).col(0), theta = oracle::gaussian_matrix(8, 1, 2).col(0);
  const VectorXd sig = oracle::gaussian_matrix(8, 1, 3).col(0).cwiseAbs().array() + 0.2;
  const VectorXd nus = oracle::gaussian_matrix(8, 1, 4).col(0).cwiseAbs().array() + 0.1;
  const VectorXd a = oracle::gaussian_matrix(8, 1, 5).col(0).array().exp();
  const double before = kl_gaussians({theta, nus}, {theta0, sig});
  const double after = kl_gaussians({a.cwiseProduct(theta), nus.cwiseQuotient(a.cwiseAbs2())},
                                    {a.cwiseProduct(theta0), a.cwiseProduct(sig)});
  EXPECT_NEAR(after, before, 1e-9 * (1.0 + before));
}

TEST(AlphaTransform, IdentityAndValidation) {
  Rng rng(1);
  const ParamVector theta = random_params(three_layer(), rng);
  AlphaTransform id;
  id.alphas = {1.0, 1.0, 1.0};
  EXPECT_EQ(alpha_transform(theta, id).values, theta.values);
  AlphaTransform bad;
  bad.alphas = {2.0, 1.0, 1.0};
  EXPECT_THROW(alpha_transform(theta, bad), InvalidInput);
  bad.alphas = {-1.0, -1.0, 1.0};
  EXPECT_THROW(alpha_transform(theta, bad), InvalidInput);
  bad.alphas = {1.0, 1.0};
  EXPECT_THROW(alpha_transform(theta, bad), InvalidInput);
}

TEST(AlphaTransform, RandomTransformHasUnitProduct) {
  for (std::uint64_t i = 0; i < 10; ++i) {
    const AlphaTransform t = random_alpha_transform(4, 1.5, 3, i);
    double prod = 1.0;
    for (double a : t.alphas) prod *= a;
    EXPECT_NEAR(prod, 1.0, 1e-12);
    EXPECT_NO_THROW(t.validate(4));
  }
}

TEST(AlphaTransform, CumulativeModePreservesOutputs) {
  const NetSpec spec = three_layer();
  const Dataset data = small_data(20, 4);
  Rng rng(2);
  const ParamVector theta = random_params(spec, rng);
  for (std::uint64_t i = 0; i < 5; ++i) {
    const AlphaTransform t = random_alpha_transform(3, 1.0, 8, i);
    const MatrixXd a = forward_loss(spec, theta, data).logits;
    const MatrixXd b = forward_loss(spec, alpha_transform(theta, t), data).logits;
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-9 * (1.0 + a.cwiseAbs().maxCoeff()));
  }
}

TEST(AlphaTransform, FlatModeScalesBiasesPerLayer) {
  Rng rng(3);
  const ParamVector theta = random_params(three_layer(), rng);
  AlphaTransform t;
  t.alphas = {2.0, 0.25, 2.0};
  t.bias_mode = BiasMode::Flat;
  const ParamVector out = alpha_transform(theta, t);
  EXPECT_LE((out.bias(1) - 0.25 * theta.bias(1)).cwiseAbs().maxCoeff(), 0.0);
  t.bias_mode = BiasMode::Cumulative;
  EXPECT_LE((alpha_transform(theta, t).bias(1) - 0.5 * theta.bias(1)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(AlphaTransform, HessianTransformsByInverseScaling) {
  const NetSpec spec = three_layer();
  const Dataset data = small_data(15, 5);
  const ParamVector theta(make_layout(spec), oracle::kink_free_theta(spec, data, 6));
  const AlphaTransform t = random_alpha_transform(3, 0.7, 2, 0);
  const VectorXd a = alpha_scaling(theta.layout, t);
  const MatrixXd h = dense_hessian(spec, theta, data).dense;
  const MatrixXd ht = dense_hessian(spec, alpha_transform(theta, t), data).dense;
  const MatrixXd expect = a.cwiseInverse().asDiagonal() * h * a.cwiseInverse().asDiagonal();
  EXPECT_LE((ht - expect).norm(), 1e-8 * expect.norm());
}

TEST(BoundTerms, AtPriorMeanWithFlatHessian) {
  const VectorXd theta0 = oracle::gaussian_matrix(10, 1, 1).col(0);
  const BoundReport r = bound_terms(VectorXd::Constant(10, 0.5), theta0, PriorSpec::isotropic(theta0), 100, 0.05);
  EXPECT_EQ(r.effective_dim, 0);
  EXPECT_EQ(r.effective_curvature, 0.0);
  EXPECT_EQ(r.weighted_frob, 0.0);
  EXPECT_DOUBLE_EQ(r.conf_term, std::log(101.0 / 0.05) / 100.0);
  EXPECT_DOUBLE_EQ(r.kl_rhs, r.conf_term);
}

TEST(BoundTerms, HandValuesAndKlDominance) {
  const VectorXd h = (VectorXd(4) << 4.0, 0.5, 9.0, -2.0).finished();
  const VectorXd theta0 = VectorXd::Zero(4), theta = (VectorXd(4) << 1.0, 2.0, 0.0, -1.0).finished();
  const PriorSpec prior = PriorSpec::isotropic(theta0, 1.0);
  const BoundReport r = bound_terms(h, theta, prior, 50, 0.1);
  EXPECT_EQ(r.effective_dim, 2);
  EXPECT_NEAR(r.effective_curvature, std::log(4.0) + std::log(9.0), 1e-15);
  EXPECT_DOUBLE_EQ(r.weighted_frob, 6.0);
  EXPECT_NEAR(r.kl_rhs, (std::log(36.0) + 6.0) / 100.0 + std::log(51.0 / 0.1) / 50.0, 1e-15);
  EXPECT_GE(r.kl_rhs, r.kl_value / 50.0 + r.conf_term - 1e-12);
  EXPECT_THROW(bound_terms(h, theta, prior, 50, 1.0), InvalidInput);
  EXPECT_THROW(bound_terms(h, theta, prior, 0, 0.1), InvalidInput);
}

TEST(KlBernoulli, ValuesAndConvexity) {
  EXPECT_EQ(kl_bernoulli(0.3, 0.3), 0.0);
  EXPECT_NEAR(kl_bernoulli(0.0, 0.5), std::log(2.0), 1e-15);
  EXPECT_TRUE(std::isinf(kl_bernoulli(0.5, 0.0)));
  EXPECT_EQ(kl_bernoulli(1.0, 1.0), 0.0);
  EXPECT_THROW(kl_bernoulli(1.1, 0.5), InvalidInput);
  const double h = 0.01;
  for (double q = 0.02; q < 0.98; q += 0.01)
    EXPECT_GE(kl_bernoulli(0.2, q + h) - 2.0 * kl_bernoulli(0.2, q) + kl_bernoulli(0.2, q - h), -1e-15);
}

TEST(KlInverse, BisectionProperties) {
  const KlInverse a = kl_inverse(0.1, 0.05);
  EXPECT_FALSE(a.vacuous);
  EXPECT_GT(a.value, 0.1);
  EXPECT_NEAR(kl_bernoulli(0.1, a.value), 0.05, 1e-8);
  double prev = 0.1;
  for (double rhs : {0.0, 0.01, 0.1, 0.5, 1.0}) {
    const double v = kl_inverse(0.1, rhs).value;
    EXPECT_GE(v, prev);
    prev = v;
  }
  const KlInverse v = kl_inverse(0.5, 100.0);
  EXPECT_TRUE(v.vacuous);
  EXPECT_EQ(v.value, 1.0);
  EXPECT_THROW(kl_inverse(0.1, -1.0), InvalidInput);
}

TEST(Hutchinson, AgreesWithExactDiagonal) {
  const NetSpec spec = three_layer();
  const Dataset data = small_data(12, 9);
  Rng rng(4);
  const ParamVector theta = random_params(spec, rng);
  const VectorXd exact = hessian_diagonal(spec, theta, data);
  const DiagonalEstimate est = hutchinson_diagonal(hessian_operator(spec, theta, data), 4000, 3);
  EXPECT_EQ(est.probes, 4000);
  for (Eigen::Index j = 0; j < exact.size(); ++j)
    EXPECT_LE(std::abs(est.mean[j] - exact[j]), 6.0 * est.std_error[j] + 1e-12) << "j=" << j;
  EXPECT_THROW(hutchinson_diagonal(hessian_operator(spec, theta, data), 1, 0), InvalidInput);
}

TEST(HessianDiagonal, MatchesDense) {
  const NetSpec spec = three_layer();
  const Dataset data = small_data(12, 10);
  Rng rng(5);
  const ParamVector theta = random_params(spec, rng);
  const MatrixXd h = dense_hessian(spec, theta, data).dense;
  EXPECT_LE((hessian_diagonal(spec, theta, data) - h.diagonal()).cwiseAbs().maxCoeff(), 1e-12 * (1.0 + h.norm()));
}

TEST(BoundReport, InvariantsAndDeterminism) {
  const NetSpec spec = three_layer();
  const Dataset train = small_data(30, 11), test = small_data(30, 12);
  Rng rng(6);
  const ParamVector theta0 = random_params(spec, rng), theta = random_params(spec, rng);
  const PriorSpec prior = PriorSpec::isotropic(theta0.values);
  BoundOptions opts;
  opts.mc_draws = 20;
  opts.seed = 5;
  const BoundReport r = bound_report(spec, theta, prior, train, test, opts);
  EXPECT_EQ(r.hess_diag_method, "exact");
  EXPECT_EQ(r.n, 30);
  EXPECT_GE(r.effective_curvature, 0.0);
  EXPECT_GE(r.weighted_frob, 0.0);
  EXPECT_GE(r.pop_loss_upper, r.train_loss_mc);
  EXPECT_DOUBLE_EQ(r.gen_gap, r.test_error - r.train_error);
  EXPECT_DOUBLE_EQ(r.gen_gap_mc, r.test_loss_mc - r.train_loss_mc);
  EXPECT_DOUBLE_EQ(r.weighted_frob, (theta.values - theta0.values).squaredNorm());
  const VectorXd diag = hessian_diagonal(spec, theta, train);
  EXPECT_EQ(r.effective_dim, static_cast<int>((diag.array() > 1.0).count()));
  const BoundReport again = bound_report(spec, theta, prior, train, test, opts);
  EXPECT_EQ(again.train_loss_mc, r.train_loss_mc);
  EXPECT_EQ(again.pop_loss_upper, r.pop_loss_upper);
  const BoundReport no_test = bound_report(spec, theta, prior, train, std::nullopt, opts);
  EXPECT_TRUE(std::isnan(no_test.gen_gap));
}

TEST(BoundReport, HutchinsonAboveDenseLimit) {
  const NetSpec spec = three_layer();
  const Dataset train = small_data(12, 13);
  Rng rng(7);
  const ParamVector theta = random_params(spec, rng);
  BoundOptions opts;
  opts.mc_draws = 2;
  opts.dense_limit = 10;
  opts.hutchinson_probes = 50;
  EXPECT_EQ(bound_report(spec, theta, PriorSpec::isotropic(theta.values), train, std::nullopt, opts).hess_diag_method,
            "hutchinson");
  opts.mc_draws = 0;
  EXPECT_THROW(bound_report(spec, theta, PriorSpec::isotropic(theta.values), train, std::nullopt, opts), InvalidInput);
  EXPECT_THROW(bound_report(spec, theta, PriorSpec::isotropic(VectorXd::Zero(3)), train, std::nullopt, BoundOptions{}),
               InvalidInput);
}

TEST(BoundReport, KlTermsInvariantUnderAlphaTransform) {
  const NetSpec spec = three_layer();
  const Dataset train = small_data(30, 14);
  const ParamVector theta(make_layout(spec), oracle::kink_free_theta(spec, train, 15));
  Rng rng(8);
  const PriorSpec prior{random_params(spec, rng).values, VectorXd::Constant(theta.size(), 0.7)};
  BoundOptions opts;
  opts.mc_draws = 1;
  const BoundReport before = bound_report(spec, theta, prior, train, std::nullopt, opts);
  for (std::uint64_t i = 0; i < 4; ++i) {
    const AlphaTransform t = random_alpha_transform(3, 0.8, 21, i);
    const BoundReport after = bound_report(spec, alpha_transform(theta, t), transform_prior(prior, theta.layout, t),
                                           train, std::nullopt, opts);
    EXPECT_NEAR(after.kl_rhs, before.kl_rhs, 1e-9);
    EXPECT_NEAR(after.kl_value, before.kl_value, 1e-9 * (1.0 + before.kl_value));
    EXPECT_EQ(after.effective_dim, before.effective_dim);
  }
}
