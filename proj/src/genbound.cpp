#include "sgdlab/genbound.hpp"

#include <cmath>

#include "sgdlab/errors.hpp"
#include "sgdlab/rng.hpp"

namespace sgdlab {

using Eigen::Index;
using Eigen::VectorXd;

PriorSpec PriorSpec::isotropic(const VectorXd& theta0, double sigma) {
  return {theta0, VectorXd::Constant(theta0.size(), sigma)};
}

void PriorSpec::validate() const {
  if (theta0.size() != sigmas.size()) throw InvalidInput("prior mean and scales differ in length");
  if (sigmas.size() > 0 && !(sigmas.minCoeff() > 0.0)) throw InvalidInput("prior scales must be positive");
}

PosteriorSpec build_posterior(const VectorXd& hess_diag, const PriorSpec& prior, const VectorXd& theta) {
  prior.validate();
  if (hess_diag.size() != prior.sigmas.size() || theta.size() != prior.sigmas.size())
    throw InvalidInput("posterior inputs differ in length");
  PosteriorSpec q;
  q.theta = theta;
  q.nus = hess_diag.cwiseMax(prior.sigmas.cwiseAbs2().cwiseInverse());
  return q;
}

double kl_gaussians(const PosteriorSpec& q, const PriorSpec& p) {
  p.validate();
  if (q.nus.size() != p.sigmas.size() || q.theta.size() != p.theta0.size()) throw InvalidInput("KL inputs differ in length");
  if (q.nus.size() > 0 && !(q.nus.minCoeff() > 0.0)) throw InvalidInput("posterior precisions must be positive");
  double trace = 0.0, quad = 0.0, logdet = 0.0;
  for (Index j = 0; j < q.nus.size(); ++j) {
    const double s2 = p.sigmas[j] * p.sigmas[j];
    const double prod = s2 * q.nus[j];
    trace += 1.0 / prod - 1.0;
    const double d = q.theta[j] - p.theta0[j];
    quad += d * d / s2;
    logdet += std::log(prod);
  }
  return 0.5 * (trace + quad + logdet);
}

void AlphaTransform::validate(std::size_t layers) const {
  if (alphas.size() != layers) throw InvalidInput("need one alpha per layer");
  double prod = 1.0;
  for (double a : alphas) {
    if (!(a > 0.0) || !std::isfinite(a)) throw InvalidInput("alphas must be positive");
    prod *= a;
  }
  if (std::abs(prod - 1.0) > 1e-12) throw InvalidInput("alphas must multiply to 1");
}

AlphaTransform random_alpha_transform(std::size_t layers, double spread, std::uint64_t seed, std::uint64_t index) {
  if (layers == 0) throw InvalidInput("need at least one layer");
  Rng rng = make_rng(seed, stream::kProbe, index);
  std::normal_distribution<double> normal(0.0, spread);
  std::vector<double> logs(layers);
  double mean = 0.0;
  for (auto& l : logs) {
    l = normal(rng);
    mean += l;
  }
  mean /= static_cast<double>(layers);
  AlphaTransform t;
  for (double l : logs) t.alphas.push_back(std::exp(l - mean));
  // Push the rounding error of the product into the last factor.
  double prod = 1.0;
  for (std::size_t i = 0; i + 1 < layers; ++i) prod *= t.alphas[i];
  t.alphas.back() = 1.0 / prod;
  return t;
}

VectorXd alpha_scaling(const Layout& layout, const AlphaTransform& t) {
  t.validate(layout.size());
  VectorXd a(param_count(layout));
  double cumulative = 1.0;
  for (std::size_t l = 0; l < layout.size(); ++l) {
    const auto& ll = layout[l];
    cumulative *= t.alphas[l];
    a.segment(ll.offset, ll.weight_count()).setConstant(t.alphas[l]);
    a.segment(ll.bias_offset, ll.bias_size).setConstant(t.bias_mode == BiasMode::Cumulative ? cumulative : t.alphas[l]);
  }
  return a;
}

ParamVector alpha_transform(const ParamVector& theta, const AlphaTransform& t) {
  return {theta.layout, theta.values.cwiseProduct(alpha_scaling(theta.layout, t))};
}

PriorSpec transform_prior(const PriorSpec& prior, const Layout& layout, const AlphaTransform& t) {
  prior.validate();
  const VectorXd a = alpha_scaling(layout, t);
  if (a.size() != prior.theta0.size()) throw InvalidInput("prior does not match layout");
  return {prior.theta0.cwiseProduct(a), prior.sigmas.cwiseProduct(a)};
}

double kl_bernoulli(double p, double q) {
  if (!(p >= 0.0 && p <= 1.0) || !(q >= 0.0 && q <= 1.0)) throw InvalidInput("kl_bernoulli arguments must lie in [0, 1]");
  auto term = [](double a, double b) {
    if (a == 0.0) return 0.0;
    if (b == 0.0) return std::numeric_limits<double>::infinity();
    return a * std::log(a / b);
  };
  return term(p, q) + term(1.0 - p, 1.0 - q);
}

KlInverse kl_inverse(double p_hat, double rhs) {
  if (!(p_hat >= 0.0 && p_hat <= 1.0)) throw InvalidInput("empirical loss must lie in [0, 1]");
  if (!(rhs >= 0.0)) throw InvalidInput("kl right-hand side must be nonnegative");
  constexpr double kTop = 1.0 - 1e-15;
  if (p_hat >= kTop || kl_bernoulli(p_hat, kTop) <= rhs) return {1.0, true};
  double lo = p_hat, hi = kTop;
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    if (kl_bernoulli(p_hat, mid) > rhs) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return {hi, false};
}

DiagonalEstimate hutchinson_diagonal(const HessianHandle& h, int probes, std::uint64_t seed) {
  if (probes < 2) throw InvalidInput("need at least two probes");
  const Index p = h.size();
  Rng rng = make_rng(seed, stream::kProbe, 7);
  std::bernoulli_distribution coin(0.5);
  VectorXd sum = VectorXd::Zero(p), sumsq = VectorXd::Zero(p), z(p);
  for (int k = 0; k < probes; ++k) {
    for (Index j = 0; j < p; ++j) z[j] = coin(rng) ? 1.0 : -1.0;
    const VectorXd s = z.cwiseProduct(h.apply(z));
    sum += s;
    sumsq += s.cwiseAbs2();
  }
  DiagonalEstimate est;
  est.probes = probes;
  est.mean = sum / probes;
  const VectorXd var = ((sumsq / probes) - est.mean.cwiseAbs2()).cwiseMax(0.0) * (probes / (probes - 1.0));
  est.std_error = (var / probes).cwiseSqrt();
  return est;
}

BoundReport bound_terms(const VectorXd& hess_diag, const VectorXd& theta, const PriorSpec& prior, int n, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidInput("delta must lie in (0, 1)");
  if (n < 1) throw InvalidInput("n must be positive");
  const PosteriorSpec q = build_posterior(hess_diag, prior, theta);
  BoundReport r;
  r.n = n;
  for (Index j = 0; j < theta.size(); ++j) {
    const double s2 = prior.sigmas[j] * prior.sigmas[j];
    if (hess_diag[j] * s2 > 1.0) {
      ++r.effective_dim;
      r.effective_curvature += std::log(q.nus[j] * s2);
    }
    const double d = theta[j] - prior.theta0[j];
    r.weighted_frob += d * d / s2;
  }
  r.conf_term = std::log((n + 1.0) / delta) / n;
  r.kl_rhs = (r.effective_curvature + r.weighted_frob) / (2.0 * n) + r.conf_term;
  r.kl_value = kl_gaussians(q, prior);
  return r;
}

namespace {

// Mean 0-1 error of networks drawn from the posterior.
double posterior_error(const NetSpec& spec, const PosteriorSpec& q, const Layout& layout, const Dataset& data,
                       int draws, std::uint64_t seed) {
  const VectorXd scale = q.nus.cwiseSqrt().cwiseInverse();
  double total = 0.0;
  for (int d = 0; d < draws; ++d) {
    Rng rng = make_rng(seed, stream::kPosterior, static_cast<std::uint64_t>(d));
    std::normal_distribution<double> normal(0.0, 1.0);
    VectorXd v(q.theta.size());
    for (Index j = 0; j < v.size(); ++j) v[j] = q.theta[j] + scale[j] * normal(rng);
    total += zero_one_error(spec, ParamVector(layout, std::move(v)), data);
  }
  return total / draws;
}

}  // namespace

BoundReport bound_report(const NetSpec& spec, const ParamVector& theta, const PriorSpec& prior, const Dataset& train,
                         const std::optional<Dataset>& test, const BoundOptions& opts,
                         const std::optional<VectorXd>& hess_diag) {
  if (opts.mc_draws < 1) throw InvalidInput("need at least one posterior draw");
  if (prior.theta0.size() != theta.size()) throw InvalidInput("prior does not match parameter count");
  VectorXd diag;
  std::string method = "exact";
  if (hess_diag) {
    diag = *hess_diag;
  } else if (theta.size() <= opts.dense_limit) {
    diag = hessian_diagonal(spec, theta, train);
  } else {
    diag = hutchinson_diagonal(hessian_operator(spec, theta, train), opts.hutchinson_probes, opts.seed).mean;
    method = "hutchinson";
  }
  BoundReport r = bound_terms(diag, theta.values, prior, static_cast<int>(train.size()), opts.delta);
  r.hess_diag_method = method;
  const PosteriorSpec q = build_posterior(diag, prior, theta.values);
  r.train_loss_mc = posterior_error(spec, q, theta.layout, train, opts.mc_draws, opts.seed);
  r.train_error = zero_one_error(spec, theta, train);
  if (test) {
    r.test_loss_mc = posterior_error(spec, q, theta.layout, *test, opts.mc_draws, derive_seed(opts.seed, 1));
    r.test_error = zero_one_error(spec, theta, *test);
    r.gen_gap = r.test_error - r.train_error;
    r.gen_gap_mc = r.test_loss_mc - r.train_loss_mc;
  }
  const KlInverse inv = kl_inverse(r.train_loss_mc, r.kl_rhs);
  r.pop_loss_upper = inv.value;
  r.vacuous = inv.vacuous;
  return r;
}

}  // namespace sgdlab
