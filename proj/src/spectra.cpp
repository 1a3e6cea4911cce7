#include "sgdlab/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <lapacke.h>

#include "sgdlab/errors.hpp"
#include "sgdlab/rng.hpp"

namespace sgdlab {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double inf_norm(const MatrixXd& a) { return a.cwiseAbs().rowwise().sum().maxCoeff(); }

// LAPACK dsyevr over an index range [il, iu] (1-based, ascending order).
void syevr(const MatrixXd& h, bool vectors, bool all, lapack_int il, lapack_int iu, VectorXd& w, MatrixXd& z) {
  const lapack_int n = static_cast<lapack_int>(h.rows());
  MatrixXd a = h;
  lapack_int found = 0;
  w.resize(n);
  const lapack_int cols = vectors ? (all ? n : iu - il + 1) : 1;
  z.resize(n, cols);
  std::vector<lapack_int> isuppz(2 * static_cast<std::size_t>(n));
  const lapack_int info =
      LAPACKE_dsyevr(LAPACK_COL_MAJOR, vectors ? 'V' : 'N', all ? 'A' : 'I', 'L', n, a.data(), n, 0.0, 0.0, il, iu,
                     0.0, &found, w.data(), z.data(), n, isuppz.data());
  if (info != 0) throw NumericError("dsyevr failed with info=" + std::to_string(info));
  w.conservativeResize(found);
  if (vectors) z.conservativeResize(n, found);
}

}  // namespace

SpectrumReport dense_eigs(const MatrixXd& h, int vectors_q) {
  if (h.rows() != h.cols() || h.rows() == 0) throw InvalidInput("dense_eigs needs a nonempty square matrix");
  if (!h.allFinite()) throw NumericError("non-finite matrix entry");
  if (inf_norm(h - h.transpose()) > 1e-8 * (1.0 + inf_norm(h))) throw InvalidInput("matrix is not symmetric");
  const Index p = h.rows();
  const int q = vectors_q < 0 ? static_cast<int>(p) : std::min<int>(vectors_q, static_cast<int>(p));

  VectorXd w;
  MatrixXd z;
  MatrixXd vecs;
  if (q == p) {
    syevr(h, true, true, 0, 0, w, z);
    vecs = z.rowwise().reverse();
  } else {
    syevr(h, false, true, 0, 0, w, z);
    if (q > 0) {
      VectorXd wq;
      syevr(h, true, false, static_cast<lapack_int>(p - q + 1), static_cast<lapack_int>(p), wq, z);
      vecs = z.rowwise().reverse();
    }
  }
  SpectrumReport rep;
  rep.method = "dense";
  rep.eigenvalues = w.reverse();
  rep.eigenvectors = vecs;
  rep.residuals.resize(q);
  for (int j = 0; j < q; ++j)
    rep.residuals[j] = (h * vecs.col(j) - rep.eigenvalues[j] * vecs.col(j)).norm();
  rep.converged.assign(q, true);
  return rep;
}

SpectrumReport lanczos_top_k(const LinearOperator& op, Index p, int k, int iters, std::uint64_t seed) {
  if (p <= 0 || k <= 0 || k > iters || iters > p) throw InvalidInput("lanczos needs 0 < k <= iters <= p");
  MatrixXd q(p, iters);
  std::vector<double> alpha, beta;
  Rng rng = make_rng(seed, stream::kProbe);
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorXd v(p);
  for (Index i = 0; i < p; ++i) v[i] = normal(rng);
  v.normalize();

  SpectrumReport rep;
  rep.method = "lanczos";
  int m = 0;
  double scale = 0.0;
  for (int j = 0; j < iters; ++j) {
    q.col(j) = v;
    m = j + 1;
    VectorXd w = op(v);
    if (w.size() != p || !w.allFinite()) throw NumericError("operator returned an invalid vector");
    const double a = v.dot(w);
    alpha.push_back(a);
    // Full reorthogonalization, applied twice for stability.
    for (int pass = 0; pass < 2; ++pass) w -= q.leftCols(m) * (q.leftCols(m).transpose() * w);
    const double b = w.norm();
    scale = std::max(scale, std::abs(a) + b);
    if (j + 1 == iters) break;
    if (b < 1e-14 * scale || b == 0.0) {
      rep.breakdown = true;
      break;
    }
    beta.push_back(b);
    v = w / b;
  }
  rep.iterations = m;

  MatrixXd t = MatrixXd::Zero(m, m);
  for (int j = 0; j < m; ++j) {
    t(j, j) = alpha[j];
    if (j + 1 < m) t(j, j + 1) = t(j + 1, j) = beta[j];
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(t);
  const int got = std::min(k, m);
  rep.eigenvalues.resize(got);
  rep.eigenvectors.resize(p, got);
  rep.residuals.resize(got);
  for (int r = 0; r < got; ++r) {
    const int idx = m - 1 - r;
    rep.eigenvalues[r] = es.eigenvalues()[idx];
    VectorXd y = q.leftCols(m) * es.eigenvectors().col(idx);
    y.normalize();
    rep.eigenvectors.col(r) = y;
    rep.residuals[r] = (op(y) - rep.eigenvalues[r] * y).norm();
    rep.converged.push_back(rep.residuals[r] <= 1e-6 * (1.0 + std::abs(rep.eigenvalues[r])));
  }
  return rep;
}

double power_iteration_norm(const LinearOperator& op, Index p, std::uint64_t seed, int max_iters, double tol) {
  if (p <= 0) throw InvalidInput("power iteration needs p > 0");
  Rng rng = make_rng(seed, stream::kProbe, 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorXd v(p);
  for (Index i = 0; i < p; ++i) v[i] = normal(rng);
  v.normalize();
  double est = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    VectorXd w = op(v);
    const double norm = w.norm();
    if (!std::isfinite(norm)) throw NumericError("power iteration diverged");
    if (norm == 0.0) return 0.0;
    const double prev = est;
    est = norm;
    v = w / norm;
    if (it > 0 && std::abs(est - prev) <= tol * est) break;
  }
  return est;
}

SubspaceOverlap principal_angles(const MatrixXd& u, const MatrixXd& v) {
  if (u.cols() == 0 || v.cols() == 0) throw InvalidInput("principal angles need nonempty bases");
  if (u.rows() != v.rows()) throw InvalidInput("bases live in different dimensions");
  auto orthonormal = [](const MatrixXd& a) -> MatrixXd {
    for (Index j = 0; j < a.cols(); ++j)
      if (a.col(j).norm() == 0.0) throw InvalidInput("basis has a zero column");
    const MatrixXd gram = a.transpose() * a;
    if ((gram - MatrixXd::Identity(a.cols(), a.cols())).cwiseAbs().maxCoeff() <= 1e-6) return a;
    Eigen::HouseholderQR<MatrixXd> qr(a);
    return qr.householderQ() * MatrixXd::Identity(a.rows(), a.cols());
  };
  const MatrixXd uo = orthonormal(u), vo = orthonormal(v);
  Eigen::JacobiSVD<MatrixXd> svd(uo.transpose() * vo);
  SubspaceOverlap out;
  out.dim_p = static_cast<int>(u.cols());
  out.dim_q = static_cast<int>(v.cols());
  out.cosines = svd.singularValues().cwiseMin(1.0).cwiseMax(0.0);
  return out;
}

namespace {

DavisKahanReport dk_from(const SpectrumReport& a, const SpectrumReport& b, double spec, double frob, int s) {
  DavisKahanReport rep;
  rep.s = s;
  rep.eigengap = a.eigenvalues[s - 1] - a.eigenvalues[s];
  rep.bound = rep.eigengap > 0.0 ? 2.0 * std::min(std::sqrt(static_cast<double>(s)) * spec, frob) / rep.eigengap
                                 : std::numeric_limits<double>::infinity();
  // ||sin Theta||_F = ||(I - U U^T) V||_F, which stays accurate for tiny angles.
  const auto u = a.eigenvectors.leftCols(s);
  const auto v = b.eigenvectors.leftCols(s);
  rep.sin_theta_frob = (v - u * (u.transpose() * v)).norm();
  return rep;
}

}  // namespace

DavisKahanReport davis_kahan(const MatrixXd& h, const MatrixXd& delta, int s) {
  if (h.rows() != h.cols() || delta.rows() != h.rows() || delta.cols() != h.cols())
    throw InvalidInput("H and Delta must be square and of equal size");
  if (s < 1 || s >= h.rows()) throw InvalidInput("subspace dimension must lie in [1, p)");
  const SpectrumReport a = dense_eigs(h, s);
  if (!(a.eigenvalues[s - 1] - a.eigenvalues[s] > 0.0))
    throw DegenerateGapError("eigengap lambda_s - lambda_{s+1} is zero");
  const SpectrumReport b = dense_eigs(h + delta, s);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(delta, Eigen::EigenvaluesOnly);
  return dk_from(a, b, es.eigenvalues().cwiseAbs().maxCoeff(), delta.norm(), s);
}

std::vector<DavisKahanReport> davis_kahan_curve(const SpectrumReport& h, const SpectrumReport& perturbed,
                                                double delta_spec, double delta_frob, int s_max) {
  if (s_max < 1 || s_max >= h.eigenvalues.size()) throw InvalidInput("subspace dimension must lie in [1, p)");
  if (h.eigenvectors.cols() < s_max || perturbed.eigenvectors.cols() < s_max ||
      perturbed.eigenvectors.rows() != h.eigenvectors.rows())
    throw InvalidInput("decompositions carry too few eigenvectors");
  std::vector<DavisKahanReport> out;
  for (int s = 1; s <= s_max; ++s) out.push_back(dk_from(h, perturbed, delta_spec, delta_frob, s));
  return out;
}

LayerLoadings layer_loadings(const VectorXd& eigvec, const Layout& layout) {
  if (eigvec.size() != param_count(layout)) throw InvalidInput("eigenvector does not match layout");
  LayerLoadings out;
  out.raw.resize(static_cast<Index>(layout.size()));
  out.normalized.resize(static_cast<Index>(layout.size()));
  for (std::size_t h = 0; h < layout.size(); ++h) {
    const double sq = eigvec.segment(layout[h].offset, layout[h].count()).squaredNorm();
    out.raw[static_cast<Index>(h)] = sq;
    out.normalized[static_cast<Index>(h)] = sq / static_cast<double>(layout[h].count());
  }
  return out;
}

}  // namespace sgdlab
