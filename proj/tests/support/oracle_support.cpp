#include "oracle_support.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Shape {
  std::vector<int> widths;  // d, h1, ..., k
  std::vector<long long> offsets;
};

Shape shape_of(const sgdlab::NetSpec& spec) {
  Shape s;
  s.widths.push_back(spec.input_dim);
  for (int h : spec.hidden_widths) s.widths.push_back(h);
  s.widths.push_back(spec.num_classes);
  long long off = 0;
  for (std::size_t l = 0; l + 1 < s.widths.size(); ++l) {
    s.offsets.push_back(off);
    off += static_cast<long long>(s.widths[l]) * s.widths[l + 1] + (spec.biases ? s.widths[l + 1] : 0);
  }
  s.offsets.push_back(off);
  return s;
}

struct Dual {
  double a = 0.0;
  double b = 0.0;
};
Dual operator+(Dual x, Dual y) { return {x.a + y.a, x.b + y.b}; }
Dual operator-(Dual x, Dual y) { return {x.a - y.a, x.b - y.b}; }
Dual operator*(Dual x, Dual y) { return {x.a * y.a, x.a * y.b + x.b * y.a}; }
Dual operator/(Dual x, Dual y) { return {x.a / y.a, (x.b * y.a - x.a * y.b) / (y.a * y.a)}; }
Dual dexp(Dual x) {
  const double e = std::exp(x.a);
  return {e, e * x.b};
}

// Gradient of the single-sample loss at a dual-valued theta.
void sample_gradient(const sgdlab::NetSpec& spec, const Shape& sh, const std::vector<Dual>& th,
                     const Eigen::Ref<const Eigen::RowVectorXd>& x, int y, std::vector<Dual>& grad) {
  const int layers = static_cast<int>(sh.widths.size()) - 1;
  std::vector<std::vector<Dual>> acts(layers + 1), pre(layers);
  acts[0].resize(sh.widths[0]);
  for (int i = 0; i < sh.widths[0]; ++i) acts[0][i] = {x[i], 0.0};
  for (int l = 0; l < layers; ++l) {
    const int in = sh.widths[l], out = sh.widths[l + 1];
    const long long w0 = sh.offsets[l], b0 = w0 + static_cast<long long>(in) * out;
    pre[l].assign(out, Dual{});
    for (int r = 0; r < out; ++r) {
      Dual z = spec.biases ? th[b0 + r] : Dual{};
      for (int c = 0; c < in; ++c) z = z + th[w0 + static_cast<long long>(c) * out + r] * acts[l][c];
      pre[l][r] = z;
    }
    acts[l + 1] = pre[l];
    if (l + 1 < layers)
      for (Dual& z : acts[l + 1]) z = z.a > 0.0 ? z : (z.a < 0.0 ? Dual{} : Dual{0.5 * z.a, 0.5 * z.b});
  }
  const std::vector<Dual>& logits = pre[layers - 1];
  double mx = logits[0].a;
  for (const Dual& z : logits) mx = std::max(mx, z.a);
  std::vector<Dual> e(logits.size());
  Dual sum{};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = dexp(logits[i] - Dual{mx, 0.0});
    sum = sum + e[i];
  }
  std::vector<Dual> delta(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    delta[i] = e[i] / sum - Dual{static_cast<int>(i) == y ? 1.0 : 0.0, 0.0};
  for (int l = layers - 1; l >= 0; --l) {
    const int in = sh.widths[l], out = sh.widths[l + 1];
    const long long w0 = sh.offsets[l], b0 = w0 + static_cast<long long>(in) * out;
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) {
        Dual& g = grad[w0 + static_cast<long long>(c) * out + r];
        g = g + delta[r] * acts[l][c];
      }
      if (spec.biases) grad[b0 + r] = grad[b0 + r] + delta[r];
    }
    if (l == 0) break;
    std::vector<Dual> prev(in);
    for (int c = 0; c < in; ++c) {
      Dual s{};
      for (int r = 0; r < out; ++r) s = s + th[w0 + static_cast<long long>(c) * out + r] * delta[r];
      const double z = pre[l - 1][c].a;
      const double slope = z > 0.0 ? 1.0 : (z < 0.0 ? 0.0 : 0.5);
      prev[c] = Dual{slope * s.a, slope * s.b};
    }
    delta = std::move(prev);
  }
}

std::vector<Dual> dual_mean_gradient(const sgdlab::NetSpec& spec, const VectorXd& theta, const sgdlab::Dataset& data,
                                     const VectorXd& v) {
  const Shape sh = shape_of(spec);
  std::vector<Dual> th(theta.size());
  for (Eigen::Index j = 0; j < theta.size(); ++j) th[j] = {theta[j], v.size() ? v[j] : 0.0};
  std::vector<Dual> grad(theta.size());
  for (Eigen::Index i = 0; i < data.size(); ++i)
    sample_gradient(spec, sh, th, data.features.row(i), data.labels[static_cast<std::size_t>(i)], grad);
  const double inv = 1.0 / static_cast<double>(data.size());
  for (Dual& g : grad) g = Dual{g.a * inv, g.b * inv};
  return grad;
}

}  // namespace

LdEval ld_forward(const sgdlab::NetSpec& spec, const VectorXd& theta, const sgdlab::Dataset& data) {
  const Shape sh = shape_of(spec);
  const int layers = static_cast<int>(sh.widths.size()) - 1;
  LdEval out;
  long double total = 0.0L;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    std::vector<long double> a(sh.widths[0]);
    for (int c = 0; c < sh.widths[0]; ++c) a[c] = data.features(i, c);
    for (int l = 0; l < layers; ++l) {
      const int in = sh.widths[l], o = sh.widths[l + 1];
      const long long w0 = sh.offsets[l], b0 = w0 + static_cast<long long>(in) * o;
      std::vector<long double> z(o);
      for (int r = 0; r < o; ++r) {
        long double s = spec.biases ? static_cast<long double>(theta[b0 + r]) : 0.0L;
        for (int c = 0; c < in; ++c) s += static_cast<long double>(theta[w0 + static_cast<long long>(c) * o + r]) * a[c];
        z[r] = (l + 1 < layers) ? std::max(s, 0.0L) : s;
      }
      a = std::move(z);
    }
    const long double mx = *std::max_element(a.begin(), a.end());
    long double sum = 0.0L;
    for (long double z : a) sum += std::exp(z - mx);
    const long double lse = mx + std::log(sum);
    total += lse - a[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(i)])];
    std::vector<long double> p(a.size());
    for (std::size_t j = 0; j < a.size(); ++j) p[j] = std::exp(a[j] - lse);
    out.probs.push_back(std::move(p));
  }
  out.loss = total / static_cast<long double>(data.size());
  return out;
}

VectorXd dual_gradient(const sgdlab::NetSpec& spec, const VectorXd& theta, const sgdlab::Dataset& data) {
  const auto g = dual_mean_gradient(spec, theta, data, VectorXd());
  VectorXd out(theta.size());
  for (Eigen::Index j = 0; j < theta.size(); ++j) out[j] = g[j].a;
  return out;
}

VectorXd dual_hvp(const sgdlab::NetSpec& spec, const VectorXd& theta, const sgdlab::Dataset& data,
                  const VectorXd& v) {
  const auto g = dual_mean_gradient(spec, theta, data, v);
  VectorXd out(theta.size());
  for (Eigen::Index j = 0; j < theta.size(); ++j) out[j] = g[j].b;
  return out;
}

long long count_params(const sgdlab::NetSpec& spec) { return shape_of(spec).offsets.back(); }

VectorXd power_top_k(const MatrixXd& a, int k, int iters) {
  const Eigen::Index n = a.rows();
  const double shift = a.norm();
  MatrixXd b = a + shift * MatrixXd::Identity(n, n);
  std::mt19937_64 rng(12345);
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorXd out(k);
  MatrixXd found(n, 0);
  for (int j = 0; j < k; ++j) {
    VectorXd v = VectorXd::NullaryExpr(n, [&] { return normal(rng); });
    double lam = 0.0;
    for (int it = 0; it < iters; ++it) {
      v -= found * (found.transpose() * v);
      v.normalize();
      VectorXd w = b * v;
      w -= found * (found.transpose() * w);
      const double next = v.dot(w);
      v = w;
      if (it > 100 && std::abs(next - lam) <= 1e-15 * std::abs(next)) {
        lam = next;
        break;
      }
      lam = next;
    }
    v -= found * (found.transpose() * v);
    v.normalize();
    out[j] = v.dot(b * v) - shift;
    found.conservativeResize(n, j + 1);
    found.col(j) = v;
  }
  return out;
}

std::vector<std::vector<int>> all_batches(int n, int m) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(static_cast<std::size_t>(m), 0);
  for (;;) {
    out.push_back(cur);
    int pos = m - 1;
    while (pos >= 0 && ++cur[static_cast<std::size_t>(pos)] == n) cur[static_cast<std::size_t>(pos--)] = 0;
    if (pos < 0) break;
  }
  return out;
}

MatrixXd gaussian_matrix(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  return MatrixXd::NullaryExpr(rows, cols, [&] { return normal(rng); });
}

MatrixXd random_symmetric(int n, std::uint64_t seed) {
  const MatrixXd g = gaussian_matrix(n, n, seed);
  return 0.5 * (g + g.transpose());
}

sgdlab::NetSpec gauss10_spec() {
  sgdlab::NetSpec spec;
  spec.input_dim = 50;
  spec.hidden_widths = {10, 30};
  spec.num_classes = 10;
  return spec;
}

sgdlab::Dataset gauss10_data(std::uint64_t seed, double scale) {
  sgdlab::Dataset ds = sgdlab::generate_gauss_k(100, 50, 10, seed);
  ds.features *= scale;
  return ds;
}

VectorXd kink_free_theta(const sgdlab::NetSpec& spec, const sgdlab::Dataset& data, std::uint64_t seed,
                         double margin) {
  const Shape sh = shape_of(spec);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int layers = static_cast<int>(sh.widths.size()) - 1;
  for (int attempt = 0; attempt < 100000; ++attempt) {
    VectorXd th = VectorXd::NullaryExpr(sh.offsets.back(), [&] { return normal(rng); });
    bool ok = true;
    for (Eigen::Index i = 0; ok && i < data.size(); ++i) {
      std::vector<double> a(data.features.row(i).data(), data.features.row(i).data() + sh.widths[0]);
      for (int l = 0; ok && l + 1 < layers; ++l) {
        const int in = sh.widths[l], o = sh.widths[l + 1];
        const long long w0 = sh.offsets[l], b0 = w0 + static_cast<long long>(in) * o;
        std::vector<double> z(o);
        for (int r = 0; r < o; ++r) {
          double s = spec.biases ? th[b0 + r] : 0.0;
          for (int c = 0; c < in; ++c) s += th[w0 + static_cast<long long>(c) * o + r] * a[c];
          if (std::abs(s) < margin) ok = false;
          z[r] = std::max(s, 0.0);
        }
        a = std::move(z);
      }
    }
    if (ok) return th;
  }
  throw std::runtime_error("no kink-free draw found");
}

std::filesystem::path scratch_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() / ("sgdlab_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace oracle
