#include "sgdlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>
#include <toml.hpp>

#include "sgdlab/errors.hpp"
#include "sgdlab/io.hpp"
#include "sgdlab/moments.hpp"
#include "sgdlab/spectra.hpp"

namespace sgdlab {

namespace fs = std::filesystem;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
  if (runs < 1) throw InvalidInput("runs must be at least 1");
  if (threads < 1) throw InvalidInput("threads must be at least 1");
  if (quantiles.empty()) throw InvalidInput("need at least one quantile level");
  for (double q : quantiles)
    if (!(q > 0.0 && q < 100.0)) throw InvalidInput("quantile levels must lie in (0, 100)");
  if (!(quantile_window > 0.0 && quantile_window <= 0.5)) throw InvalidInput("quantile_window must lie in (0, 0.5]");
  if (optim.max_iters < 1) throw InvalidInput("max_iters must be at least 1");
  for (int t : snapshot_iters)
    if (t < 0 || t > optim.max_iters)
      throw InvalidInput("snapshot iteration " + std::to_string(t) + " outside [0, max_iters]");
  if (overlap_dim < 1) throw InvalidInput("overlap_dim must be positive");
  if (spectrum_keep < 1) throw InvalidInput("spectrum_keep must be positive");
  if (!(init_scale > 0.0)) throw InvalidInput("init_scale must be positive");
  if (!(data.feature_scale > 0.0)) throw InvalidInput("feature_scale must be positive");
  if (!(data.corruption >= 0.0 && data.corruption <= 1.0)) throw InvalidInput("corruption must lie in [0, 1]");
  static const std::set<std::string> sources = {"gauss-k", "mnist", "cifar10", "file"};
  if (!sources.count(data.source)) throw InvalidInput("unknown data source '" + data.source + "'");
  if (data.source == "gauss-k" && (data.n <= 0 || data.d <= 0 || data.k <= 0))
    throw InvalidInput("gauss-k needs positive n, d and k");
  if (data.source != "gauss-k" && data.train_paths.empty())
    throw InvalidInput("data source '" + data.source + "' needs train_paths");
  if (bound.prior_mean != "zero" && bound.prior_mean != "init")
    throw InvalidInput("prior_mean must be 'zero' or 'init'");
  if (!(bound.prior_sigma > 0.0)) throw InvalidInput("prior_sigma must be positive");
  if (!(bound.delta > 0.0 && bound.delta < 1.0)) throw InvalidInput("delta must lie in (0, 1)");
  if (bound.mc_draws < 1) throw InvalidInput("mc_draws must be positive");
  if (optim.eta <= 0.0) throw InvalidInput("eta must be positive");
  if (optim.batch_m < 1) throw InvalidInput("batch_m must be positive");
  if (net.input_dim > 0) net.validate();
}

namespace {

void reject_unknown(const toml::table& t, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, _] : t)
    if (!allowed.count(std::string(key.str())))
      throw InvalidInput("unknown config key '" + (where.empty() ? "" : where + ".") + std::string(key.str()) + "'");
}

template <typename T>
void read_num(const toml::table& t, const char* key, T& out) {
  const toml::node* n = t.get(key);
  if (!n) return;
  if constexpr (std::is_floating_point_v<T>) {
    if (auto v = n->value<double>()) {
      out = static_cast<T>(*v);
      return;
    }
  } else {
    if (auto v = n->value<std::int64_t>()) {
      if (*v < 0 && std::is_unsigned_v<T>) throw InvalidInput(std::string("config key '") + key + "' must be >= 0");
      out = static_cast<T>(*v);
      return;
    }
  }
  throw InvalidInput(std::string("config key '") + key + "' has the wrong type");
}

void read_bool(const toml::table& t, const char* key, bool& out) {
  const toml::node* n = t.get(key);
  if (!n) return;
  auto v = n->value<bool>();
  if (!v) throw InvalidInput(std::string("config key '") + key + "' must be a boolean");
  out = *v;
}

void read_str(const toml::table& t, const char* key, std::string& out) {
  const toml::node* n = t.get(key);
  if (!n) return;
  auto v = n->value<std::string>();
  if (!v) throw InvalidInput(std::string("config key '") + key + "' must be a string");
  out = *v;
}

template <typename T>
void read_array(const toml::table& t, const char* key, std::vector<T>& out) {
  const toml::node* n = t.get(key);
  if (!n) return;
  const toml::array* arr = n->as_array();
  if (!arr) throw InvalidInput(std::string("config key '") + key + "' must be an array");
  out.clear();
  for (const auto& el : *arr) {
    std::optional<T> v;
    if constexpr (std::is_same_v<T, std::string>) {
      v = el.value<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      v = el.value<double>();
    } else {
      if (auto i = el.value<std::int64_t>()) v = static_cast<T>(*i);
    }
    if (!v) throw InvalidInput(std::string("config array '") + key + "' has an element of the wrong type");
    out.push_back(*v);
  }
}

const toml::table* sub_table(const toml::table& root, const char* key) {
  const toml::node* n = root.get(key);
  if (!n) return nullptr;
  const toml::table* t = n->as_table();
  if (!t) throw InvalidInput(std::string("config key '") + key + "' must be a table");
  return t;
}

}  // namespace

ExperimentConfig parse_config(const std::string& toml_text) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    const auto& src = e.source().begin;
    std::size_t offset = 0;
    std::size_t line = 1;
    for (std::size_t i = 0; i < toml_text.size() && line < src.line; ++i) {
      if (toml_text[i] == '\n') ++line;
      offset = i + 1;
    }
    offset += src.column > 0 ? src.column - 1 : 0;
    throw FormatError("config line " + std::to_string(src.line) + ": " + std::string(e.description()), offset);
  }
  ExperimentConfig cfg;
  reject_unknown(root,
                 {"name", "seed", "runs", "threads", "output_dir", "init_scale", "snapshots", "snapshot_iters", "quantiles",
                  "quantile_window", "overlap_dim", "spectrum_keep", "dense_limit", "snapshot_hp", "save_checkpoints",
                  "data", "net", "optim", "bound"},
                 "");
  read_str(root, "name", cfg.name);
  read_num(root, "seed", cfg.seed);
  read_num(root, "runs", cfg.runs);
  read_num(root, "threads", cfg.threads);
  read_str(root, "output_dir", cfg.output_dir);
  read_num(root, "init_scale", cfg.init_scale);
  read_bool(root, "snapshots", cfg.snapshots);
  read_array(root, "snapshot_iters", cfg.snapshot_iters);
  read_array(root, "quantiles", cfg.quantiles);
  read_num(root, "quantile_window", cfg.quantile_window);
  read_num(root, "overlap_dim", cfg.overlap_dim);
  read_num(root, "spectrum_keep", cfg.spectrum_keep);
  read_num(root, "dense_limit", cfg.dense_limit);
  read_bool(root, "snapshot_hp", cfg.snapshot_hp);
  read_bool(root, "save_checkpoints", cfg.save_checkpoints);

  if (const toml::table* d = sub_table(root, "data")) {
    reject_unknown(*d,
                   {"source", "n", "d", "k", "test_n", "corruption", "seed", "feature_scale", "normalize",
                    "train_paths", "test_paths", "limit"},
                   "data");
    read_str(*d, "source", cfg.data.source);
    read_num(*d, "n", cfg.data.n);
    read_num(*d, "d", cfg.data.d);
    read_num(*d, "k", cfg.data.k);
    read_num(*d, "test_n", cfg.data.test_n);
    read_num(*d, "corruption", cfg.data.corruption);
    read_num(*d, "seed", cfg.data.seed);
    read_num(*d, "feature_scale", cfg.data.feature_scale);
    read_bool(*d, "normalize", cfg.data.normalize);
    read_array(*d, "train_paths", cfg.data.train_paths);
    read_array(*d, "test_paths", cfg.data.test_paths);
    read_num(*d, "limit", cfg.data.limit);
  }
  cfg.net.hidden_widths = {10, 30};
  if (const toml::table* n = sub_table(root, "net")) {
    reject_unknown(*n, {"input_dim", "hidden_widths", "num_classes", "biases", "activation", "loss"}, "net");
    read_num(*n, "input_dim", cfg.net.input_dim);
    read_array(*n, "hidden_widths", cfg.net.hidden_widths);
    read_num(*n, "num_classes", cfg.net.num_classes);
    read_bool(*n, "biases", cfg.net.biases);
    std::string act = to_string(cfg.net.activation), loss = to_string(cfg.net.loss);
    read_str(*n, "activation", act);
    read_str(*n, "loss", loss);
    cfg.net.activation = activation_from_string(act);
    cfg.net.loss = loss_from_string(loss);
  }
  if (cfg.data.source == "gauss-k") {
    if (cfg.net.input_dim == 0) cfg.net.input_dim = cfg.data.d;
    if (cfg.net.num_classes == 0) cfg.net.num_classes = cfg.data.k;
  }
  if (const toml::table* o = sub_table(root, "optim")) {
    reject_unknown(*o,
                   {"variant", "eta", "batch_m", "L", "gamma1", "gamma2", "adam_eps", "max_iters", "l_refresh",
                    "l_safety"},
                   "optim");
    std::string variant = to_string(cfg.optim.variant);
    read_str(*o, "variant", variant);
    cfg.optim.variant = variant_from_string(variant);
    read_num(*o, "eta", cfg.optim.eta);
    read_num(*o, "batch_m", cfg.optim.batch_m);
    read_num(*o, "L", cfg.optim.L);
    read_num(*o, "gamma1", cfg.optim.gamma1);
    read_num(*o, "gamma2", cfg.optim.gamma2);
    read_num(*o, "adam_eps", cfg.optim.adam_eps);
    read_num(*o, "max_iters", cfg.optim.max_iters);
    read_num(*o, "l_refresh", cfg.optim.l_refresh);
    read_num(*o, "l_safety", cfg.optim.l_safety);
  }
  if (const toml::table* b = sub_table(root, "bound")) {
    reject_unknown(*b, {"enabled", "delta", "mc_draws", "prior_sigma", "prior_mean"}, "bound");
    read_bool(*b, "enabled", cfg.bound.enabled);
    read_num(*b, "delta", cfg.bound.delta);
    read_num(*b, "mc_draws", cfg.bound.mc_draws);
    read_num(*b, "prior_sigma", cfg.bound.prior_sigma);
    read_str(*b, "prior_mean", cfg.bound.prior_mean);
  }
  cfg.optim.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) { return parse_config(read_text(path)); }

namespace {

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["runs"] = c.runs;
  j["init_scale"] = c.init_scale;
  j["snapshots"] = c.snapshots;
  j["snapshot_iters"] = resolved_snapshots(c);
  j["quantiles"] = c.quantiles;
  j["quantile_window"] = c.quantile_window;
  j["overlap_dim"] = c.overlap_dim;
  j["spectrum_keep"] = c.spectrum_keep;
  j["dense_limit"] = c.dense_limit;
  j["snapshot_hp"] = c.snapshot_hp;
  j["save_checkpoints"] = c.save_checkpoints;
  j["data"] = {{"source", c.data.source},       {"n", c.data.n},
               {"d", c.data.d},                 {"k", c.data.k},
               {"test_n", c.data.test_n},       {"corruption", c.data.corruption},
               {"seed", c.data.seed},           {"feature_scale", c.data.feature_scale},
               {"normalize", c.data.normalize}, {"train_paths", c.data.train_paths},
               {"test_paths", c.data.test_paths}, {"limit", c.data.limit}};
  j["net"] = {{"input_dim", c.net.input_dim},
              {"hidden_widths", c.net.hidden_widths},
              {"num_classes", c.net.num_classes},
              {"biases", c.net.biases},
              {"activation", to_string(c.net.activation)},
              {"loss", to_string(c.net.loss)}};
  j["optim"] = {{"variant", to_string(c.optim.variant)},
                {"eta", c.optim.eta},
                {"batch_m", c.optim.batch_m},
                {"L", c.optim.L},
                {"gamma1", c.optim.gamma1},
                {"gamma2", c.optim.gamma2},
                {"adam_eps", c.optim.adam_eps},
                {"max_iters", c.optim.max_iters},
                {"l_refresh", c.optim.l_refresh},
                {"l_safety", c.optim.l_safety}};
  j["bound"] = {{"enabled", c.bound.enabled},
                {"delta", c.bound.delta},
                {"mc_draws", c.bound.mc_draws},
                {"prior_sigma", c.bound.prior_sigma},
                {"prior_mean", c.bound.prior_mean}};
  return j;
}

}  // namespace

std::string config_json(const ExperimentConfig& cfg) { return config_to_json(cfg).dump(); }

std::string config_hash(const ExperimentConfig& cfg) { return hex64(fnv1a64(config_json(cfg))); }

std::string config_toml(const ExperimentConfig& c) {
  auto arr = [](const auto& v) {
    toml::array a;
    for (const auto& x : v) a.push_back(x);
    return a;
  };
  auto u64 = [](std::uint64_t x) {
    if (x > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()))
      throw InvalidInput("seed does not fit a TOML integer");
    return static_cast<std::int64_t>(x);
  };
  toml::table t{{"name", c.name},
                {"seed", u64(c.seed)},
                {"runs", c.runs},
                {"init_scale", c.init_scale},
                {"snapshots", c.snapshots},
                {"snapshot_iters", arr(c.snapshot_iters)},
                {"quantiles", arr(c.quantiles)},
                {"quantile_window", c.quantile_window},
                {"overlap_dim", c.overlap_dim},
                {"spectrum_keep", c.spectrum_keep},
                {"dense_limit", static_cast<std::int64_t>(c.dense_limit)},
                {"snapshot_hp", c.snapshot_hp},
                {"save_checkpoints", c.save_checkpoints}};
  t.insert("data", toml::table{{"source", c.data.source},
                               {"n", c.data.n},
                               {"d", c.data.d},
                               {"k", c.data.k},
                               {"test_n", c.data.test_n},
                               {"corruption", c.data.corruption},
                               {"seed", u64(c.data.seed)},
                               {"feature_scale", c.data.feature_scale},
                               {"normalize", c.data.normalize},
                               {"train_paths", arr(c.data.train_paths)},
                               {"test_paths", arr(c.data.test_paths)},
                               {"limit", c.data.limit}});
  t.insert("net", toml::table{{"input_dim", c.net.input_dim},
                              {"hidden_widths", arr(c.net.hidden_widths)},
                              {"num_classes", c.net.num_classes},
                              {"biases", c.net.biases},
                              {"activation", to_string(c.net.activation)},
                              {"loss", to_string(c.net.loss)}});
  t.insert("optim", toml::table{{"variant", to_string(c.optim.variant)},
                                {"eta", c.optim.eta},
                                {"batch_m", c.optim.batch_m},
                                {"L", c.optim.L},
                                {"gamma1", c.optim.gamma1},
                                {"gamma2", c.optim.gamma2},
                                {"adam_eps", c.optim.adam_eps},
                                {"max_iters", c.optim.max_iters},
                                {"l_refresh", c.optim.l_refresh},
                                {"l_safety", c.optim.l_safety}});
  t.insert("bound", toml::table{{"enabled", c.bound.enabled},
                                {"delta", c.bound.delta},
                                {"mc_draws", c.bound.mc_draws},
                                {"prior_sigma", c.bound.prior_sigma},
                                {"prior_mean", c.bound.prior_mean}});
  std::ostringstream ss;
  ss << t << '\n';
  return ss.str();
}

std::vector<int> geometric_snapshots(int max_iters) {
  if (max_iters < 0) throw InvalidInput("max_iters must be nonnegative");
  std::vector<int> out = {0};
  for (long long t = 1; t < max_iters; t *= 2) out.push_back(static_cast<int>(t));
  if (max_iters > 0) out.push_back(max_iters);
  return out;
}

std::vector<int> resolved_snapshots(const ExperimentConfig& cfg) {
  if (!cfg.snapshots) return {};
  std::vector<int> s = cfg.snapshot_iters.empty() ? geometric_snapshots(cfg.optim.max_iters) : cfg.snapshot_iters;
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

// ---------------------------------------------------------------------------
// Data and initialization

ExperimentData build_data(const DataConfig& c) {
  ExperimentData out;
  if (c.source == "gauss-k") {
    out.train = generate_gauss_k(c.n, c.d, c.k, c.seed);
    out.train.features *= c.feature_scale;
    out.train = corrupt_labels(out.train, c.corruption, c.seed);
    if (c.test_n > 0) {
      Dataset test = generate_gauss_k(c.test_n, c.d, c.k, c.seed, 1);
      test.features *= c.feature_scale;
      out.test = corrupt_labels(test, c.corruption, derive_seed(c.seed, stream::kHoldout));
    }
  } else {
    auto load = [&](const std::vector<std::string>& paths) -> Dataset {
      if (c.source == "mnist") {
        if (paths.size() != 2) throw InvalidInput("mnist needs {images, labels} paths");
        return load_idx(paths[0], paths[1]);
      }
      if (c.source == "cifar10") {
        std::vector<fs::path> ps(paths.begin(), paths.end());
        return load_cifar_bin(ps);
      }
      if (paths.size() != 1) throw InvalidInput("file source needs exactly one container path");
      return load_dataset(paths[0]);
    };
    out.train = load(c.train_paths);
    if (!c.test_paths.empty()) out.test = load(c.test_paths);
    if (c.limit > 0 && c.limit < out.train.size()) {
      std::vector<int> idx(static_cast<std::size_t>(c.limit));
      for (int i = 0; i < c.limit; ++i) idx[static_cast<std::size_t>(i)] = i;
      out.train = out.train.subset(idx);
    }
    if (c.corruption > 0.0) out.train = corrupt_labels(out.train, c.corruption, c.seed);
  }
  if (c.normalize) {
    const int channels = c.source == "cifar10" ? 3 : 1;
    const NormStats stats = compute_norm_stats(out.train, channels);
    out.train = apply_norm(out.train, stats);
    if (out.test) out.test = apply_norm(*out.test, stats);
  }
  return out;
}

ParamVector initial_params(const ExperimentConfig& cfg, int run_id) {
  Rng rng = make_rng(cfg.seed, stream::kInit, static_cast<std::uint64_t>(run_id));
  return random_params(cfg.net, rng, cfg.init_scale);
}

// ---------------------------------------------------------------------------
// Snapshots

Snapshot take_snapshot(const ExperimentConfig& cfg, const Dataset& train, const ParamVector& theta, int t,
                       std::uint64_t seed) {
  Snapshot s;
  s.t = t;
  const NetSpec& spec = cfg.net;
  const Index p = theta.size();
  const int q = static_cast<int>(std::min<Index>(cfg.overlap_dim, p));
  const GradMoments gm = compute_moments(spec, theta, train, std::nullopt, cfg.dense_limit);
  s.loss = loss_value(spec, theta, train);
  s.trace_m2 = gm.trace_m2;
  s.trace_sigma = gm.trace_sigma;
  s.mu_norm_sq = gm.mu.squaredNorm();
  s.sigma_frob = gm.sigma_frob;
  s.sigma_spec = gm.sigma_spec;
  s.sigma_mu_norm = gm.sigma_mu_norm;

  if (p <= cfg.dense_limit) {
    s.method = "dense";
    const HessianHandle h = dense_hessian(spec, theta, train, cfg.dense_limit);
    const SpectrumReport eh = dense_eigs(h.dense, q);
    const SpectrumReport em = dense_eigs(gm.m2, q);
    s.hf_eigs = eh.eigenvalues;
    s.hf_residuals = eh.residuals;
    s.m_eigs = em.eigenvalues;
    if (cfg.snapshot_hp) {
      const MatrixXd hp = gm.m2 - h.dense;
      s.hp_eigs = dense_eigs(hp, 0).eigenvalues;
      const double spec = std::max(std::abs(s.hp_eigs[0]), std::abs(s.hp_eigs[s.hp_eigs.size() - 1]));
      s.dk = davis_kahan_curve(em, eh, spec, hp.norm(), static_cast<int>(std::min<Index>(q, p - 1)));
    }
    s.curvature = std::max(std::abs(eh.eigenvalues[0]), std::abs(eh.eigenvalues[eh.eigenvalues.size() - 1]));
    s.cosines = principal_angles(eh.eigenvectors, em.eigenvectors).cosines;
    const int k = std::min(q, std::max(1, spec.num_classes));
    s.cosines_k = principal_angles(eh.eigenvectors.leftCols(k), em.eigenvectors.leftCols(k)).cosines;
    const LayerBlocks blocks = layer_blocks(h);
    const int layers = static_cast<int>(blocks.diagonal.size());
    s.block_min_eigs.resize(layers);
    s.block_norms.resize(layers);
    for (int l = 0; l < layers; ++l) {
      const VectorXd ev = dense_eigs(blocks.diagonal[static_cast<std::size_t>(l)], 0).eigenvalues;
      s.block_min_eigs[l] = ev[ev.size() - 1];
      s.block_norms[l] = std::max(std::abs(ev[0]), std::abs(ev[ev.size() - 1]));
    }
    s.loadings = layer_loadings(eh.eigenvectors.col(0), theta.layout).normalized;
  } else {
    s.method = "lanczos";
    const HessianHandle h = hessian_operator(spec, theta, train);
    const int iters = static_cast<int>(std::min<Index>(p, std::max(3 * q, q + 30)));
    const SpectrumReport eh = lanczos_top_k([&](const VectorXd& v) { return h.apply(v); }, p, q, iters, seed);
    s.hf_eigs = eh.eigenvalues;
    s.hf_residuals = eh.residuals;
    s.curvature = eh.eigenvalues.size() ? std::abs(eh.eigenvalues[0]) : 0.0;
    if (eh.eigenvectors.cols() > 0) s.loadings = layer_loadings(eh.eigenvectors.col(0), theta.layout).normalized;
  }
  s.deviation = deviation_params(gm, cfg.optim.eta, s.curvature, cfg.optim.batch_m);
  return s;
}

// ---------------------------------------------------------------------------
// Per-run files

namespace {

std::string run_stem(int run_id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "run_%05d", run_id);
  return buf;
}

const std::vector<std::string> kTraceHeader = {"run_id", "t",       "loss", "grad_norm",
                                               "cos_prev", "delta_f", "step", "variant"};
const std::vector<std::string> kSpectraHeader = {"run_id", "t", "matrix", "rank", "eigenvalue", "method", "residual"};
const std::vector<std::string> kOverlapHeader = {"run_id", "t", "kind", "index", "cosine"};
const std::vector<std::string> kBlocksHeader = {"run_id", "t", "layer", "g_min_eig", "g_norm", "loading"};
const std::vector<std::string> kMomentsHeader = {"run_id",     "t",           "loss",        "trace_m2",
                                                 "trace_sigma", "mu_norm_sq",  "sigma_frob",  "sigma_spec",
                                                 "sigma_mu_norm", "curvature", "alpha1",      "beta1",
                                                 "alpha2",     "alpha3",      "interval_lo", "interval_hi"};
const std::vector<std::string> kQuantileHeader = {"t", "stat", "quantile", "value"};
const std::vector<std::string> kDeltaHeader = {"t", "quantile", "count", "mean", "variance"};
const std::vector<std::string> kDkHeader = {"run_id", "t", "s", "sin_theta_frob", "bound", "eigengap"};
const std::vector<std::string> kOverlapAggHeader = {"t", "kind", "index", "count", "mean", "lo", "hi"};

const std::map<std::string, const std::vector<std::string>*>& schema_by_dir() {
  static const std::map<std::string, const std::vector<std::string>*> m = {
      {"runs", &kTraceHeader},     {"spectra", &kSpectraHeader}, {"overlap", &kOverlapHeader},
      {"blocks", &kBlocksHeader},  {"moments", &kMomentsHeader}, {"dk", &kDkHeader},  {"quantiles.csv", &kQuantileHeader},
      {"delta_variance.csv", &kDeltaHeader}, {"overlap.csv", &kOverlapAggHeader}};
  return m;
}

void write_spectrum_rows(CsvWriter& w, int run_id, int t, const char* matrix, const VectorXd& eigs,
                         const VectorXd& residuals, const std::string& method, int keep) {
  const Index n = eigs.size();
  for (Index r = 0; r < n; ++r) {
    if (r >= keep && r < n - keep) continue;
    w.cell(run_id).cell(t).cell(matrix).cell(static_cast<long long>(r)).cell(eigs[r]).cell(method);
    w.cell(r < residuals.size() ? residuals[r] : std::numeric_limits<double>::quiet_NaN());
    w.end_row();
  }
}

}  // namespace

std::vector<std::string> write_snapshot_files(const ExperimentConfig& cfg, const fs::path& dir, int id,
                                              const std::vector<Snapshot>& snapshots) {
  if (snapshots.empty()) return {};
  std::vector<std::string> files;
  const std::string stem = run_stem(id);
  const std::string srel = "spectra/" + stem + ".csv", orel = "overlap/" + stem + ".csv",
                    brel = "blocks/" + stem + ".csv", mrel = "moments/" + stem + ".csv",
                    drel = "dk/" + stem + ".csv";
  CsvWriter ws(dir / srel, kSpectraHeader), wo(dir / orel, kOverlapHeader), wb(dir / brel, kBlocksHeader),
      wm(dir / mrel, kMomentsHeader), wd(dir / drel, kDkHeader);
  const VectorXd none;
  for (const Snapshot& s : snapshots) {
    write_spectrum_rows(ws, id, s.t, "hf", s.hf_eigs, s.hf_residuals, s.method, cfg.spectrum_keep);
    write_spectrum_rows(ws, id, s.t, "m", s.m_eigs, none, s.method, cfg.spectrum_keep);
    write_spectrum_rows(ws, id, s.t, "hp", s.hp_eigs, none, s.method, cfg.spectrum_keep);
    for (Index i = 0; i < s.cosines.size(); ++i) {
      wo.cell(id).cell(s.t).cell("top_q").cell(static_cast<long long>(i)).cell(s.cosines[i]);
      wo.end_row();
    }
    for (Index i = 0; i < s.cosines_k.size(); ++i) {
      wo.cell(id).cell(s.t).cell("top_k").cell(static_cast<long long>(i)).cell(s.cosines_k[i]);
      wo.end_row();
    }
    for (Index l = 0; l < s.loadings.size(); ++l) {
      wb.cell(id).cell(s.t).cell(static_cast<long long>(l));
      wb.cell(l < s.block_min_eigs.size() ? s.block_min_eigs[l] : std::numeric_limits<double>::quiet_NaN());
      wb.cell(l < s.block_norms.size() ? s.block_norms[l] : std::numeric_limits<double>::quiet_NaN());
      wb.cell(s.loadings[l]);
      wb.end_row();
    }
    for (const DavisKahanReport& r : s.dk) {
      wd.cell(id).cell(s.t).cell(r.s).cell(r.sin_theta_frob).cell(r.bound).cell(r.eigengap);
      wd.end_row();
    }
    const DeviationParams& d = s.deviation;
    wm.cell(id).cell(s.t).cell(s.loss).cell(s.trace_m2).cell(s.trace_sigma).cell(s.mu_norm_sq).cell(s.sigma_frob);
    wm.cell(s.sigma_spec).cell(s.sigma_mu_norm).cell(s.curvature).cell(d.alpha1).cell(d.beta1).cell(d.alpha2);
    wm.cell(d.alpha3).cell(d.interval_lo).cell(d.interval_hi);
    wm.end_row();
  }
  ws.close();
  wo.close();
  wb.close();
  wm.close();
  wd.close();
  files.insert(files.end(), {srel, orel, brel, mrel, drel});
  return files;
}

std::vector<std::string> write_run_files(const ExperimentConfig& cfg, const fs::path& dir, const RunResult& rr) {
  const std::string stem = run_stem(rr.trace.run_id);
  const int id = rr.trace.run_id;
  std::vector<std::string> files;
  {
    const std::string rel = "runs/" + stem + ".csv";
    CsvWriter w(dir / rel, kTraceHeader);
    const std::string variant = to_string(cfg.optim.variant);
    for (const TraceRow& r : rr.trace.rows) {
      w.cell(id).cell(r.t).cell(r.loss).cell(r.grad_norm).cell(r.cos_prev).cell(r.delta_f).cell(r.step).cell(variant);
      w.end_row();
    }
    w.close();
    files.push_back(rel);
  }
  const auto snap_files = write_snapshot_files(cfg, dir, id, rr.snapshots);
  files.insert(files.end(), snap_files.begin(), snap_files.end());
  if (cfg.save_checkpoints) {
    const std::string irel = "checkpoints/" + stem + "_init.json", frel = "checkpoints/" + stem + "_final.json";
    fs::create_directories(dir / "checkpoints");
    save_checkpoint(dir / irel, cfg.net, rr.theta0, cfg.seed);
    save_checkpoint(dir / frel, cfg.net, rr.final_theta, cfg.seed);
    files.insert(files.end(), {irel, frel});
  }
  return files;
}

fs::path trace_path(const fs::path& dir, int run_id) { return dir / "runs" / (run_stem(run_id) + ".csv"); }

RunResult run_single(const ExperimentConfig& cfg, const ExperimentData& data, int run_id) {
  RunResult rr;
  rr.theta0 = initial_params(cfg, run_id);
  const std::vector<int> snaps = resolved_snapshots(cfg);
  const std::set<int> snap_set(snaps.begin(), snaps.end());
  OptimConfig ocfg = cfg.optim;
  ocfg.seed = cfg.seed;
  std::string snapshot_error;
  const SnapshotHook hook = [&](int t, const ParamVector& theta) {
    if (!snap_set.count(t) || !snapshot_error.empty()) return;
    try {
      rr.snapshots.push_back(take_snapshot(cfg, data.train, theta, t,
                                           derive_seed(cfg.seed, stream::kProbe, (std::uint64_t(run_id) << 32) | t)));
    } catch (const NumericError& e) {
      snapshot_error = "snapshot at t=" + std::to_string(t) + ": " + e.what();
    }
  };
  RunTrace tr = run_optimizer(cfg.net, rr.theta0, data.train, ocfg, run_id, hook);
  rr.trace.run_id = run_id;
  rr.trace.failed = tr.failed || !snapshot_error.empty();
  rr.trace.error = tr.failed ? tr.error : snapshot_error;
  rr.trace.rows.reserve(tr.records.size());
  for (const StepRecord& r : tr.records)
    rr.trace.rows.push_back({r.t, r.loss, r.grad_norm, r.cos_prev, r.delta_f, r.step_used});
  rr.final_theta = std::move(tr.final_theta);
  if (cfg.bound.enabled && !rr.trace.failed) {
    const VectorXd mean =
        cfg.bound.prior_mean == "init" ? rr.theta0.values : VectorXd::Zero(rr.theta0.size()).eval();
    BoundOptions bo;
    bo.delta = cfg.bound.delta;
    bo.mc_draws = cfg.bound.mc_draws;
    bo.seed = derive_seed(cfg.seed, stream::kPosterior, static_cast<std::uint64_t>(run_id));
    bo.dense_limit = cfg.dense_limit;
    try {
      rr.bound = bound_report(cfg.net, rr.final_theta, PriorSpec::isotropic(mean, cfg.bound.prior_sigma), data.train,
                              data.test, bo);
    } catch (const NumericError& e) {
      rr.trace.failed = true;
      rr.trace.error = std::string("bound: ") + e.what();
    }
  }
  return rr;
}

// ---------------------------------------------------------------------------
// Aggregation

double trace_stat(const TraceRow& row, const std::string& stat) {
  if (stat == "loss") return row.loss;
  if (stat == "grad_norm") return row.grad_norm;
  if (stat == "cos_prev") return row.cos_prev;
  if (stat == "delta_f") return row.delta_f;
  if (stat == "step") return row.step;
  throw InvalidInput("unknown trace statistic '" + stat + "'");
}

double empirical_quantile(std::vector<double> values, double level) {
  if (values.empty()) throw InvalidInput("quantile of an empty sample");
  if (!(level >= 0.0 && level <= 100.0)) throw InvalidInput("quantile level must lie in [0, 100]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * level / 100.0;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

namespace {

void check_grid(const std::vector<Trace>& traces) {
  if (traces.empty()) throw InvalidInput("no traces");
  const auto& ref = traces.front().rows;
  for (const Trace& tr : traces) {
    if (tr.rows.size() != ref.size())
      throw InvalidInput("run " + std::to_string(tr.run_id) + " has " + std::to_string(tr.rows.size()) +
                         " iterations, expected " + std::to_string(ref.size()));
    for (std::size_t i = 0; i < ref.size(); ++i)
      if (tr.rows[i].t != ref[i].t) throw InvalidInput("run " + std::to_string(tr.run_id) + " has a different iteration grid");
  }
}

}  // namespace

QuantileSeries quantile_series(const std::vector<Trace>& traces, const std::string& stat,
                               const std::vector<double>& levels) {
  check_grid(traces);
  for (double q : levels)
    if (!(q > 0.0 && q < 100.0)) throw InvalidInput("quantile levels must lie in (0, 100)");
  QuantileSeries qs;
  qs.stat = stat;
  qs.levels = levels;
  const std::size_t T = traces.front().rows.size();
  std::vector<double> col(traces.size());
  for (std::size_t i = 0; i < T; ++i) {
    for (std::size_t r = 0; r < traces.size(); ++r) col[r] = trace_stat(traces[r].rows[i], stat);
    std::vector<double> row;
    for (double q : levels) row.push_back(empirical_quantile(col, q));
    qs.iters.push_back(traces.front().rows[i].t);
    qs.values.push_back(std::move(row));
  }
  return qs;
}

namespace {

void band_bounds(int runs, double level, double window, int& lo, int& hi) {
  const int centre = static_cast<int>(std::lround(level / 100.0 * (runs - 1)));
  const int half = static_cast<int>(std::ceil(window * runs));
  lo = std::max(0, centre - half);
  hi = std::min(runs - 1, centre + half);
}

}  // namespace

int quantile_band_size(int runs, double level, double window) {
  if (runs < 1) return 0;
  int lo = 0, hi = 0;
  band_bounds(runs, level, window, lo, hi);
  return hi - lo + 1;
}

DeltaDistribution delta_distribution(const std::vector<Trace>& traces, int t, double level, double window,
                                     int min_runs) {
  check_grid(traces);
  if (!(level >= 0.0 && level <= 100.0)) throw InvalidInput("quantile level must lie in [0, 100]");
  if (!(window >= 0.0)) throw InvalidInput("window must be nonnegative");
  const auto& grid = traces.front().rows;
  std::size_t idx = grid.size();
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (grid[i].t == t) idx = i;
  if (idx == grid.size()) throw InvalidInput("iteration " + std::to_string(t) + " not in the trace grid");
  const int R = static_cast<int>(traces.size());
  std::vector<int> order(static_cast<std::size_t>(R));
  for (int r = 0; r < R; ++r) order[static_cast<std::size_t>(r)] = r;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return traces[static_cast<std::size_t>(a)].rows[idx].loss < traces[static_cast<std::size_t>(b)].rows[idx].loss;
  });
  int lo = 0, hi = 0;
  band_bounds(R, level, window, lo, hi);
  if (hi - lo + 1 < min_runs)
    throw InvalidInput("quantile band holds " + std::to_string(hi - lo + 1) + " runs; at least " +
                       std::to_string(min_runs) + " are required (raise the window or the run count)");
  DeltaDistribution d;
  d.t = t;
  d.level = level;
  for (int k = lo; k <= hi; ++k) {
    const int r = order[static_cast<std::size_t>(k)];
    d.runs.push_back(traces[static_cast<std::size_t>(r)].run_id);
    d.sample.push_back(traces[static_cast<std::size_t>(r)].rows[idx].delta_f);
  }
  double sum = 0.0;
  for (double x : d.sample) sum += x;
  d.mean = sum / static_cast<double>(d.sample.size());
  double ss = 0.0;
  for (double x : d.sample) ss += (x - d.mean) * (x - d.mean);
  d.variance = d.sample.size() > 1 ? ss / static_cast<double>(d.sample.size() - 1) : 0.0;
  return d;
}

std::vector<OverlapPoint> overlap_trajectory(const std::vector<std::vector<Snapshot>>& runs, bool use_k) {
  std::map<int, std::vector<const VectorXd*>> by_t;
  for (const auto& run : runs)
    for (const Snapshot& s : run) {
      const VectorXd& c = use_k ? s.cosines_k : s.cosines;
      if (c.size() == 0)
        throw InvalidInput("snapshot at t=" + std::to_string(s.t) + " has no eigenvectors for principal angles");
      by_t[s.t].push_back(&c);
    }
  std::vector<OverlapPoint> out;
  for (const auto& [t, list] : by_t) {
    OverlapPoint pt;
    pt.t = t;
    pt.count = static_cast<int>(list.size());
    Index q = list.front()->size();
    for (const VectorXd* c : list) q = std::min(q, c->size());
    pt.mean = VectorXd::Zero(q);
    for (const VectorXd* c : list) pt.mean += c->head(q);
    pt.mean /= pt.count;
    VectorXd var = VectorXd::Zero(q);
    for (const VectorXd* c : list) var += (c->head(q) - pt.mean).cwiseAbs2();
    if (pt.count > 1) var /= (pt.count - 1);
    const VectorXd half = 1.96 * (var / pt.count).cwiseSqrt();
    pt.lo = pt.mean - half;
    pt.hi = pt.mean + half;
    out.push_back(std::move(pt));
  }
  return out;
}

void write_quantiles(const fs::path& path, const std::vector<QuantileSeries>& series) {
  CsvWriter w(path, kQuantileHeader);
  for (const QuantileSeries& qs : series)
    for (std::size_t i = 0; i < qs.iters.size(); ++i)
      for (std::size_t j = 0; j < qs.levels.size(); ++j) {
        w.cell(qs.iters[i]).cell(qs.stat).cell(qs.levels[j]).cell(qs.values[i][j]);
        w.end_row();
      }
  w.close();
}

void write_delta_variance(const fs::path& path, const std::vector<Trace>& traces, const std::vector<double>& levels,
                          double window) {
  check_grid(traces);
  CsvWriter w(path, kDeltaHeader);
  for (const TraceRow& row : traces.front().rows)
    for (double q : levels) {
      const DeltaDistribution d = delta_distribution(traces, row.t, q, window);
      w.cell(row.t).cell(q).cell(static_cast<long long>(d.sample.size())).cell(d.mean).cell(d.variance);
      w.end_row();
    }
  w.close();
}

void write_overlap(const fs::path& path, const std::vector<OverlapPoint>& top_q,
                   const std::vector<OverlapPoint>& top_k) {
  CsvWriter w(path, kOverlapAggHeader);
  for (const auto& [kind, points] : {std::pair{"top_q", &top_q}, std::pair{"top_k", &top_k}})
    for (const OverlapPoint& p : *points)
      for (Index i = 0; i < p.mean.size(); ++i) {
        w.cell(p.t).cell(kind).cell(static_cast<long long>(i)).cell(p.count).cell(p.mean[i]).cell(p.lo[i]).cell(p.hi[i]);
        w.end_row();
      }
  w.close();
}

namespace {

std::vector<fs::path> run_files(const fs::path& dir, const std::string& sub) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir / sub)) return out;
  for (const auto& e : fs::directory_iterator(dir / sub))
    if (e.is_regular_file() && e.path().extension() == ".csv" && e.path().filename().string().rfind("run_", 0) == 0)
      out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

double to_d(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw FormatError("bad number '" + s + "'", 0);
  return v;
}

}  // namespace

std::vector<Trace> load_traces(const fs::path& dir) {
  std::vector<Trace> out;
  for (const fs::path& p : run_files(dir, "runs")) {
    const CsvTable t = read_csv(p);
    if (t.header != kTraceHeader) throw FormatError(p.string() + ": unexpected trace header", 0);
    Trace tr;
    for (const auto& row : t.rows) {
      tr.run_id = std::stoi(row[0]);
      tr.rows.push_back({std::stoi(row[1]), to_d(row[2]), to_d(row[3]), to_d(row[4]), to_d(row[5]), to_d(row[6])});
    }
    if (t.rows.empty()) {
      const std::string name = p.stem().string();
      tr.run_id = std::stoi(name.substr(4));
    }
    out.push_back(std::move(tr));
  }
  return out;
}

std::vector<std::vector<Snapshot>> load_overlap_snapshots(const fs::path& dir) {
  std::vector<std::vector<Snapshot>> out;
  for (const fs::path& p : run_files(dir, "overlap")) {
    const CsvTable t = read_csv(p);
    if (t.header != kOverlapHeader) throw FormatError(p.string() + ": unexpected overlap header", 0);
    std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_t;
    for (const auto& row : t.rows) {
      auto& slot = by_t[std::stoi(row[1])];
      (row[2] == "top_k" ? slot.second : slot.first).push_back(to_d(row[4]));
    }
    std::vector<Snapshot> snaps;
    for (const auto& [tt, pair] : by_t) {
      Snapshot s;
      s.t = tt;
      s.cosines = Eigen::Map<const VectorXd>(pair.first.data(), static_cast<Index>(pair.first.size()));
      s.cosines_k = Eigen::Map<const VectorXd>(pair.second.data(), static_cast<Index>(pair.second.size()));
      snaps.push_back(std::move(s));
    }
    out.push_back(std::move(snaps));
  }
  return out;
}

std::string bound_json_line(const BoundReport& r, int run_id, const std::string& hash) {
  auto num = [](double x) -> json { return std::isfinite(x) ? json(x) : json(nullptr); };
  json j = {{"run_id", run_id},
            {"config_hash", hash},
            {"n", r.n},
            {"effective_dim", r.effective_dim},
            {"effective_curvature", num(r.effective_curvature)},
            {"weighted_frob", num(r.weighted_frob)},
            {"conf_term", num(r.conf_term)},
            {"kl_rhs", num(r.kl_rhs)},
            {"kl_value", num(r.kl_value)},
            {"train_loss_mc", num(r.train_loss_mc)},
            {"test_loss_mc", num(r.test_loss_mc)},
            {"train_error", num(r.train_error)},
            {"test_error", num(r.test_error)},
            {"gen_gap", num(r.gen_gap)},
            {"gen_gap_mc", num(r.gen_gap_mc)},
            {"pop_loss_upper", num(r.pop_loss_upper)},
            {"vacuous", r.vacuous},
            {"hess_diag_method", r.hess_diag_method}};
  return j.dump();
}

// ---------------------------------------------------------------------------
// Driver

namespace {

json library_versions() {
  return {{"sgdlab", "1.0.0"},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"tomlplusplus", std::to_string(TOML_LIB_MAJOR) + "." + std::to_string(TOML_LIB_MINOR) + "." +
                               std::to_string(TOML_LIB_PATCH)}};
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg_in, const ProgressFn& progress) {
  ExperimentConfig cfg = cfg_in;
  cfg.optim.seed = cfg.seed;
  ExperimentData data = build_data(cfg.data);
  if (cfg.net.input_dim == 0) cfg.net.input_dim = static_cast<int>(data.train.dim());
  if (cfg.net.num_classes == 0) cfg.net.num_classes = data.train.num_classes;
  cfg.validate();
  cfg.net.validate();
  cfg.optim.validate(data.train.size());

  if (cfg.output_dir.empty()) cfg.output_dir = (fs::path("out") / cfg.name).string();
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir / "data");
  write_text(dir / "config.toml", config_toml(cfg));
  save_dataset(dir / "data" / "train.sgdd", data.train);
  if (data.test) save_dataset(dir / "data" / "test.sgdd", *data.test);

  ExperimentResult res;
  res.dir = dir;
  res.runs.resize(static_cast<std::size_t>(cfg.runs));
  std::vector<std::vector<std::string>> files(static_cast<std::size_t>(cfg.runs));
  std::atomic<int> next{0};
  std::mutex mu;
  int done = 0;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= cfg.runs) return;
      try {
        RunResult rr = run_single(cfg, data, r);
        auto f = write_run_files(cfg, dir, rr);
        std::lock_guard<std::mutex> lock(mu);
        res.runs[static_cast<std::size_t>(r)] = std::move(rr);
        files[static_cast<std::size_t>(r)] = std::move(f);
        ++done;
        if (progress) progress(done, cfg.runs);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!first_error) first_error = std::current_exception();
        next.store(cfg.runs);
        return;
      }
    }
  };
  const int nthreads = std::min(cfg.threads, cfg.runs);
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  const std::string hash = config_hash(cfg);
  std::vector<std::string> aggregates;
  std::vector<std::string> notes;

  std::vector<Trace> complete;
  for (const RunResult& rr : res.runs)
    if (!rr.trace.failed && static_cast<int>(rr.trace.rows.size()) == cfg.optim.max_iters) complete.push_back(rr.trace);
  if (complete.size() < res.runs.size())
    notes.push_back(std::to_string(res.runs.size() - complete.size()) +
                    " runs failed or halted early and are excluded from the aggregates");
  if (!complete.empty()) {
    std::vector<QuantileSeries> series;
    for (const char* stat : {"loss", "grad_norm", "cos_prev"}) series.push_back(quantile_series(complete, stat, cfg.quantiles));
    write_quantiles(dir / "quantiles.csv", series);
    aggregates.push_back("quantiles.csv");
    const int R = static_cast<int>(complete.size());
    std::vector<double> band_levels;
    for (double q : cfg.quantiles) {
      const int band = quantile_band_size(R, q, cfg.quantile_window);
      if (band >= kMinBandRuns)
        band_levels.push_back(q);
      else
        notes.push_back("delta variance at quantile " + fmt17(q) + " skipped: band of " + std::to_string(band) +
                        " runs is below " + std::to_string(kMinBandRuns));
    }
    if (!band_levels.empty()) {
      write_delta_variance(dir / "delta_variance.csv", complete, band_levels, cfg.quantile_window);
      aggregates.push_back("delta_variance.csv");
    }
  }
  bool dense_snaps = true;
  std::vector<std::vector<Snapshot>> snaps;
  for (const RunResult& rr : res.runs) {
    for (const Snapshot& s : rr.snapshots)
      if (s.cosines.size() == 0) dense_snaps = false;
    snaps.push_back(rr.snapshots);
  }
  if (dense_snaps && !snaps.empty() && !snaps.front().empty()) {
    write_overlap(dir / "overlap.csv", overlap_trajectory(snaps), overlap_trajectory(snaps, true));
    aggregates.push_back("overlap.csv");
  }
  if (cfg.bound.enabled) {
    std::ostringstream ss;
    for (const RunResult& rr : res.runs)
      if (rr.bound) ss << bound_json_line(*rr.bound, rr.trace.run_id, hash) << '\n';
    write_text(dir / "bounds.jsonl", ss.str());
    aggregates.push_back("bounds.jsonl");
  }

  json manifest;
  manifest["format"] = "sgdlab-manifest";
  manifest["version"] = 1;
  manifest["name"] = cfg.name;
  manifest["config"] = json::parse(config_json(cfg));
  manifest["config_hash"] = hash;
  manifest["versions"] = library_versions();
  manifest["dataset"] = {{"train", "data/train.sgdd"},
                         {"n", data.train.size()},
                         {"d", data.train.dim()},
                         {"k", data.train.num_classes},
                         {"test", data.test ? json("data/test.sgdd") : json(nullptr)}};
  json runs = json::array();
  for (std::size_t r = 0; r < res.runs.size(); ++r) {
    const RunResult& rr = res.runs[r];
    runs.push_back({{"run_id", rr.trace.run_id},
                    {"failed", rr.trace.failed},
                    {"error", rr.trace.error},
                    {"iterations", rr.trace.rows.size()},
                    {"final_loss", rr.trace.rows.empty() ? json(nullptr)
                                                         : (std::isfinite(rr.trace.rows.back().loss)
                                                                ? json(rr.trace.rows.back().loss)
                                                                : json(nullptr))},
                    {"files", files[r]}});
  }
  manifest["runs"] = runs;
  manifest["aggregates"] = aggregates;
  manifest["notes"] = notes;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  return res;
}

RunResult rerun_single(const fs::path& dir, int run_id) {
  ExperimentConfig cfg = load_config(dir / "config.toml");
  if (run_id < 0 || run_id >= cfg.runs) throw InvalidInput("run id " + std::to_string(run_id) + " out of range");
  ExperimentData data;
  data.train = load_dataset(dir / "data" / "train.sgdd");
  if (fs::exists(dir / "data" / "test.sgdd")) data.test = load_dataset(dir / "data" / "test.sgdd");
  RunResult rr = run_single(cfg, data, run_id);
  write_run_files(cfg, dir, rr);
  return rr;
}

// ---------------------------------------------------------------------------
// Validation

namespace {

std::vector<std::string> manifest_files(const json& manifest) {
  std::vector<std::string> listed;
  for (const auto& r : manifest.at("runs"))
    for (const auto& f : r.at("files")) listed.push_back(f.get<std::string>());
  for (const auto& f : manifest.at("aggregates")) listed.push_back(f.get<std::string>());
  listed.push_back("config.toml");
  listed.push_back(manifest.at("dataset").at("train").get<std::string>());
  if (!manifest.at("dataset").at("test").is_null()) listed.push_back(manifest["dataset"]["test"].get<std::string>());
  return listed;
}

}  // namespace

std::string artifact_hash(const fs::path& dir) {
  const std::string text = read_text(dir / "manifest.json");
  std::vector<std::string> files = manifest_files(json::parse(text));
  std::sort(files.begin(), files.end());
  std::string acc = "manifest.json\n" + text;
  for (const std::string& rel : files) acc += "\n" + rel + "\n" + read_text(dir / rel);
  return hex64(fnv1a64(acc));
}

std::vector<std::string> validate_artifacts(const fs::path& dir) {
  std::vector<std::string> problems;
  json manifest;
  try {
    manifest = json::parse(read_text(dir / "manifest.json"));
  } catch (const std::exception& e) {
    problems.push_back(std::string("manifest.json: ") + e.what());
    return problems;
  }
  if (manifest.value("format", "") != "sgdlab-manifest") problems.push_back("manifest.json: wrong format tag");
  std::vector<std::string> listed;
  try {
    listed = manifest_files(manifest);
  } catch (const std::exception& e) {
    problems.push_back(std::string("manifest.json: ") + e.what());
    return problems;
  }
  for (const std::string& rel : listed) {
    const fs::path p = dir / rel;
    if (!fs::exists(p)) {
      problems.push_back(rel + ": missing");
      continue;
    }
    try {
      const std::string ext = p.extension().string();
      if (ext == ".csv") {
        const std::string key = rel.find('/') == std::string::npos ? rel : rel.substr(0, rel.find('/'));
        const auto& schemas = schema_by_dir();
        auto it = schemas.find(key);
        if (it == schemas.end()) {
          problems.push_back(rel + ": no schema registered");
          continue;
        }
        const CsvTable t = read_csv(p);
        if (t.header != *it->second) problems.push_back(rel + ": header does not match schema");
      } else if (ext == ".toml") {
        if (config_hash(load_config(p)) != manifest.at("config_hash").get<std::string>())
          problems.push_back(rel + ": config hash does not match the manifest");
      } else if (ext == ".json") {
        load_checkpoint(p);
      } else if (ext == ".sgdd") {
        load_dataset(p);
      } else if (ext == ".jsonl") {
        std::istringstream in(read_text(p));
        std::string line;
        int ln = 0;
        while (std::getline(in, line)) {
          ++ln;
          const json j = json::parse(line);
          for (const char* k : {"run_id", "config_hash", "effective_curvature", "weighted_frob", "kl_rhs",
                                "pop_loss_upper"})
            if (!j.contains(k)) problems.push_back(rel + ":" + std::to_string(ln) + ": missing key " + k);
        }
      }
    } catch (const std::exception& e) {
      problems.push_back(rel + ": " + e.what());
    }
  }
  return problems;
}

}  // namespace sgdlab
