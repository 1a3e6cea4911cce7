#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "sgdlab/errors.hpp"
#include "sgdlab/harness.hpp"
#include "sgdlab/io.hpp"

using namespace sgdlab;
namespace fs = std::filesystem;
using Eigen::VectorXd;

namespace {

const char* kTiny = R"(
name = "tiny"
seed = 3
runs = 3
[data]
n = 20
d = 4
k = 2
test_n = 20
[net]
hidden_widths = [3]
[optim]
eta = 0.05
batch_m = 4
max_iters = 6
[bound]
enabled = true
mc_draws = 3
)";

ExperimentConfig tiny(const std::string& dir) {
  ExperimentConfig cfg = parse_config(kTiny);
  cfg.output_dir = (fs::temp_directory_path() / dir).string();
  fs::remove_all(cfg.output_dir);
  return cfg;
}

Trace make_trace(int run_id, const std::vector<double>& losses, const std::vector<double>& deltas) {
  Trace tr;
  tr.run_id = run_id;
  for (std::size_t i = 0; i < losses.size(); ++i) tr.rows.push_back({static_cast<int>(i), losses[i], 0.0, 0.0, deltas[i], 0.1});
  return tr;
}

Snapshot snap(int t, const VectorXd& cos) {
  Snapshot s;
  s.t = t;
  s.cosines = cos;
  s.cosines_k = cos.head(1);
  return s;
}

}  // namespace

TEST(Config, DefaultsFollowData) {
  const ExperimentConfig cfg = parse_config(kTiny);
  EXPECT_EQ(cfg.net.input_dim, 4);
  EXPECT_EQ(cfg.net.num_classes, 2);
  EXPECT_EQ(cfg.optim.seed, 3u);
  EXPECT_EQ(cfg.quantiles, (std::vector<double>{10, 25, 50, 75, 90}));
  EXPECT_EQ(parse_config("").net.hidden_widths, (std::vector<int>{10, 30}));
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_config("bogus = 1"), InvalidInput);
  EXPECT_THROW(parse_config("[optim]\nmomentum = 0.9"), InvalidInput);
  EXPECT_THROW(parse_config("runs = \"many\""), InvalidInput);
  EXPECT_THROW(parse_config("runs = 0"), InvalidInput);
  EXPECT_THROW(parse_config("quantiles = [0, 50]"), InvalidInput);
  EXPECT_THROW(parse_config("quantile_window = 0.6"), InvalidInput);
  EXPECT_THROW(parse_config("[data]\nsource = \"imagenet\""), InvalidInput);
  EXPECT_THROW(parse_config("[data]\nsource = \"mnist\""), InvalidInput);
  EXPECT_THROW(parse_config("[optim]\nvariant = \"lbfgs\""), InvalidInput);
  EXPECT_THROW(parse_config("[bound]\ndelta = 1.5"), InvalidInput);
  EXPECT_THROW(parse_config("snapshot_iters = [0, 100000]"), InvalidInput);
  try {
    parse_config("name = \"x\"\nruns = = 3\n");
    FAIL() << "expected a parse error";
  } catch (const FormatError& e) {
    EXPECT_GE(e.offset(), 11u);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(Config, TomlRoundTripAndHash) {
  ExperimentConfig cfg = parse_config(kTiny);
  cfg.snapshot_iters = {0, 3, 6};
  cfg.bound.prior_mean = "init";
  const ExperimentConfig back = parse_config(config_toml(cfg));
  EXPECT_EQ(config_json(back), config_json(cfg));
  EXPECT_EQ(config_hash(back), config_hash(cfg));
  ExperimentConfig other = cfg;
  other.optim.eta = 0.051;
  EXPECT_NE(config_hash(other), config_hash(cfg));
  other = cfg;
  other.threads = 4;
  other.output_dir = "elsewhere";
  EXPECT_EQ(config_hash(other), config_hash(cfg));
  EXPECT_EQ(config_toml(other), config_toml(cfg));
}

TEST(Config, ShippedConfigsLoad) {
  int count = 0;
  for (const auto& e : fs::directory_iterator(SGDLAB_CONFIG_DIR)) {
    if (e.path().extension() != ".toml") continue;
    const ExperimentConfig cfg = load_config(e.path());
    EXPECT_EQ(config_json(parse_config(config_toml(cfg))), config_json(cfg)) << e.path();
    ++count;
  }
  EXPECT_GE(count, 6);
}

TEST(Snapshots, GeometricCadence) {
  EXPECT_EQ(geometric_snapshots(10), (std::vector<int>{0, 1, 2, 4, 8, 10}));
  EXPECT_EQ(geometric_snapshots(8), (std::vector<int>{0, 1, 2, 4, 8}));
  EXPECT_EQ(geometric_snapshots(1), (std::vector<int>{0, 1}));
  EXPECT_EQ(geometric_snapshots(0), (std::vector<int>{0}));
  EXPECT_THROW(geometric_snapshots(-1), InvalidInput);
  ExperimentConfig cfg = parse_config(kTiny);
  cfg.snapshot_iters = {6, 0, 3, 3};
  EXPECT_EQ(resolved_snapshots(cfg), (std::vector<int>{0, 3, 6}));
  cfg.snapshots = false;
  EXPECT_TRUE(resolved_snapshots(cfg).empty());
}

TEST(Quantiles, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(empirical_quantile({3, 1, 2}, 50), 2.0);
  EXPECT_DOUBLE_EQ(empirical_quantile({1, 2, 3, 4, 5}, 25), 2.0);
  EXPECT_DOUBLE_EQ(empirical_quantile({0, 10}, 35), 3.5);
  EXPECT_DOUBLE_EQ(empirical_quantile({7}, 90), 7.0);
  EXPECT_DOUBLE_EQ(empirical_quantile({4, 9}, 100), 9.0);
  EXPECT_THROW(empirical_quantile({}, 50), InvalidInput);
  EXPECT_THROW(empirical_quantile({1}, 101), InvalidInput);
}

TEST(Quantiles, SeriesIsMonotoneAndDegenerateForOneRun) {
  std::vector<Trace> traces;
  for (int r = 0; r < 7; ++r)
    traces.push_back(make_trace(r, {1.0 + r, std::sin(r), std::cos(3.0 * r)}, {0, 0, 0}));
  const QuantileSeries qs = quantile_series(traces, "loss", {10, 25, 50, 75, 90});
  ASSERT_EQ(qs.iters, (std::vector<int>{0, 1, 2}));
  EXPECT_DOUBLE_EQ(qs.values[0][2], 4.0);
  for (const auto& row : qs.values)
    for (std::size_t j = 1; j < row.size(); ++j) EXPECT_LE(row[j - 1], row[j]);
  const QuantileSeries one = quantile_series({traces[3]}, "loss", {10, 50, 90});
  for (const auto& row : one.values) EXPECT_TRUE(row[0] == row[1] && row[1] == row[2]);
  EXPECT_THROW(quantile_series(traces, "accuracy", {50}), InvalidInput);
  EXPECT_THROW(quantile_series(traces, "loss", {0}), InvalidInput);
  EXPECT_THROW(quantile_series({}, "loss", {50}), InvalidInput);
  traces[2].rows.pop_back();
  EXPECT_THROW(quantile_series(traces, "loss", {50}), InvalidInput);
  traces[2] = make_trace(2, {1, 2, 3}, {0, 0, 0});
  traces[2].rows[1].t = 5;
  EXPECT_THROW(quantile_series(traces, "loss", {50}), InvalidInput);
}

TEST(DeltaBand, SizeClipsAtEnds) {
  EXPECT_EQ(quantile_band_size(200, 50, 0.05), 21);
  EXPECT_EQ(quantile_band_size(200, 10, 0.05), 21);
  EXPECT_EQ(quantile_band_size(200, 1, 0.05), 13);
  EXPECT_EQ(quantile_band_size(200, 50, 0.01), 5);
  EXPECT_EQ(quantile_band_size(1, 50, 0.05), 1);
  EXPECT_EQ(quantile_band_size(0, 50, 0.05), 0);
}

TEST(DeltaBand, SelectsByLossRank) {
  std::vector<Trace> traces;
  for (int r = 0; r < 40; ++r) {
    const double loss = static_cast<double>((r * 17) % 40);
    traces.push_back(make_trace(r, {loss, loss}, {0.0, loss / 10.0}));
  }
  const DeltaDistribution d = delta_distribution(traces, 1, 50, 0.25);
  ASSERT_EQ(d.sample.size(), 21u);
  double lo = 1e9, hi = -1e9;
  for (double x : d.sample) {
    lo = std::min(lo, x * 10.0);
    hi = std::max(hi, x * 10.0);
  }
  EXPECT_DOUBLE_EQ(lo, 10.0);
  EXPECT_DOUBLE_EQ(hi, 30.0);
  EXPECT_NEAR(d.mean, 2.0, 1e-12);
  double ss = 0.0;
  for (int k = 10; k <= 30; ++k) ss += (k / 10.0 - 2.0) * (k / 10.0 - 2.0);
  EXPECT_NEAR(d.variance, ss / 20.0, 1e-12);
  for (std::size_t i = 0; i < d.runs.size(); ++i)
    EXPECT_EQ(traces[static_cast<std::size_t>(d.runs[i])].rows[1].loss, d.sample[i] * 10.0);
  EXPECT_THROW(delta_distribution(traces, 1, 50, 0.1), InvalidInput);
  EXPECT_THROW(delta_distribution(traces, 7, 50, 0.25), InvalidInput);
}

TEST(DeltaBand, IdenticalRunsHaveZeroVariance) {
  std::vector<Trace> traces(25, make_trace(0, {1.0, 0.5}, {0.0, -0.5}));
  for (int r = 0; r < 25; ++r) traces[static_cast<std::size_t>(r)].run_id = r;
  const DeltaDistribution d = delta_distribution(traces, 1, 50, 0.5);
  EXPECT_EQ(d.variance, 0.0);
  EXPECT_EQ(d.mean, -0.5);
}

TEST(Overlap, MeanAndBand) {
  std::vector<std::vector<Snapshot>> runs = {
      {snap(0, VectorXd::Ones(3)), snap(4, (VectorXd(3) << 0.9, 0.5, 0.1).finished())},
      {snap(0, VectorXd::Ones(3)), snap(4, (VectorXd(3) << 0.7, 0.3, 0.1).finished())}};
  const auto pts = overlap_trajectory(runs);
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[0].count, 2);
  EXPECT_EQ(pts[0].mean, VectorXd::Ones(3));
  EXPECT_EQ(pts[0].lo, pts[0].hi);
  EXPECT_NEAR(pts[1].mean[0], 0.8, 1e-15);
  const double half = 1.96 * std::sqrt(0.02 / 2.0);
  EXPECT_NEAR(pts[1].hi[0] - pts[1].mean[0], half, 1e-15);
  EXPECT_EQ(pts[1].lo[2], pts[1].hi[2]);
  EXPECT_EQ(overlap_trajectory(runs, true)[1].mean.size(), 1);
  runs[1][1].cosines.resize(0);
  EXPECT_THROW(overlap_trajectory(runs), InvalidInput);
}

TEST(BoundLine, NonFiniteBecomesNull) {
  BoundReport r;
  r.n = 10;
  r.kl_rhs = 0.3;
  r.gen_gap = std::nan("");
  r.hess_diag_method = "exact";
  const auto j = nlohmann::json::parse(bound_json_line(r, 4, "abc"));
  EXPECT_EQ(j["run_id"], 4);
  EXPECT_EQ(j["config_hash"], "abc");
  EXPECT_TRUE(j["gen_gap"].is_null());
  EXPECT_EQ(j["kl_rhs"].get<double>(), 0.3);
}

TEST(Experiment, ArtifactsValidateAndRerunIsExact) {
  const ExperimentConfig cfg = tiny("sgdlab_harness_tiny");
  const ExperimentResult res = run_experiment(cfg);
  ASSERT_EQ(res.runs.size(), 3u);
  EXPECT_TRUE(validate_artifacts(res.dir).empty());
  for (const char* f : {"manifest.json", "config.toml", "quantiles.csv", "overlap.csv", "bounds.jsonl"})
    EXPECT_TRUE(fs::exists(res.dir / f)) << f;
  EXPECT_FALSE(fs::exists(res.dir / "delta_variance.csv"));

  const CsvTable dk = read_csv(res.dir / "dk" / "run_00000.csv");
  ASSERT_FALSE(dk.rows.empty());
  const int sin_col = dk.column("sin_theta_frob"), bound_col = dk.column("bound");
  for (const auto& row : dk.rows)
    EXPECT_LE(std::strtod(row[sin_col].c_str(), nullptr), std::strtod(row[bound_col].c_str(), nullptr) + 1e-9);

  const std::vector<Trace> loaded = load_traces(res.dir);
  ASSERT_EQ(loaded.size(), 3u);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t i = 0; i < loaded[r].rows.size(); ++i) {
      EXPECT_EQ(loaded[r].rows[i].loss, res.runs[r].trace.rows[i].loss);
      EXPECT_EQ(loaded[r].rows[i].delta_f, res.runs[r].trace.rows[i].delta_f);
    }
  EXPECT_NE(loaded[0].rows.back().loss, loaded[1].rows.back().loss);

  const std::string hash = artifact_hash(res.dir);
  const std::string trace1 = read_text(trace_path(res.dir, 1));
  fs::remove(trace_path(res.dir, 1));
  fs::remove(res.dir / "spectra" / "run_00001.csv");
  EXPECT_EQ(validate_artifacts(res.dir).size(), 2u);
  rerun_single(res.dir, 1);
  EXPECT_EQ(read_text(trace_path(res.dir, 1)), trace1);
  EXPECT_EQ(artifact_hash(res.dir), hash);
  EXPECT_THROW(rerun_single(res.dir, 3), InvalidInput);

  ExperimentConfig again = cfg;
  again.output_dir += "_again";
  again.threads = 2;
  fs::remove_all(again.output_dir);
  EXPECT_EQ(artifact_hash(run_experiment(again).dir), hash);
}

TEST(Experiment, ValidatorFlagsDamage) {
  const ExperimentConfig cfg = tiny("sgdlab_harness_damage");
  const fs::path dir = run_experiment(cfg).dir;
  write_text(dir / "quantiles.csv", "t,stat,level,value\n");
  std::string toml = read_text(dir / "config.toml");
  toml.replace(toml.find("max_iters = 6"), 13, "max_iters = 7");
  write_text(dir / "config.toml", toml);
  std::ofstream(dir / "bounds.jsonl", std::ios::app) << "{\"run_id\": 9}\n";
  const auto problems = validate_artifacts(dir);
  auto mentions = [&](const std::string& s) {
    for (const auto& p : problems)
      if (p.find(s) != std::string::npos) return true;
    return false;
  };
  EXPECT_TRUE(mentions("quantiles.csv: header"));
  EXPECT_TRUE(mentions("config.toml: config hash"));
  EXPECT_TRUE(mentions("bounds.jsonl:4: missing key"));
  fs::remove(dir / "manifest.json");
  EXPECT_EQ(validate_artifacts(dir).size(), 1u);
}
