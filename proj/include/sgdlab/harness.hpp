#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sgdlab/datagen.hpp"
#include "sgdlab/genbound.hpp"
#include "sgdlab/netcore.hpp"
#include "sgdlab/optim.hpp"
#include "sgdlab/spectra.hpp"

namespace sgdlab {

struct DataConfig {
  std::string source = "gauss-k";  // gauss-k | mnist | cifar10 | file
  int n = 100;
  int d = 50;
  int k = 10;
  int test_n = 100;  // gauss-k held-out draw from the same mixture; 0 disables it
  double corruption = 0.0;
  std::uint64_t seed = 42;
  double feature_scale = 0.01;  // gauss-k features are multiplied by this
  bool normalize = false;
  std::vector<std::string> train_paths;  // idx: {images, labels}; cifar10: batch files; file: one container
  std::vector<std::string> test_paths;
  int limit = 0;  // keep only the first `limit` training samples when > 0
};

struct BoundConfig {
  bool enabled = false;
  double delta = 0.05;
  int mc_draws = 100;
  double prior_sigma = 1.0;
  std::string prior_mean = "zero";  // zero | init
};

struct ExperimentConfig {
  std::string name = "experiment";
  DataConfig data;
  NetSpec net;
  OptimConfig optim;
  double init_scale = 1.0;  // theta_0 ~ N(0, init_scale^2 I)
  int runs = 200;
  bool snapshots = true;            // false: no spectral snapshots at all
  std::vector<int> snapshot_iters;  // empty: geometric cadence 0,1,2,4,...,max_iters
  std::vector<double> quantiles = {10, 25, 50, 75, 90};
  double quantile_window = 0.01;
  int overlap_dim = 15;        // eigenvectors kept per matrix for principal angles
  int spectrum_keep = 20;      // leading and trailing eigenvalues written per matrix
  Eigen::Index dense_limit = kDefaultDenseLimit;
  bool snapshot_hp = true;
  bool save_checkpoints = true;
  BoundConfig bound;
  std::uint64_t seed = 0;
  std::string output_dir;  // empty: out/<name>
  int threads = 1;

  void validate() const;
};

ExperimentConfig parse_config(const std::string& toml_text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Canonical JSON text of the config (used for the manifest and the hash).
std::string config_json(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);
// TOML text that parses back to an equal config. threads and output_dir are
// execution settings and are left out so artifacts do not depend on them.
std::string config_toml(const ExperimentConfig& cfg);

std::vector<int> geometric_snapshots(int max_iters);
std::vector<int> resolved_snapshots(const ExperimentConfig& cfg);

struct ExperimentData {
  Dataset train;
  std::optional<Dataset> test;
};

ExperimentData build_data(const DataConfig& cfg);
ParamVector initial_params(const ExperimentConfig& cfg, int run_id);

// Compact per-iteration row kept in memory for aggregation.
struct TraceRow {
  int t = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double cos_prev = 0.0;
  double delta_f = 0.0;
  double step = 0.0;
};

struct Trace {
  int run_id = 0;
  bool failed = false;
  std::string error;
  std::vector<TraceRow> rows;
};

struct Snapshot {
  int t = 0;
  std::string method;              // dense | lanczos
  Eigen::VectorXd hf_eigs;         // descending; top-q only in lanczos mode
  Eigen::VectorXd hf_residuals;    // per returned H_f eigenvector
  Eigen::VectorXd m_eigs;
  Eigen::VectorXd hp_eigs;
  Eigen::VectorXd cosines;         // principal angles between top overlap_dim spaces
  Eigen::VectorXd cosines_k;       // principal angles between top-k spaces (k = classes)
  Eigen::VectorXd block_min_eigs;  // min eigenvalue of each diagonal block G_h
  Eigen::VectorXd block_norms;     // spectral norm of each G_h
  Eigen::VectorXd loadings;        // normalized layer loadings of the top H_f eigenvector
  std::vector<DavisKahanReport> dk;  // H = M, perturbation -H_p, s = 1..overlap_dim (dense with H_p only)

  double loss = 0.0;
  double trace_m2 = 0.0;
  double trace_sigma = 0.0;
  double mu_norm_sq = 0.0;
  double sigma_frob = 0.0;
  double sigma_spec = 0.0;
  double sigma_mu_norm = 0.0;
  double curvature = 0.0;  // ||H_f||_2
  DeviationParams deviation;
};

Snapshot take_snapshot(const ExperimentConfig& cfg, const Dataset& train, const ParamVector& theta, int t,
                       std::uint64_t seed);

struct RunResult {
  Trace trace;
  std::vector<Snapshot> snapshots;
  ParamVector theta0;
  ParamVector final_theta;
  std::optional<BoundReport> bound;
};

// Runs one replicate in memory. A numeric failure inside a snapshot or the
// bound marks the run failed instead of propagating.
RunResult run_single(const ExperimentConfig& cfg, const ExperimentData& data, int run_id);
// Writes the spectra, overlap, dk, blocks and moments files of one run.
std::vector<std::string> write_snapshot_files(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                                              int run_id, const std::vector<Snapshot>& snapshots);
// Writes the per-run files; returns their paths relative to dir.
std::vector<std::string> write_run_files(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                                         const RunResult& rr);
// Re-runs one replicate of a finished experiment directory and rewrites its files.
RunResult rerun_single(const std::filesystem::path& dir, int run_id);

struct ExperimentResult {
  std::filesystem::path dir;
  std::vector<RunResult> runs;
};

using ProgressFn = std::function<void(int done, int total)>;

ExperimentResult run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {});

// Aggregations over traces sharing one iteration grid.
struct QuantileSeries {
  std::string stat;
  std::vector<double> levels;             // in (0, 100)
  std::vector<int> iters;
  std::vector<std::vector<double>> values;  // [iteration][level]
};

double trace_stat(const TraceRow& row, const std::string& stat);
double empirical_quantile(std::vector<double> values, double level);
QuantileSeries quantile_series(const std::vector<Trace>& traces, const std::string& stat,
                               const std::vector<double>& levels);

inline constexpr int kMinBandRuns = 20;

struct DeltaDistribution {
  int t = 0;
  double level = 50.0;
  std::vector<int> runs;
  std::vector<double> sample;
  double mean = 0.0;
  double variance = 0.0;
};

// Number of runs in the rank band around `level` (clipped at both ends).
int quantile_band_size(int runs, double level, double window);

// Runs whose rank of f(theta_t) lies within +-ceil(window * R) of the
// level's rank; rejects bands with fewer than min_runs members.
DeltaDistribution delta_distribution(const std::vector<Trace>& traces, int t, double level, double window,
                                     int min_runs = kMinBandRuns);

struct OverlapPoint {
  int t = 0;
  int count = 0;
  Eigen::VectorXd mean;
  Eigen::VectorXd lo;  // mean - 1.96 sd / sqrt(count)
  Eigen::VectorXd hi;
};

// One entry per snapshot iteration; `use_k` selects the top-k cosines.
std::vector<OverlapPoint> overlap_trajectory(const std::vector<std::vector<Snapshot>>& runs, bool use_k = false);

// Artifact files on disk.
std::filesystem::path trace_path(const std::filesystem::path& dir, int run_id);
std::vector<Trace> load_traces(const std::filesystem::path& dir);
void write_quantiles(const std::filesystem::path& path, const std::vector<QuantileSeries>& series);
void write_delta_variance(const std::filesystem::path& path, const std::vector<Trace>& traces,
                          const std::vector<double>& levels, double window);
void write_overlap(const std::filesystem::path& path, const std::vector<OverlapPoint>& top_q,
                   const std::vector<OverlapPoint>& top_k = {});
std::vector<std::vector<Snapshot>> load_overlap_snapshots(const std::filesystem::path& dir);
std::string bound_json_line(const BoundReport& r, int run_id, const std::string& hash);

// Fingerprint over the manifest and every file it lists (paths and bytes).
std::string artifact_hash(const std::filesystem::path& dir);

// Re-opens every file the manifest lists and checks its schema. Returns a
// list of problems (empty when the directory is complete).
std::vector<std::string> validate_artifacts(const std::filesystem::path& dir);

}  // namespace sgdlab
