#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace sgdlab {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct DatasetMeta {
  std::string source = "memory";  // gauss-k | mnist | cifar10 | file | memory
  double corruption = 0.0;
  std::uint64_t seed = 0;
};

// n samples of dimension d. Classification heads read `labels`; the
// squared-loss head reads `targets` instead.
struct Dataset {
  RowMatrix features;          // n x d
  std::vector<int> labels;     // n entries in [0, k)
  Eigen::VectorXd targets;     // optional real responses (size n or 0)
  int num_classes = 0;
  DatasetMeta meta;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }

  // Column-per-sample view used by the network kernels.
  auto columns() const { return features.transpose(); }

  Dataset subset(std::span<const int> indices) const;
  void validate() const;
};

// k class means uniform in [-10, 10]^d, n/k samples from N(mean, I) each.
// The means depend only on `seed`; `stream` selects an independent sample
// draw so that train/test sets share the same mixture.
Dataset generate_gauss_k(int n, int d, int k, std::uint64_t seed, std::uint64_t stream = 0);

// Class means used by generate_gauss_k for the given seed.
RowMatrix gauss_k_means(int d, int k, std::uint64_t seed);

// Stratified corruption: in every class ceil(r * n_c) samples get a label
// drawn uniformly from all k classes. Features are never touched.
Dataset corrupt_labels(const Dataset& ds, double r, std::uint64_t seed);

// Per-class count of samples chosen for relabelling.
int corruption_count(int class_size, double r);

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
Dataset load_cifar_bin(std::span<const std::filesystem::path> batches);

struct NormStats {
  int channels = 1;
  std::vector<double> mean;
  std::vector<double> stddev;
};

// channels=1 gives one scalar mean/std over all entries (MNIST); channels=3
// splits each feature vector into equal contiguous planes (CIFAR-10).
NormStats compute_norm_stats(const Dataset& ds, int channels);
Dataset apply_norm(const Dataset& ds, const NormStats& stats);
Dataset normalize(const Dataset& ds, int channels = 1);

// Deterministic stratified split; `train_fraction` of each class goes first.
std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, std::uint64_t seed);

// Single-file container: JSON header line + float64 LE features + int32 LE labels
// (+ float64 LE targets when present).
void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace sgdlab
