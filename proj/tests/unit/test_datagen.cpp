#include <cmath>
#include <cstdint>
#include <fstream>
#include <vector>

#include <gtest/gtest.h>

#include "oracle_support.hpp"
#include "sgdlab/datagen.hpp"
#include "sgdlab/errors.hpp"

using namespace sgdlab;

namespace {

void put_be32(std::vector<unsigned char>& buf, std::uint32_t x) {
  for (int s = 24; s >= 0; s -= 8) buf.push_back(static_cast<unsigned char>(x >> s));
}

void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Two 2x2 images with pixel bytes 0, 51, 102, 255 and 10, 20, 30, 40.
void write_idx_fixture(const std::filesystem::path& images, const std::filesystem::path& labels) {
  std::vector<unsigned char> img;
  put_be32(img, 0x00000803);
  put_be32(img, 2);
  put_be32(img, 2);
  put_be32(img, 2);
  for (unsigned char b : {0, 51, 102, 255, 10, 20, 30, 40}) img.push_back(b);
  write_bytes(images, img);
  std::vector<unsigned char> lab;
  put_be32(lab, 0x00000801);
  put_be32(lab, 2);
  lab.push_back(7);
  lab.push_back(3);
  write_bytes(labels, lab);
}

}  // namespace

TEST(GaussK, ShapesAndClassBalance) {
  for (int k : {10, 2}) {
    const Dataset ds = generate_gauss_k(100, 50, k, 42);
    EXPECT_EQ(ds.size(), 100);
    EXPECT_EQ(ds.dim(), 50);
    EXPECT_EQ(ds.num_classes, k);
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int y : ds.labels) ++counts[static_cast<std::size_t>(y)];
    for (int c : counts) EXPECT_EQ(c, 100 / k);
  }
}

TEST(GaussK, RejectsIndivisibleSampleCount) {
  EXPECT_THROW(generate_gauss_k(101, 50, 10, 1), InvalidInput);
  EXPECT_THROW(generate_gauss_k(0, 50, 10, 1), InvalidInput);
}

TEST(GaussK, MeansInsideBoxAndClassMeansConcentrate) {
  const int n = 1000, d = 20, k = 10;
  const Dataset ds = generate_gauss_k(n, d, k, 7);
  const RowMatrix means = gauss_k_means(d, k, 7);
  EXPECT_LE(means.cwiseAbs().maxCoeff(), 10.0);
  const double tol = 4.0 / std::sqrt(n / k);
  for (int c = 0; c < k; ++c) {
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(d);
    int count = 0;
    for (Eigen::Index i = 0; i < ds.size(); ++i)
      if (ds.labels[static_cast<std::size_t>(i)] == c) {
        sum += ds.features.row(i);
        ++count;
      }
    EXPECT_LE((sum / count - means.row(c)).cwiseAbs().maxCoeff(), tol);
  }
}

TEST(GaussK, DeterministicAndStreamsShareMeans) {
  const Dataset a = generate_gauss_k(100, 50, 10, 9), b = generate_gauss_k(100, 50, 10, 9);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.labels, b.labels);
  const Dataset held = generate_gauss_k(100, 50, 10, 9, 1);
  EXPECT_NE(held.features, a.features);
  EXPECT_EQ(gauss_k_means(50, 10, 9), gauss_k_means(50, 10, 9));
  EXPECT_NE(generate_gauss_k(100, 50, 10, 10).features, a.features);
}

TEST(Corruption, CeilingCounts) {
  EXPECT_EQ(corruption_count(10, 0.15), 2);
  EXPECT_EQ(corruption_count(20, 0.15), 3);
  EXPECT_EQ(corruption_count(10, 0.0), 0);
  EXPECT_EQ(corruption_count(10, 1.0), 10);
  EXPECT_EQ(corruption_count(50, 0.2), 10);
  EXPECT_THROW(corruption_count(10, 1.5), InvalidInput);
}

TEST(Corruption, ZeroRateIsNoOp) {
  const Dataset ds = generate_gauss_k(100, 50, 10, 3);
  const Dataset out = corrupt_labels(ds, 0.0, 5);
  EXPECT_EQ(out.labels, ds.labels);
  EXPECT_EQ(out.features, ds.features);
}

TEST(Corruption, AtMostTwoPerClassOnGauss10AndFeaturesUntouched) {
  const Dataset ds = generate_gauss_k(100, 50, 10, 3);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Dataset out = corrupt_labels(ds, 0.15, seed);
    EXPECT_EQ(out.features, ds.features);
    EXPECT_DOUBLE_EQ(out.meta.corruption, 0.15);
    std::vector<int> changed(10, 0);
    int total = 0;
    for (std::size_t i = 0; i < ds.labels.size(); ++i)
      if (out.labels[i] != ds.labels[i]) {
        ++changed[static_cast<std::size_t>(ds.labels[i])];
        ++total;
      }
    for (int c : changed) EXPECT_LE(c, 2);
    EXPECT_LE(total, 10 * corruption_count(10, 0.15));
  }
}

TEST(Corruption, FullRedrawKeepsAboutOneInK) {
  const Dataset ds = generate_gauss_k(1000, 2, 10, 3);
  int same = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Dataset out = corrupt_labels(ds, 1.0, seed);
    for (std::size_t i = 0; i < ds.labels.size(); ++i) {
      same += out.labels[i] == ds.labels[i];
      ++total;
    }
  }
  // Binomial(20000, 0.1): sd is about 0.0021.
  EXPECT_NEAR(static_cast<double>(same) / total, 0.1, 0.01);
}

TEST(Corruption, Deterministic) {
  const Dataset ds = generate_gauss_k(100, 50, 10, 3);
  EXPECT_EQ(corrupt_labels(ds, 0.5, 8).labels, corrupt_labels(ds, 0.5, 8).labels);
  EXPECT_THROW(corrupt_labels(ds, -0.1, 8), InvalidInput);
}

TEST(Idx, HandcraftedFixture) {
  const auto dir = oracle::scratch_dir("idx");
  write_idx_fixture(dir / "img", dir / "lab");
  const Dataset ds = load_idx(dir / "img", dir / "lab");
  ASSERT_EQ(ds.size(), 2);
  ASSERT_EQ(ds.dim(), 4);
  EXPECT_DOUBLE_EQ(ds.features(0, 1), 51.0 / 255.0);
  EXPECT_DOUBLE_EQ(ds.features(0, 3), 1.0);
  EXPECT_DOUBLE_EQ(ds.features(1, 2), 30.0 / 255.0);
  EXPECT_EQ(ds.labels, (std::vector<int>{7, 3}));
  EXPECT_EQ(ds.num_classes, 10);
}

TEST(Idx, BadMagicAndTruncation) {
  const auto dir = oracle::scratch_dir("idx_bad");
  write_idx_fixture(dir / "img", dir / "lab");
  EXPECT_THROW(load_idx(dir / "lab", dir / "lab"), FormatError);
  const auto size = std::filesystem::file_size(dir / "img");
  std::filesystem::resize_file(dir / "img", size - 1);
  try {
    load_idx(dir / "img", dir / "lab");
    FAIL() << "truncated file accepted";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), size - 1);
  }
  std::filesystem::resize_file(dir / "lab", 6);
  EXPECT_THROW(load_idx(dir / "img", dir / "lab"), FormatError);
}

TEST(Cifar, RecordsAndErrors) {
  const auto dir = oracle::scratch_dir("cifar");
  std::vector<unsigned char> buf(2 * 3073, 0);
  buf[0] = 4;
  buf[1] = 255;
  buf[3073] = 9;
  buf[3073 + 3072] = 102;
  write_bytes(dir / "b1.bin", buf);
  const std::vector<std::filesystem::path> paths{dir / "b1.bin", dir / "b1.bin"};
  const Dataset ds = load_cifar_bin(paths);
  ASSERT_EQ(ds.size(), 4);
  ASSERT_EQ(ds.dim(), 3072);
  EXPECT_EQ(ds.labels, (std::vector<int>{4, 9, 4, 9}));
  EXPECT_DOUBLE_EQ(ds.features(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(ds.features(1, 3071), 0.4);

  buf.pop_back();
  write_bytes(dir / "b2.bin", buf);
  const std::vector<std::filesystem::path> bad{dir / "b2.bin"};
  EXPECT_THROW(load_cifar_bin(bad), FormatError);
  buf.push_back(0);
  buf[3073] = 10;
  write_bytes(dir / "b3.bin", buf);
  const std::vector<std::filesystem::path> bad_label{dir / "b3.bin"};
  EXPECT_THROW(load_cifar_bin(bad_label), FormatError);
}

TEST(Normalize, CentersAndScales) {
  Dataset ds;
  ds.features = oracle::gaussian_matrix(200, 12, 4).array() * 3.0 + 5.0;
  ds.labels.assign(200, 0);
  ds.num_classes = 1;
  const Dataset out = normalize(ds);
  EXPECT_LE(std::abs(out.features.mean()), 1e-10);
  const double var = out.features.array().square().mean();
  EXPECT_NEAR(var, 1.0, 1e-6);
  EXPECT_LE((normalize(out).features - out.features).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Normalize, PerChannelStatistics) {
  Dataset ds;
  ds.features = oracle::gaussian_matrix(50, 9, 5);
  ds.features.middleCols(3, 3).array() += 100.0;
  ds.features.middleCols(6, 3).array() *= 0.01;
  ds.labels.assign(50, 0);
  ds.num_classes = 1;
  const Dataset out = normalize(ds, 3);
  for (int c = 0; c < 3; ++c) {
    const auto block = out.features.middleCols(3 * c, 3);
    EXPECT_LE(std::abs(block.mean()), 1e-10);
    EXPECT_NEAR(block.array().square().mean(), 1.0, 1e-6);
  }
  EXPECT_THROW(normalize(ds, 2), InvalidInput);
}

TEST(Normalize, StoredStatsReproduceTransformOnHeldOutRows) {
  Dataset ds;
  ds.features = oracle::gaussian_matrix(40, 6, 6).array() + 2.0;
  ds.labels.assign(40, 0);
  ds.num_classes = 1;
  const NormStats st = compute_norm_stats(ds, 1);
  const Dataset full = apply_norm(ds, st);
  const std::vector<int> rows{3, 17, 39};
  EXPECT_EQ(apply_norm(ds.subset(rows), st).features, full.subset(rows).features);
}

TEST(Normalize, ZeroStdRejected) {
  Dataset ds;
  ds.features = RowMatrix::Constant(5, 4, 2.0);
  ds.labels.assign(5, 0);
  ds.num_classes = 1;
  EXPECT_THROW(normalize(ds), InvalidInput);
}

TEST(Split, StratifiedAndDisjoint) {
  const Dataset ds = generate_gauss_k(100, 3, 10, 2);
  const auto [train, test] = split(ds, 0.8, 4);
  EXPECT_EQ(train.size(), 80);
  EXPECT_EQ(test.size(), 20);
  std::vector<int> counts(10, 0);
  for (int y : test.labels) ++counts[static_cast<std::size_t>(y)];
  for (int c : counts) EXPECT_EQ(c, 2);
  EXPECT_THROW(split(ds, 1.0, 4), InvalidInput);
}

TEST(Container, RoundTripBitExact) {
  const auto dir = oracle::scratch_dir("sgdd");
  Dataset ds = corrupt_labels(generate_gauss_k(20, 7, 2, 11), 0.2, 1);
  ds.targets = Eigen::VectorXd::LinSpaced(20, -1.0, 1.0);
  save_dataset(dir / "d.sgdd", ds);
  const Dataset back = load_dataset(dir / "d.sgdd");
  EXPECT_EQ(back.features, ds.features);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.targets, ds.targets);
  EXPECT_EQ(back.num_classes, 2);
  EXPECT_EQ(back.meta.source, "gauss-k");
  EXPECT_DOUBLE_EQ(back.meta.corruption, 0.2);
}

TEST(Container, TruncatedPayloadRejected) {
  const auto dir = oracle::scratch_dir("sgdd_bad");
  save_dataset(dir / "d.sgdd", generate_gauss_k(20, 7, 2, 11));
  std::filesystem::resize_file(dir / "d.sgdd", std::filesystem::file_size(dir / "d.sgdd") - 3);
  EXPECT_THROW(load_dataset(dir / "d.sgdd"), FormatError);
  std::ofstream(dir / "e.sgdd") << "{\"format\":\"other\"}\n";
  EXPECT_THROW(load_dataset(dir / "e.sgdd"), FormatError);
}

TEST(DatasetValidate, RejectsInconsistentLabels) {
  Dataset ds = generate_gauss_k(10, 2, 2, 1);
  ds.labels.pop_back();
  EXPECT_THROW(ds.validate(), InvalidInput);
  ds = generate_gauss_k(10, 2, 2, 1);
  ds.labels[0] = 2;
  EXPECT_THROW(ds.validate(), InvalidInput);
  const std::vector<int> bad{10};
  EXPECT_THROW(ds.subset(bad), InvalidInput);
}
