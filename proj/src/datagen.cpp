#include "sgdlab/datagen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include <json.hpp>

#include "sgdlab/errors.hpp"
#include "sgdlab/rng.hpp"

namespace sgdlab {

using Eigen::Index;

static_assert(std::endian::native == std::endian::little, "binary payloads assume a little-endian host");

Dataset Dataset::subset(std::span<const int> indices) const {
  Dataset out;
  out.num_classes = num_classes;
  out.meta = meta;
  out.features.resize(static_cast<Index>(indices.size()), dim());
  if (!labels.empty()) out.labels.resize(indices.size());
  if (targets.size() > 0) out.targets.resize(static_cast<Index>(indices.size()));
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const int i = indices[r];
    if (i < 0 || i >= size()) throw InvalidInput("subset index " + std::to_string(i) + " out of range");
    out.features.row(static_cast<Index>(r)) = features.row(i);
    if (!labels.empty()) out.labels[r] = labels[i];
    if (targets.size() > 0) out.targets[static_cast<Index>(r)] = targets[i];
  }
  return out;
}

void Dataset::validate() const {
  if (!labels.empty() && static_cast<Index>(labels.size()) != size())
    throw InvalidInput("label count does not match sample count");
  if (targets.size() > 0 && targets.size() != size()) throw InvalidInput("target count does not match sample count");
  for (int y : labels)
    if (y < 0 || y >= num_classes) throw InvalidInput("label " + std::to_string(y) + " outside [0, k)");
  if (!features.allFinite()) throw NumericError("non-finite feature value");
}

RowMatrix gauss_k_means(int d, int k, std::uint64_t seed) {
  if (d <= 0 || k <= 0) throw InvalidInput("d and k must be positive");
  Rng rng = make_rng(seed, stream::kData, 0);
  std::uniform_real_distribution<double> unif(-10.0, 10.0);
  RowMatrix means(k, d);
  for (Index c = 0; c < k; ++c)
    for (Index j = 0; j < d; ++j) means(c, j) = unif(rng);
  return means;
}

Dataset generate_gauss_k(int n, int d, int k, std::uint64_t seed, std::uint64_t stream_id) {
  if (n <= 0 || d <= 0 || k <= 0) throw InvalidInput("n, d and k must be positive");
  if (n % k != 0) throw InvalidInput("n=" + std::to_string(n) + " is not divisible by k=" + std::to_string(k));
  const RowMatrix means = gauss_k_means(d, k, seed);
  Rng rng = make_rng(seed, stream::kData, 1 + stream_id);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds;
  ds.num_classes = k;
  ds.meta = {"gauss-k", 0.0, seed};
  ds.features.resize(n, d);
  ds.labels.resize(n);
  const int per = n / k;
  for (int c = 0; c < k; ++c) {
    for (int s = 0; s < per; ++s) {
      const int i = c * per + s;
      ds.labels[i] = c;
      for (Index j = 0; j < d; ++j) ds.features(i, j) = means(c, j) + normal(rng);
    }
  }
  return ds;
}

int corruption_count(int class_size, double r) {
  if (!(r >= 0.0 && r <= 1.0)) throw InvalidInput("corruption fraction must lie in [0, 1]");
  // The small offset keeps products like 0.15 * 20 = 3.0000000000000004 from rounding up.
  return static_cast<int>(std::ceil(r * class_size - 1e-9));
}

Dataset corrupt_labels(const Dataset& ds, double r, std::uint64_t seed) {
  if (!(r >= 0.0 && r <= 1.0)) throw InvalidInput("corruption fraction must lie in [0, 1]");
  if (ds.num_classes <= 0) throw InvalidInput("dataset has no classes");
  Dataset out = ds;
  out.meta.corruption = r;
  if (r == 0.0) return out;
  Rng rng = make_rng(seed, stream::kCorrupt);
  std::uniform_int_distribution<int> pick(0, ds.num_classes - 1);
  for (int c = 0; c < ds.num_classes; ++c) {
    std::vector<int> members;
    for (std::size_t i = 0; i < ds.labels.size(); ++i)
      if (ds.labels[i] == c) members.push_back(static_cast<int>(i));
    const int count = corruption_count(static_cast<int>(members.size()), r);
    std::shuffle(members.begin(), members.end(), rng);
    for (int s = 0; s < count; ++s) out.labels[members[s]] = pick(rng);
  }
  return out;
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t off) {
  if (off + 4 > buf.size()) throw FormatError("truncated IDX header", buf.size());
  return (std::uint32_t{buf[off]} << 24) | (std::uint32_t{buf[off + 1]} << 16) | (std::uint32_t{buf[off + 2]} << 8) |
         std::uint32_t{buf[off + 3]};
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  if (read_be32(img, 0) != 0x00000803) throw FormatError("bad IDX image magic in " + images.string(), 0);
  if (read_be32(lab, 0) != 0x00000801) throw FormatError("bad IDX label magic in " + labels.string(), 0);
  const std::uint64_t n = read_be32(img, 4);
  const std::uint64_t rows = read_be32(img, 8);
  const std::uint64_t cols = read_be32(img, 12);
  const std::uint64_t nl = read_be32(lab, 4);
  if (nl != n) throw FormatError("label count " + std::to_string(nl) + " differs from image count", 4);
  const std::uint64_t d = rows * cols;
  const std::uint64_t img_expected = 16 + n * d;
  if (img.size() != img_expected)
    throw FormatError("image payload size disagrees with declared dimensions", std::min<std::uint64_t>(img.size(), img_expected));
  if (lab.size() != 8 + n) throw FormatError("label payload size disagrees with declared count", std::min<std::uint64_t>(lab.size(), 8 + n));
  Dataset ds;
  ds.meta.source = "mnist";
  ds.features.resize(static_cast<Index>(n), static_cast<Index>(d));
  ds.labels.resize(n);
  int kmax = 0;
  for (std::uint64_t i = 0; i < n; ++i) {
    for (std::uint64_t j = 0; j < d; ++j)
      ds.features(static_cast<Index>(i), static_cast<Index>(j)) = img[16 + i * d + j] / 255.0;
    ds.labels[i] = lab[8 + i];
    kmax = std::max(kmax, ds.labels[i] + 1);
  }
  ds.num_classes = std::max(kmax, 10);
  return ds;
}

Dataset load_cifar_bin(std::span<const std::filesystem::path> batches) {
  constexpr std::size_t kRecord = 3073;
  constexpr Index kDim = 3072;
  std::vector<std::vector<unsigned char>> files;
  std::size_t total = 0;
  for (const auto& p : batches) {
    files.push_back(read_file(p));
    const auto& buf = files.back();
    if (buf.empty() || buf.size() % kRecord != 0)
      throw FormatError(p.string() + " is not a whole number of 3073-byte records", buf.size() - buf.size() % kRecord);
    total += buf.size() / kRecord;
  }
  Dataset ds;
  ds.meta.source = "cifar10";
  ds.num_classes = 10;
  ds.features.resize(static_cast<Index>(total), kDim);
  ds.labels.resize(total);
  std::size_t row = 0;
  for (std::size_t f = 0; f < files.size(); ++f) {
    const auto& buf = files[f];
    for (std::size_t off = 0; off < buf.size(); off += kRecord, ++row) {
      if (buf[off] > 9) throw FormatError("CIFAR label out of range in " + batches[f].string(), off);
      ds.labels[row] = buf[off];
      for (Index j = 0; j < kDim; ++j) ds.features(static_cast<Index>(row), j) = buf[off + 1 + j] / 255.0;
    }
  }
  return ds;
}

NormStats compute_norm_stats(const Dataset& ds, int channels) {
  if (channels <= 0 || ds.dim() % channels != 0) throw InvalidInput("feature dimension not divisible by channel count");
  if (ds.size() == 0) throw InvalidInput("cannot normalize an empty dataset");
  NormStats st;
  st.channels = channels;
  const Index plane = ds.dim() / channels;
  for (int c = 0; c < channels; ++c) {
    const auto block = ds.features.middleCols(c * plane, plane);
    const double count = static_cast<double>(block.size());
    const double mean = block.sum() / count;
    const double var = (block.array() - mean).square().sum() / count;
    if (!(var > 0.0)) throw InvalidInput("channel " + std::to_string(c) + " has zero standard deviation");
    st.mean.push_back(mean);
    st.stddev.push_back(std::sqrt(var));
  }
  return st;
}

Dataset apply_norm(const Dataset& ds, const NormStats& stats) {
  if (stats.channels <= 0 || ds.dim() % stats.channels != 0) throw InvalidInput("statistics do not match dataset");
  Dataset out = ds;
  const Index plane = ds.dim() / stats.channels;
  for (int c = 0; c < stats.channels; ++c) {
    auto block = out.features.middleCols(c * plane, plane);
    block.array() = (block.array() - stats.mean[c]) / stats.stddev[c];
  }
  return out;
}

Dataset normalize(const Dataset& ds, int channels) { return apply_norm(ds, compute_norm_stats(ds, channels)); }

std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InvalidInput("train_fraction must lie in (0, 1)");
  Rng rng = make_rng(seed, stream::kHoldout);
  std::vector<int> train, test;
  const int k = std::max(ds.num_classes, 1);
  for (int c = 0; c < k; ++c) {
    std::vector<int> members;
    for (Index i = 0; i < ds.size(); ++i)
      if (ds.labels.empty() || ds.labels[i] == c) members.push_back(static_cast<int>(i));
    std::shuffle(members.begin(), members.end(), rng);
    const auto cut = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(members.size())));
    train.insert(train.end(), members.begin(), members.begin() + cut);
    test.insert(test.end(), members.begin() + cut, members.end());
    if (ds.labels.empty()) break;
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {ds.subset(train), ds.subset(test)};
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  ds.validate();
  nlohmann::json header = {{"format", "sgdlab-dataset"},
                           {"version", 1},
                           {"n", ds.size()},
                           {"d", ds.dim()},
                           {"k", ds.num_classes},
                           {"source", ds.meta.source},
                           {"corruption", ds.meta.corruption},
                           {"seed", ds.meta.seed},
                           {"has_labels", !ds.labels.empty()},
                           {"has_targets", ds.targets.size() > 0}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
  out << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(ds.features.data()),
            static_cast<std::streamsize>(ds.features.size() * sizeof(double)));
  if (!ds.labels.empty()) {
    std::vector<std::int32_t> labels(ds.labels.begin(), ds.labels.end());
    out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size() * 4));
  }
  if (ds.targets.size() > 0)
    out.write(reinterpret_cast<const char*>(ds.targets.data()),
              static_cast<std::streamsize>(ds.targets.size() * sizeof(double)));
  if (!out) throw InvalidInput("failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  const auto buf = read_file(path);
  const auto nl = std::find(buf.begin(), buf.end(), '\n');
  if (nl == buf.end()) throw FormatError("missing dataset header line", buf.size());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.begin(), nl);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("bad dataset header: ") + e.what(), e.byte);
  }
  if (header.value("format", std::string()) != "sgdlab-dataset") throw FormatError("not a dataset container", 0);
  Dataset ds;
  Index n = 0, d = 0;
  bool has_labels = false, has_targets = false;
  try {
    n = header.at("n").get<Index>();
    d = header.at("d").get<Index>();
    ds.num_classes = header.at("k").get<int>();
    ds.meta.source = header.at("source").get<std::string>();
    ds.meta.corruption = header.at("corruption").get<double>();
    ds.meta.seed = header.at("seed").get<std::uint64_t>();
    has_labels = header.at("has_labels").get<bool>();
    has_targets = header.at("has_targets").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad dataset header: ") + e.what(), 0);
  }
  if (n < 0 || d < 0) throw FormatError("negative dataset shape", 0);
  std::size_t off = static_cast<std::size_t>(nl - buf.begin()) + 1;
  const std::size_t need = off + static_cast<std::size_t>(n * d) * 8 + (has_labels ? static_cast<std::size_t>(n) * 4 : 0) +
                           (has_targets ? static_cast<std::size_t>(n) * 8 : 0);
  if (buf.size() != need) throw FormatError("dataset payload size disagrees with header", std::min(buf.size(), need));
  ds.features.resize(n, d);
  std::memcpy(ds.features.data(), buf.data() + off, static_cast<std::size_t>(n * d) * 8);
  off += static_cast<std::size_t>(n * d) * 8;
  if (has_labels) {
    std::vector<std::int32_t> labels(static_cast<std::size_t>(n));
    std::memcpy(labels.data(), buf.data() + off, labels.size() * 4);
    ds.labels.assign(labels.begin(), labels.end());
    off += labels.size() * 4;
  }
  if (has_targets) {
    ds.targets.resize(n);
    std::memcpy(ds.targets.data(), buf.data() + off, static_cast<std::size_t>(n) * 8);
  }
  ds.validate();
  return ds;
}

}  // namespace sgdlab
