#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sgdlab/datagen.hpp"
#include "sgdlab/rng.hpp"

namespace sgdlab {

enum class Activation { Relu, Identity };
enum class LossKind { SoftmaxXent, Squared, Logistic };

std::string to_string(Activation a);
std::string to_string(LossKind l);
Activation activation_from_string(const std::string& s);
LossKind loss_from_string(const std::string& s);

struct NetSpec {
  int input_dim = 0;
  std::vector<int> hidden_widths;
  int num_classes = 0;  // output width; 1 for the squared and logistic heads
  bool biases = true;
  Activation activation = Activation::Relu;
  LossKind loss = LossKind::SoftmaxXent;
  double noise_sigma = 1.0;  // squared head only

  int num_layers() const { return static_cast<int>(hidden_widths.size()) + 1; }
  int fan_in(int layer) const;
  int fan_out(int layer) const;
  void validate() const;
};

// Weights of a layer are stored column-major (rows = fan_out, cols = fan_in),
// immediately followed by that layer's bias.
struct LayerLayout {
  Eigen::Index offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Eigen::Index bias_offset = 0;
  Eigen::Index bias_size = 0;

  Eigen::Index weight_count() const { return rows * cols; }
  Eigen::Index count() const { return rows * cols + bias_size; }
  Eigen::Index end() const { return offset + count(); }
};

using Layout = std::vector<LayerLayout>;

Layout make_layout(const NetSpec& spec);
Eigen::Index param_count(const NetSpec& spec);
Eigen::Index param_count(const Layout& layout);

struct ParamVector {
  Layout layout;
  Eigen::VectorXd values;

  ParamVector() = default;
  ParamVector(Layout l, Eigen::VectorXd v);
  explicit ParamVector(const NetSpec& spec);  // zero-initialized

  Eigen::Index size() const { return values.size(); }
  Eigen::Map<const Eigen::MatrixXd> weight(int layer) const;
  Eigen::Map<Eigen::MatrixXd> weight(int layer);
  Eigen::Map<const Eigen::VectorXd> bias(int layer) const;
  Eigen::Map<Eigen::VectorXd> bias(int layer);

  Eigen::MatrixXd layer_matrix(int layer) const { return weight(layer); }
  void set_layer_matrix(int layer, const Eigen::MatrixXd& w);
};

// theta ~ N(0, scale^2 I), the initialization used by every experiment.
ParamVector random_params(const NetSpec& spec, Rng& rng, double scale = 1.0);

struct EvalReport {
  double loss = 0.0;
  Eigen::MatrixXd logits;            // k x b
  Eigen::MatrixXd prediction_probs;  // k x b (empty for the squared head)
  Eigen::VectorXd sample_losses;     // b
};

EvalReport forward_loss(const NetSpec& spec, const ParamVector& theta, const Dataset& batch);
double loss_value(const NetSpec& spec, const ParamVector& theta, const Dataset& batch);
// Fraction of samples whose arg-max logit differs from the label.
double zero_one_error(const NetSpec& spec, const ParamVector& theta, const Dataset& batch);

// Smallest |pre-activation| over hidden units and samples; used to reject
// parameter draws that sit too close to a ReLU kink.
double min_abs_preactivation(const NetSpec& spec, const ParamVector& theta, const Dataset& batch);

// Mean-loss gradient.
Eigen::VectorXd gradient(const NetSpec& spec, const ParamVector& theta, const Dataset& batch);
// Row i is the gradient of the loss of sample i (n x p).
Eigen::MatrixXd per_sample_gradients(const NetSpec& spec, const ParamVector& theta, const Dataset& batch);

// Which scalar the second-order pass differentiates.
//   LogLoss:         mean_i l_i                      -> H_f v
//   LikelihoodRatio: mean_i (1/p_i) d2 p_i, p_i = exp(-l_i) -> H_p v
enum class SecondOrderTarget { LogLoss, LikelihoodRatio };

Eigen::VectorXd hessian_vector_product(const NetSpec& spec, const ParamVector& theta, const Dataset& batch,
                                       const Eigen::VectorXd& v,
                                       SecondOrderTarget target = SecondOrderTarget::LogLoss);

inline constexpr Eigen::Index kDefaultDenseLimit = 5000;

struct HessianHandle {
  enum class Mode { Dense, Operator };
  Mode mode = Mode::Dense;
  Eigen::MatrixXd dense;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> hvp;
  Layout layout;

  Eigen::Index size() const;
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const;
};

HessianHandle dense_hessian(const NetSpec& spec, const ParamVector& theta, const Dataset& batch,
                            Eigen::Index dense_limit = kDefaultDenseLimit,
                            SecondOrderTarget target = SecondOrderTarget::LogLoss);
HessianHandle hessian_operator(const NetSpec& spec, const ParamVector& theta, const Dataset& batch,
                               SecondOrderTarget target = SecondOrderTarget::LogLoss);

// Diagonal of H_f, exact (one HVP per coordinate, batched over samples).
Eigen::VectorXd hessian_diagonal(const NetSpec& spec, const ParamVector& theta, const Dataset& batch);

struct LayerBlocks {
  std::vector<Eigen::MatrixXd> diagonal;  // G_h: block over layer h parameters
  std::vector<Eigen::MatrixXd> trailing;  // H_h: principal submatrix over layers >= h
};

LayerBlocks layer_blocks(const HessianHandle& handle);

// Checkpoints: single JSON for p <= 5000, otherwise JSON header line followed
// by the float64 little-endian payload.
void save_checkpoint(const std::filesystem::path& path, const NetSpec& spec, const ParamVector& theta,
                     std::uint64_t seed);
struct Checkpoint {
  NetSpec spec;
  ParamVector theta;
  std::uint64_t seed = 0;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sgdlab
