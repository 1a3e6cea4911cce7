#include "sgdlab/netcore.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>

#include <json.hpp>

#include "sgdlab/errors.hpp"

namespace sgdlab {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "identity"; }

std::string to_string(LossKind l) {
  switch (l) {
    case LossKind::SoftmaxXent: return "softmax_xent";
    case LossKind::Squared: return "squared";
    case LossKind::Logistic: return "logistic";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "identity") return Activation::Identity;
  throw InvalidInput("unknown activation '" + s + "'");
}

LossKind loss_from_string(const std::string& s) {
  if (s == "softmax_xent") return LossKind::SoftmaxXent;
  if (s == "squared") return LossKind::Squared;
  if (s == "logistic") return LossKind::Logistic;
  throw InvalidInput("unknown loss '" + s + "'");
}

int NetSpec::fan_in(int layer) const { return layer == 0 ? input_dim : hidden_widths[layer - 1]; }

int NetSpec::fan_out(int layer) const {
  return layer == num_layers() - 1 ? num_classes : hidden_widths[layer];
}

void NetSpec::validate() const {
  if (input_dim <= 0) throw InvalidInput("input_dim must be positive");
  if (num_classes <= 0) throw InvalidInput("num_classes must be positive");
  for (int w : hidden_widths)
    if (w <= 0) throw InvalidInput("hidden widths must be positive");
  if (loss != LossKind::SoftmaxXent && num_classes != 1)
    throw InvalidInput("squared and logistic heads need a single output");
  if (loss == LossKind::Squared && !(noise_sigma > 0.0)) throw InvalidInput("noise_sigma must be positive");
}

Layout make_layout(const NetSpec& spec) {
  spec.validate();
  Layout layout;
  Index offset = 0;
  for (int l = 0; l < spec.num_layers(); ++l) {
    LayerLayout ll;
    ll.offset = offset;
    ll.rows = spec.fan_out(l);
    ll.cols = spec.fan_in(l);
    ll.bias_offset = offset + ll.rows * ll.cols;
    ll.bias_size = spec.biases ? ll.rows : 0;
    offset = ll.end();
    layout.push_back(ll);
  }
  return layout;
}

Index param_count(const Layout& layout) { return layout.empty() ? 0 : layout.back().end(); }
Index param_count(const NetSpec& spec) { return param_count(make_layout(spec)); }

ParamVector::ParamVector(Layout l, VectorXd v) : layout(std::move(l)), values(std::move(v)) {
  if (values.size() != param_count(layout))
    throw InvalidInput("parameter vector length " + std::to_string(values.size()) + " does not match layout size " +
                       std::to_string(param_count(layout)));
}

ParamVector::ParamVector(const NetSpec& spec) : layout(make_layout(spec)) {
  values = VectorXd::Zero(param_count(layout));
}

Eigen::Map<const MatrixXd> ParamVector::weight(int layer) const {
  const auto& ll = layout.at(layer);
  return {values.data() + ll.offset, ll.rows, ll.cols};
}

Eigen::Map<MatrixXd> ParamVector::weight(int layer) {
  const auto& ll = layout.at(layer);
  return {values.data() + ll.offset, ll.rows, ll.cols};
}

Eigen::Map<const VectorXd> ParamVector::bias(int layer) const {
  const auto& ll = layout.at(layer);
  return {values.data() + ll.bias_offset, ll.bias_size};
}

Eigen::Map<VectorXd> ParamVector::bias(int layer) {
  const auto& ll = layout.at(layer);
  return {values.data() + ll.bias_offset, ll.bias_size};
}

void ParamVector::set_layer_matrix(int layer, const MatrixXd& w) {
  auto dst = weight(layer);
  if (w.rows() != dst.rows() || w.cols() != dst.cols()) throw InvalidInput("layer matrix shape mismatch");
  dst = w;
}

ParamVector random_params(const NetSpec& spec, Rng& rng, double scale) {
  ParamVector theta(spec);
  std::normal_distribution<double> normal(0.0, scale);
  for (Index j = 0; j < theta.size(); ++j) theta.values[j] = normal(rng);
  return theta;
}

namespace {

void check_inputs(const NetSpec& spec, const ParamVector& theta, const Dataset& batch) {
  if (theta.size() != param_count(spec)) throw InvalidInput("parameter vector does not match the network");
  if (batch.dim() != spec.input_dim)
    throw InvalidInput("batch dimension " + std::to_string(batch.dim()) + " does not match input_dim " +
                       std::to_string(spec.input_dim));
  if (batch.size() == 0) throw InvalidInput("empty batch");
  if (!theta.values.allFinite()) throw NumericError("non-finite parameter");
  if (spec.loss == LossKind::Squared) {
    if (batch.targets.size() != batch.size()) throw InvalidInput("squared loss needs real targets");
  } else {
    if (static_cast<Index>(batch.labels.size()) != batch.size()) throw InvalidInput("label count mismatch");
    const int k = spec.loss == LossKind::Logistic ? 2 : spec.num_classes;
    for (int y : batch.labels)
      if (y < 0 || y >= k) throw InvalidInput("label " + std::to_string(y) + " out of range");
  }
}

double log_sum_exp(const Eigen::Ref<const VectorXd>& z) {
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct Forward {
  std::vector<MatrixXd> acts;   // acts[0] = inputs (d x b), acts[l+1] = output of layer l
  std::vector<MatrixXd> slope;  // sigma'(Z) for hidden layers
  MatrixXd logits;              // k x b
};

Forward run_forward(const NetSpec& spec, const ParamVector& theta, const Dataset& batch) {
  Forward fw;
  const int L = spec.num_layers();
  fw.acts.reserve(L);
  fw.acts.push_back(batch.columns());
  for (int l = 0; l < L; ++l) {
    MatrixXd z = theta.weight(l) * fw.acts.back();
    if (spec.biases) z.colwise() += theta.bias(l);
    if (l == L - 1) {
      fw.logits = std::move(z);
      break;
    }
    if (spec.activation == Activation::Relu) {
      fw.slope.push_back(z.unaryExpr([](double x) { return x > 0 ? 1.0 : (x < 0 ? 0.0 : 0.5); }));
      fw.acts.push_back(z.cwiseMax(0.0));
    } else {
      fw.slope.push_back(MatrixXd::Ones(z.rows(), z.cols()));
      fw.acts.push_back(std::move(z));
    }
  }
  if (!fw.logits.allFinite()) throw NumericError("non-finite network output");
  return fw;
}

// Per-sample loss, head gradient dl/dz (k x b) and, when requested, the
// softmax probabilities or sigmoid outputs (k x b).
struct Head {
  VectorXd losses;
  MatrixXd grad;
  MatrixXd probs;
};

Head evaluate_head(const NetSpec& spec, const MatrixXd& logits, const Dataset& batch) {
  const Index b = logits.cols();
  Head h;
  h.losses.resize(b);
  h.grad.resize(logits.rows(), b);
  switch (spec.loss) {
    case LossKind::SoftmaxXent: {
      h.probs.resize(logits.rows(), b);
      for (Index i = 0; i < b; ++i) {
        const double lse = log_sum_exp(logits.col(i));
        h.probs.col(i) = (logits.col(i).array() - lse).exp();
        h.losses[i] = lse - logits(batch.labels[i], i);
        h.grad.col(i) = h.probs.col(i);
        h.grad(batch.labels[i], i) -= 1.0;
      }
      break;
    }
    case LossKind::Squared: {
      const double s2 = spec.noise_sigma * spec.noise_sigma;
      for (Index i = 0; i < b; ++i) {
        const double r = logits(0, i) - batch.targets[i];
        h.losses[i] = r * r / (2.0 * s2);
        h.grad(0, i) = r / s2;
      }
      break;
    }
    case LossKind::Logistic: {
      h.probs.resize(1, b);
      for (Index i = 0; i < b; ++i) {
        const double z = logits(0, i);
        const double s = sigmoid(z);
        h.probs(0, i) = s;
        h.losses[i] = softplus(z) - batch.labels[i] * z;
        h.grad(0, i) = s - batch.labels[i];
      }
      break;
    }
  }
  return h;
}

// Applies the per-sample head Hessian d2l/dz2 to the columns of rz.
MatrixXd apply_head_hessian(const NetSpec& spec, const Head& head, const MatrixXd& rz) {
  switch (spec.loss) {
    case LossKind::SoftmaxXent: {
      MatrixXd out(rz.rows(), rz.cols());
      for (Index i = 0; i < rz.cols(); ++i) {
        const auto p = head.probs.col(i);
        out.col(i) = p.cwiseProduct(rz.col(i)) - p * p.dot(rz.col(i));
      }
      return out;
    }
    case LossKind::Squared: return rz / (spec.noise_sigma * spec.noise_sigma);
    case LossKind::Logistic: {
      MatrixXd out(1, rz.cols());
      for (Index i = 0; i < rz.cols(); ++i) {
        const double s = head.probs(0, i);
        out(0, i) = s * (1.0 - s) * rz(0, i);
      }
      return out;
    }
  }
  return {};
}

// Backpropagates output deltas (k x b) into a flat gradient.
VectorXd backprop(const NetSpec& spec, const ParamVector& theta, const Forward& fw, MatrixXd delta) {
  VectorXd grad = VectorXd::Zero(theta.size());
  for (int l = spec.num_layers() - 1; l >= 0; --l) {
    const auto& ll = theta.layout[l];
    Eigen::Map<MatrixXd>(grad.data() + ll.offset, ll.rows, ll.cols).noalias() = delta * fw.acts[l].transpose();
    if (spec.biases) grad.segment(ll.bias_offset, ll.bias_size) = delta.rowwise().sum();
    if (l > 0) delta = (theta.weight(l).transpose() * delta).cwiseProduct(fw.slope[l - 1]);
  }
  return grad;
}

// Backpropagates output deltas and stores the per-sample gradient of every
// sample as a row of the result.
MatrixXd backprop_per_sample(const NetSpec& spec, const ParamVector& theta, const Forward& fw, MatrixXd delta) {
  const Index b = delta.cols();
  MatrixXd rows(b, theta.size());
  for (int l = spec.num_layers() - 1; l >= 0; --l) {
    const auto& ll = theta.layout[l];
    const MatrixXd& a = fw.acts[l];
    for (Index c = 0; c < ll.cols; ++c) {
      for (Index r = 0; r < ll.rows; ++r) {
        rows.col(ll.offset + c * ll.rows + r) = delta.row(r).transpose().cwiseProduct(a.row(c).transpose());
      }
    }
    if (spec.biases) rows.middleCols(ll.bias_offset, ll.bias_size) = delta.transpose();
    if (l > 0) delta = (theta.weight(l).transpose() * delta).cwiseProduct(fw.slope[l - 1]);
  }
  return rows;
}

// Everything a second-order pass needs that does not depend on v.
struct SecondOrderCache {
  Forward fw;
  Head head;
  MatrixXd out_delta;  // first-order output delta of the differentiated scalar
};

SecondOrderCache prepare_second_order(const NetSpec& spec, const ParamVector& theta, const Dataset& batch,
                                      SecondOrderTarget target) {
  check_inputs(spec, theta, batch);
  SecondOrderCache c;
  c.fw = run_forward(spec, theta, batch);
  c.head = evaluate_head(spec, c.fw.logits, batch);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  c.out_delta = c.head.grad * (target == SecondOrderTarget::LogLoss ? inv_n : -inv_n);
  return c;
}

// Output-space curvature of the differentiated scalar applied to rz:
//   LogLoss:         H_z rz / n
//   LikelihoodRatio: (g g^T - H_z) rz / n
MatrixXd output_curvature(const NetSpec& spec, const SecondOrderCache& c, const MatrixXd& rz,
                          SecondOrderTarget target) {
  const double inv_n = 1.0 / static_cast<double>(rz.cols());
  MatrixXd hz = apply_head_hessian(spec, c.head, rz);
  if (target == SecondOrderTarget::LogLoss) return hz * inv_n;
  MatrixXd out(rz.rows(), rz.cols());
  for (Index i = 0; i < rz.cols(); ++i) out.col(i) = c.head.grad.col(i) * c.head.grad.col(i).dot(rz.col(i)) - hz.col(i);
  return out * inv_n;
}

// Pearlmutter R-operator: forward-mode directional derivative of the
// backward pass.
VectorXd second_order_apply(const NetSpec& spec, const ParamVector& theta, const SecondOrderCache& c,
                            const VectorXd& v, SecondOrderTarget target) {
  if (v.size() != theta.size()) throw InvalidInput("direction has wrong length");
  if (!v.allFinite()) throw NumericError("non-finite direction");
  const ParamVector dir(theta.layout, v);
  const int L = spec.num_layers();
  const Forward& fw = c.fw;

  std::vector<MatrixXd> racts(L);  // racts[l] = R{acts[l]}
  racts[0] = MatrixXd::Zero(fw.acts[0].rows(), fw.acts[0].cols());
  MatrixXd rz;
  for (int l = 0; l < L; ++l) {
    rz = dir.weight(l) * fw.acts[l];
    if (l > 0) rz.noalias() += theta.weight(l) * racts[l];
    if (spec.biases) rz.colwise() += dir.bias(l);
    if (l < L - 1) racts[l + 1] = fw.slope[l].cwiseProduct(rz);
  }

  MatrixXd delta = c.out_delta;
  MatrixXd rdelta = output_curvature(spec, c, rz, target);
  VectorXd out = VectorXd::Zero(theta.size());
  for (int l = L - 1; l >= 0; --l) {
    const auto& ll = theta.layout[l];
    auto rw = Eigen::Map<MatrixXd>(out.data() + ll.offset, ll.rows, ll.cols);
    rw.noalias() = rdelta * fw.acts[l].transpose();
    if (l > 0) rw.noalias() += delta * racts[l].transpose();
    if (spec.biases) out.segment(ll.bias_offset, ll.bias_size) = rdelta.rowwise().sum();
    if (l > 0) {
      MatrixXd rda = dir.weight(l).transpose() * delta;
      rda.noalias() += theta.weight(l).transpose() * rdelta;
      delta = (theta.weight(l).transpose() * delta).cwiseProduct(fw.slope[l - 1]);
      rdelta = rda.cwiseProduct(fw.slope[l - 1]);
    }
  }
  if (!out.allFinite()) throw NumericError("non-finite Hessian-vector product");
  return out;
}

}  // namespace

EvalReport forward_loss(const NetSpec& spec, const ParamVector& theta, const Dataset& batch) {
  check_inputs(spec, theta, batch);
  Forward fw = run_forward(spec, theta, batch);
  Head head = evaluate_head(spec, fw.logits, batch);
  EvalReport rep;
  rep.sample_losses = std::move(head.losses);
  rep.loss = rep.sample_losses.mean();
  rep.logits = std::move(fw.logits);
  rep.prediction_probs = std::move(head.probs);
  return rep;
}

double loss_value(const NetSpec& spec, const ParamVector& theta, const Dataset& batch) {
  return forward_loss(spec, theta, batch).loss;
}

double zero_one_error(const NetSpec& spec, const ParamVector& theta, const Dataset& batch) {
  if (spec.loss == LossKind::Squared) throw InvalidInput("0-1 error undefined for the squared head");
  check_inputs(spec, theta, batch);
  const Forward fw = run_forward(spec, theta, batch);
  Index wrong = 0;
  for (Index i = 0; i < batch.size(); ++i) {
    int pred = 0;
    if (spec.loss == LossKind::Logistic) {
      pred = fw.logits(0, i) > 0 ? 1 : 0;
    } else {
      fw.logits.col(i).maxCoeff(&pred);
    }
    if (pred != batch.labels[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(batch.size());
}

double min_abs_preactivation(const NetSpec& spec, const ParamVector& theta, const Dataset& batch) {
  check_inputs(spec, theta, batch);
  double best = std::numeric_limits<double>::infinity();
  MatrixXd a = batch.columns();
  for (int l = 0; l + 1 < spec.num_layers(); ++l) {
    MatrixXd z = theta.weight(l) * a;
    if (spec.biases) z.colwise() += theta.bias(l);
    best = std::min(best, z.cwiseAbs().minCoeff());
    a = spec.activation == Activation::Relu ? MatrixXd(z.cwiseMax(0.0)) : z;
  }
  return best;
}

VectorXd gradient(const NetSpec& spec, const ParamVector& theta, const Dataset& batch) {
  check_inputs(spec, theta, batch);
  const Forward fw = run_forward(spec, theta, batch);
  const Head head = evaluate_head(spec, fw.logits, batch);
  return backprop(spec, theta, fw, head.grad / static_cast<double>(batch.size()));
}

MatrixXd per_sample_gradients(const NetSpec& spec, const ParamVector& theta, const Dataset& batch) {
  check_inputs(spec, theta, batch);
  const Forward fw = run_forward(spec, theta, batch);
  const Head head = evaluate_head(spec, fw.logits, batch);
  return backprop_per_sample(spec, theta, fw, head.grad);
}

VectorXd hessian_vector_product(const NetSpec& spec, const ParamVector& theta, const Dataset& batch,
                                const VectorXd& v, SecondOrderTarget target) {
  const SecondOrderCache c = prepare_second_order(spec, theta, batch, target);
  return second_order_apply(spec, theta, c, v, target);
}

Index HessianHandle::size() const { return mode == Mode::Dense ? dense.rows() : param_count(layout); }

VectorXd HessianHandle::apply(const VectorXd& v) const {
  if (mode == Mode::Dense) return dense * v;
  return hvp(v);
}

HessianHandle dense_hessian(const NetSpec& spec, const ParamVector& theta, const Dataset& batch, Index dense_limit,
                            SecondOrderTarget target) {
  const Index p = theta.size();
  if (p > dense_limit)
    throw CapacityError("dense Hessian of size " + std::to_string(p) + " exceeds limit " +
                        std::to_string(dense_limit) + "; use hessian_operator instead");
  const SecondOrderCache c = prepare_second_order(spec, theta, batch, target);
  HessianHandle h;
  h.mode = HessianHandle::Mode::Dense;
  h.layout = theta.layout;
  h.dense.resize(p, p);
  VectorXd e = VectorXd::Zero(p);
  for (Index j = 0; j < p; ++j) {
    e[j] = 1.0;
    h.dense.col(j) = second_order_apply(spec, theta, c, e, target);
    e[j] = 0.0;
  }
  h.dense = 0.5 * (h.dense + h.dense.transpose()).eval();
  return h;
}

HessianHandle hessian_operator(const NetSpec& spec, const ParamVector& theta, const Dataset& batch,
                               SecondOrderTarget target) {
  auto cache = std::make_shared<const SecondOrderCache>(prepare_second_order(spec, theta, batch, target));
  HessianHandle h;
  h.mode = HessianHandle::Mode::Operator;
  h.layout = theta.layout;
  h.hvp = [spec, theta, cache, target](const VectorXd& v) { return second_order_apply(spec, theta, *cache, v, target); };
  return h;
}

VectorXd hessian_diagonal(const NetSpec& spec, const ParamVector& theta, const Dataset& batch) {
  const SecondOrderCache c = prepare_second_order(spec, theta, batch, SecondOrderTarget::LogLoss);
  const Index p = theta.size();
  VectorXd diag(p);
  VectorXd e = VectorXd::Zero(p);
  for (Index j = 0; j < p; ++j) {
    e[j] = 1.0;
    diag[j] = second_order_apply(spec, theta, c, e, SecondOrderTarget::LogLoss)[j];
    e[j] = 0.0;
  }
  return diag;
}

LayerBlocks layer_blocks(const HessianHandle& handle) {
  if (handle.mode != HessianHandle::Mode::Dense) throw CapacityError("layer blocks need a dense Hessian");
  if (handle.dense.rows() != param_count(handle.layout)) throw InvalidInput("Hessian does not match its layout");
  LayerBlocks blocks;
  const Index p = handle.dense.rows();
  for (const auto& ll : handle.layout) {
    blocks.diagonal.push_back(handle.dense.block(ll.offset, ll.offset, ll.count(), ll.count()));
    blocks.trailing.push_back(handle.dense.bottomRightCorner(p - ll.offset, p - ll.offset));
  }
  return blocks;
}

namespace {

nlohmann::json spec_to_json(const NetSpec& spec) {
  return {{"input_dim", spec.input_dim},
          {"hidden_widths", spec.hidden_widths},
          {"num_classes", spec.num_classes},
          {"biases", spec.biases},
          {"activation", to_string(spec.activation)},
          {"loss", to_string(spec.loss)},
          {"noise_sigma", spec.noise_sigma}};
}

NetSpec spec_from_json(const nlohmann::json& j) {
  NetSpec spec;
  spec.input_dim = j.at("input_dim").get<int>();
  spec.hidden_widths = j.at("hidden_widths").get<std::vector<int>>();
  spec.num_classes = j.at("num_classes").get<int>();
  spec.biases = j.value("biases", true);
  spec.activation = activation_from_string(j.value("activation", std::string("relu")));
  spec.loss = loss_from_string(j.value("loss", std::string("softmax_xent")));
  spec.noise_sigma = j.value("noise_sigma", 1.0);
  spec.validate();
  return spec;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NetSpec& spec, const ParamVector& theta,
                     std::uint64_t seed) {
  nlohmann::json header = {{"format", "sgdlab-checkpoint"}, {"version", 1}, {"spec", spec_to_json(spec)},
                           {"seed", seed}, {"p", theta.size()}};
  nlohmann::json layout = nlohmann::json::array();
  for (const auto& ll : theta.layout)
    layout.push_back({{"offset", ll.offset}, {"rows", ll.rows}, {"cols", ll.cols}, {"bias_offset", ll.bias_offset}});
  header["layout"] = layout;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
  if (theta.size() <= kDefaultDenseLimit) {
    header["encoding"] = "json";
    header["values"] = std::vector<double>(theta.values.data(), theta.values.data() + theta.size());
    out << header.dump() << '\n';
  } else {
    header["encoding"] = "f64le";
    out << header.dump() << '\n';
    static_assert(std::endian::native == std::endian::little, "f64le payload assumes a little-endian host");
    out.write(reinterpret_cast<const char*>(theta.values.data()),
              static_cast<std::streamsize>(theta.size() * sizeof(double)));
  }
  if (!out) throw InvalidInput("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("missing checkpoint header", 0);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what(), e.byte);
  }
  Checkpoint ck;
  try {
    ck.spec = spec_from_json(header.at("spec"));
    ck.seed = header.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what(), 0);
  }
  const Layout layout = make_layout(ck.spec);
  const Index p = param_count(layout);
  VectorXd values(p);
  const std::string enc = header.value("encoding", std::string());
  if (enc == "json") {
    const auto v = header.at("values").get<std::vector<double>>();
    if (static_cast<Index>(v.size()) != p) throw FormatError("checkpoint value count mismatch", 0);
    values = Eigen::Map<const VectorXd>(v.data(), p);
  } else if (enc == "f64le") {
    const auto start = static_cast<std::uint64_t>(line.size() + 1);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(p * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(p * sizeof(double)))
      throw FormatError("truncated checkpoint payload", start + static_cast<std::uint64_t>(in.gcount()));
  } else {
    throw FormatError("unknown checkpoint encoding '" + enc + "'", 0);
  }
  ck.theta = ParamVector(layout, std::move(values));
  return ck;
}

}  // namespace sgdlab
