#include "glap/net.hpp"

#include "glap/binary_io.hpp"
#include "glap/rng.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace glap {

namespace {

using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using MutRowMajorMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

constexpr char kCheckpointMagic[8] = {'G', 'L', 'A', 'P', 'v', '0', '0', '1'};

RowMajorMap weights(const ParamVector& w, const LayerSlice& s) {
  return RowMajorMap(w.data() + s.weight_offset, static_cast<Eigen::Index>(s.rows),
                     static_cast<Eigen::Index>(s.cols));
}

MutRowMajorMap weights(ParamVector& w, const LayerSlice& s) {
  return MutRowMajorMap(w.data() + s.weight_offset, static_cast<Eigen::Index>(s.rows),
                        static_cast<Eigen::Index>(s.cols));
}

void activate(Activation a, Matrix& m) {
  switch (a) {
    case Activation::relu: m = m.cwiseMax(0.0); break;
    case Activation::tanh: m = m.array().tanh().matrix(); break;
    case Activation::identity: break;
  }
}

// Derivative of the activation given pre-activation z and post-activation a.
// ReLU'(0) is taken to be 0.
Matrix activation_derivative(Activation act, const Matrix& z, const Matrix& a) {
  switch (act) {
    case Activation::relu: return (z.array() > 0.0).cast<double>().matrix();
    case Activation::tanh: return (1.0 - a.array().square()).matrix();
    case Activation::identity: break;
  }
  return Matrix::Ones(z.rows(), z.cols());
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "unknown";
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + name + "'");
}

std::size_t NetworkSpec::layer_inputs(std::size_t layer) const {
  return layer == 0 ? input_dim : hidden.at(layer - 1);
}

std::size_t NetworkSpec::layer_outputs(std::size_t layer) const {
  return layer == hidden.size() ? output_dim : hidden.at(layer);
}

bool NetworkSpec::layer_has_bias(std::size_t layer) const {
  return bias_per_layer.empty() ? true : bias_per_layer.at(layer);
}

std::size_t NetworkSpec::param_count() const {
  std::size_t d = 0;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    d += layer_inputs(l) * layer_outputs(l) + (layer_has_bias(l) ? layer_outputs(l) : 0);
  }
  return d;
}

void NetworkSpec::validate() const {
  if (input_dim == 0) throw DimensionError("network input_dim must be positive");
  if (output_dim == 0) throw DimensionError("network output_dim must be positive");
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    if (hidden[l] == 0) throw DimensionError("hidden layer " + std::to_string(l) + " has zero width");
  }
  if (!bias_per_layer.empty() && bias_per_layer.size() != num_layers()) {
    throw DimensionError("bias_per_layer has " + std::to_string(bias_per_layer.size()) +
                         " entries, expected " + std::to_string(num_layers()));
  }
}

NetworkSpec NetworkSpec::mlp(std::size_t input_dim, std::vector<std::size_t> hidden,
                             std::size_t output_dim, Activation activation, bool bias) {
  NetworkSpec s;
  s.input_dim = input_dim;
  s.output_dim = output_dim;
  s.hidden = std::move(hidden);
  s.activation = activation;
  s.bias_per_layer.assign(s.hidden.size() + 1, bias);
  return s;
}

void Dataset::validate(std::size_t input_dim, std::size_t output_dim) const {
  if (inputs.rows() == 0) throw DimensionError("dataset is empty");
  if (static_cast<std::size_t>(inputs.cols()) != input_dim) {
    throw DimensionError("dataset inputs have " + std::to_string(inputs.cols()) +
                         " columns, network expects " + std::to_string(input_dim));
  }
  if (!inputs.allFinite()) throw DimensionError("dataset inputs contain non-finite values");
  if (is_classification()) {
    if (labels.size() != size()) throw DimensionError("label count does not match input rows");
    const int classes = output_dim == 1 ? 2 : static_cast<int>(output_dim);
    for (int y : labels) {
      if (y < 0 || y >= classes) throw DimensionError("label " + std::to_string(y) + " out of range");
    }
  } else {
    if (targets.rows() != inputs.rows() || static_cast<std::size_t>(targets.cols()) != output_dim) {
      throw DimensionError("regression targets must be N x O");
    }
    if (!targets.allFinite()) throw DimensionError("dataset targets contain non-finite values");
  }
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.inputs.resize(static_cast<Eigen::Index>(rows.size()), inputs.cols());
  if (targets.size() > 0) out.targets.resize(static_cast<Eigen::Index>(rows.size()), targets.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    if (r >= inputs.rows()) throw DimensionError("subset row out of range");
    out.inputs.row(static_cast<Eigen::Index>(i)) = inputs.row(r);
    if (targets.size() > 0) out.targets.row(static_cast<Eigen::Index>(i)) = targets.row(r);
    if (!labels.empty()) out.labels.push_back(labels[rows[i]]);
  }
  return out;
}

Dataset Dataset::head(std::size_t n) const {
  std::vector<std::size_t> rows(std::min(n, size()));
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return subset(rows);
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  std::size_t offset = 0;
  for (std::size_t l = 0; l < spec_.num_layers(); ++l) {
    LayerSlice s;
    s.rows = spec_.layer_outputs(l);
    s.cols = spec_.layer_inputs(l);
    s.has_bias = spec_.layer_has_bias(l);
    s.weight_offset = offset;
    offset += s.rows * s.cols;
    s.bias_offset = offset;
    if (s.has_bias) offset += s.rows;
    layout_.push_back(s);
  }
  param_count_ = offset;
}

void Network::check_params(const ParamVector& w, const char* what) const {
  if (static_cast<std::size_t>(w.size()) != param_count_) {
    throw DimensionError(std::string(what) + " has length " + std::to_string(w.size()) +
                         ", network has " + std::to_string(param_count_) + " parameters");
  }
}

void Network::check_input(const Vector& x) const {
  if (static_cast<std::size_t>(x.size()) != spec_.input_dim) {
    throw DimensionError("layer 0 expects input of length " + std::to_string(spec_.input_dim) +
                         ", got " + std::to_string(x.size()));
  }
}

Matrix Network::forward_batch(const ParamVector& w, const Matrix& inputs, ForwardTrace* trace) const {
  check_params(w, "weights");
  if (static_cast<std::size_t>(inputs.cols()) != spec_.input_dim) {
    throw DimensionError("layer 0 expects " + std::to_string(spec_.input_dim) + " input columns, got " +
                         std::to_string(inputs.cols()));
  }
  if (trace) {
    trace->pre.clear();
    trace->post.clear();
    trace->post.push_back(inputs);
  }
  Matrix a = inputs;
  const std::size_t last = layout_.size() - 1;
  for (std::size_t l = 0; l < layout_.size(); ++l) {
    const auto& s = layout_[l];
    Matrix z = a * weights(w, s).transpose();
    if (s.has_bias) {
      z.rowwise() += w.segment(static_cast<Eigen::Index>(s.bias_offset), static_cast<Eigen::Index>(s.rows)).transpose();
    }
    a = z;
    if (l != last) activate(spec_.activation, a);
    if (trace) {
      trace->pre.push_back(std::move(z));
      trace->post.push_back(a);
    }
  }
  return a;
}

Matrix Network::jvp_batch(const ParamVector& w, const ForwardTrace& trace, const ParamVector& tangent) const {
  check_params(w, "weights");
  check_params(tangent, "tangent");
  const std::size_t last = layout_.size() - 1;
  const Eigen::Index n = trace.post.front().rows();
  Matrix da = Matrix::Zero(n, static_cast<Eigen::Index>(spec_.input_dim));
  for (std::size_t l = 0; l < layout_.size(); ++l) {
    const auto& s = layout_[l];
    Matrix dz = trace.post[l] * weights(tangent, s).transpose();
    if (l > 0) dz.noalias() += da * weights(w, s).transpose();
    if (s.has_bias) {
      dz.rowwise() +=
          tangent.segment(static_cast<Eigen::Index>(s.bias_offset), static_cast<Eigen::Index>(s.rows)).transpose();
    }
    if (l != last) {
      da = activation_derivative(spec_.activation, trace.pre[l], trace.post[l + 1]).cwiseProduct(dz);
    } else {
      da = std::move(dz);
    }
  }
  return da;
}

ParamVector Network::vjp_batch(const ParamVector& w, const ForwardTrace& trace, const Matrix& cotangents) const {
  check_params(w, "weights");
  if (static_cast<std::size_t>(cotangents.cols()) != spec_.output_dim ||
      cotangents.rows() != trace.post.front().rows()) {
    throw DimensionError("cotangent batch must be N x " + std::to_string(spec_.output_dim));
  }
  ParamVector grad = ParamVector::Zero(static_cast<Eigen::Index>(param_count_));
  Matrix g = cotangents;
  for (std::size_t l = layout_.size(); l-- > 0;) {
    const auto& s = layout_[l];
    weights(grad, s).noalias() = g.transpose() * trace.post[l];
    if (s.has_bias) {
      grad.segment(static_cast<Eigen::Index>(s.bias_offset), static_cast<Eigen::Index>(s.rows)) =
          g.colwise().sum().transpose();
    }
    if (l > 0) {
      Matrix upstream = g * weights(w, s);
      g = activation_derivative(spec_.activation, trace.pre[l - 1], trace.post[l]).cwiseProduct(upstream);
    }
  }
  return grad;
}

Vector Network::forward(const ParamVector& w, const Vector& x) const {
  check_input(x);
  return forward_batch(w, x.transpose()).row(0).transpose();
}

Vector Network::jvp(const ParamVector& w, const Vector& x, const ParamVector& tangent) const {
  check_input(x);
  ForwardTrace trace;
  forward_batch(w, x.transpose(), &trace);
  return jvp_batch(w, trace, tangent).row(0).transpose();
}

ParamVector Network::vjp(const ParamVector& w, const Vector& x, const Vector& cotangent) const {
  check_input(x);
  if (static_cast<std::size_t>(cotangent.size()) != spec_.output_dim) {
    throw DimensionError("cotangent has length " + std::to_string(cotangent.size()) + ", network output is " +
                         std::to_string(spec_.output_dim));
  }
  ForwardTrace trace;
  forward_batch(w, x.transpose(), &trace);
  return vjp_batch(w, trace, cotangent.transpose());
}

Matrix Network::jacobian(const ParamVector& w, const Vector& x) const {
  check_input(x);
  ForwardTrace trace;
  forward_batch(w, x.transpose(), &trace);
  const auto out = static_cast<Eigen::Index>(spec_.output_dim);
  Matrix jac = Matrix::Zero(out, static_cast<Eigen::Index>(param_count_));
  // Row o of g is the cotangent of output o pulled back to the current layer.
  Matrix g = Matrix::Identity(out, out);
  for (std::size_t l = layout_.size(); l-- > 0;) {
    const auto& s = layout_[l];
    const Eigen::RowVectorXd a_prev = trace.post[l].row(0);
    for (Eigen::Index o = 0; o < out; ++o) {
      for (std::size_t r = 0; r < s.rows; ++r) {
        jac.row(o).segment(static_cast<Eigen::Index>(s.weight_offset + r * s.cols), static_cast<Eigen::Index>(s.cols)) =
            g(o, static_cast<Eigen::Index>(r)) * a_prev;
      }
      if (s.has_bias) {
        jac.row(o).segment(static_cast<Eigen::Index>(s.bias_offset), static_cast<Eigen::Index>(s.rows)) = g.row(o);
      }
    }
    if (l > 0) {
      const Matrix deriv = activation_derivative(spec_.activation, trace.pre[l - 1], trace.post[l]);
      const Matrix upstream = g * weights(w, s);
      g = (upstream.array().rowwise() * deriv.row(0).array()).matrix();
    }
  }
  return jac;
}

Matrix Network::dense_jacobian(const ParamVector& w, const Dataset& data, std::size_t max_entries) const {
  check_params(w, "weights");
  const std::size_t n = data.size();
  const std::size_t o = spec_.output_dim;
  if (n * o * param_count_ > max_entries) {
    throw BudgetError("dense Jacobian needs " + std::to_string(n * o * param_count_) + " entries, budget is " +
                      std::to_string(max_entries) + "; use the matrix-free path");
  }
  Matrix jac(static_cast<Eigen::Index>(n * o), static_cast<Eigen::Index>(param_count_));
  for (std::size_t i = 0; i < n; ++i) {
    jac.middleRows(static_cast<Eigen::Index>(i * o), static_cast<Eigen::Index>(o)) =
        jacobian(w, data.inputs.row(static_cast<Eigen::Index>(i)).transpose());
  }
  return jac;
}

ParamVector Network::init_params(std::uint64_t seed) const {
  Rng rng(seed, {0x1417});
  ParamVector w = ParamVector::Zero(static_cast<Eigen::Index>(param_count_));
  for (const auto& s : layout_) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(s.cols));
    for (std::size_t i = 0; i < s.rows * s.cols; ++i) {
      w[static_cast<Eigen::Index>(s.weight_offset + i)] = scale * rng.normal();
    }
  }
  return w;
}

void write_checkpoint(const std::filesystem::path& path, const ParamVector& w) {
  std::ostringstream out(std::ios::binary);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  io::write_u64_le(out, static_cast<std::uint64_t>(w.size()));
  io::write_f64_le(out, std::span<const double>(w.data(), static_cast<std::size_t>(w.size())));
  io::atomic_write(path, out.str());
}

ParamVector read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  char magic[8] = {};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw Error("bad checkpoint magic in " + path.string());
  }
  const auto d = io::read_u64_le(in);
  ParamVector w(static_cast<Eigen::Index>(d));
  io::read_f64_le(in, std::span<double>(w.data(), d));
  if (!w.allFinite()) throw NumericalError("checkpoint contains non-finite weights");
  return w;
}

}  // namespace glap
