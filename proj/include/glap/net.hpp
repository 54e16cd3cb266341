#pragma once

#include "glap/types.hpp"

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace glap {

enum class Activation { relu, tanh, identity };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

// Dense feedforward architecture. The activation applies to every hidden
// layer; the output layer is always affine.
//
// Parameters are flattened layer-major, weights before bias, with each
// weight matrix (out x in) stored row-major.
struct NetworkSpec {
  std::size_t input_dim = 1;
  std::size_t output_dim = 1;
  std::vector<std::size_t> hidden;
  Activation activation = Activation::relu;
  std::vector<bool> bias_per_layer;  // one entry per affine layer

  std::size_t num_layers() const { return hidden.size() + 1; }
  std::size_t layer_inputs(std::size_t layer) const;
  std::size_t layer_outputs(std::size_t layer) const;
  bool layer_has_bias(std::size_t layer) const;
  std::size_t param_count() const;

  // Throws DimensionError on an inconsistent description.
  void validate() const;

  static NetworkSpec mlp(std::size_t input_dim, std::vector<std::size_t> hidden,
                         std::size_t output_dim, Activation activation, bool bias = true);
};

// Location of one affine layer inside a ParamVector.
struct LayerSlice {
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
  std::size_t rows = 0;  // outputs
  std::size_t cols = 0;  // inputs
  bool has_bias = false;
};

struct Dataset {
  Matrix inputs;            // N x I
  Matrix targets;           // N x O, regression only
  std::vector<int> labels;  // classification only

  std::size_t size() const { return static_cast<std::size_t>(inputs.rows()); }
  bool is_classification() const { return !labels.empty(); }

  // Checks shapes, finiteness and label range against a network's dims.
  void validate(std::size_t input_dim, std::size_t output_dim) const;

  Dataset subset(const std::vector<std::size_t>& rows) const;
  Dataset head(std::size_t n) const;
};

// Activations recorded during a batched forward pass. Row n of every matrix
// belongs to input n.
struct ForwardTrace {
  std::vector<Matrix> pre;   // pre-activations, one per layer
  std::vector<Matrix> post;  // post-activations; post[0] is the input batch
};

class Network {
 public:
  explicit Network(NetworkSpec spec);

  const NetworkSpec& spec() const { return spec_; }
  std::size_t param_count() const { return param_count_; }
  std::size_t input_dim() const { return spec_.input_dim; }
  std::size_t output_dim() const { return spec_.output_dim; }
  const std::vector<LayerSlice>& layout() const { return layout_; }

  Vector forward(const ParamVector& w, const Vector& x) const;
  // J_w(x) * tangent
  Vector jvp(const ParamVector& w, const Vector& x, const ParamVector& tangent) const;
  // J_w(x)^T * cotangent
  ParamVector vjp(const ParamVector& w, const Vector& x, const Vector& cotangent) const;
  // O x D Jacobian of a single input, by reverse mode over all outputs at once.
  Matrix jacobian(const ParamVector& w, const Vector& x) const;

  // Batched forms. `inputs` is N x I; outputs are N x O.
  Matrix forward_batch(const ParamVector& w, const Matrix& inputs,
                       ForwardTrace* trace = nullptr) const;
  // Row n is J_w(x_n) * tangent.
  Matrix jvp_batch(const ParamVector& w, const ForwardTrace& trace,
                   const ParamVector& tangent) const;
  // Sum over rows of J_w(x_n)^T * cotangents.row(n).
  ParamVector vjp_batch(const ParamVector& w, const ForwardTrace& trace,
                        const Matrix& cotangents) const;

  // Stacked (N*O) x D Jacobian, datum-major. Refuses when N*O*D > max_entries.
  Matrix dense_jacobian(const ParamVector& w, const Dataset& data,
                        std::size_t max_entries = 10'000'000) const;

  // Scaled normal initialisation (variance 1/fan_in, zero bias).
  ParamVector init_params(std::uint64_t seed) const;

 private:
  void check_params(const ParamVector& w, const char* what) const;
  void check_input(const Vector& x) const;

  NetworkSpec spec_;
  std::vector<LayerSlice> layout_;
  std::size_t param_count_ = 0;
};

// Checkpoint: "GLAPv001", D as u64 LE, then D little-endian doubles.
void write_checkpoint(const std::filesystem::path& path, const ParamVector& w);
ParamVector read_checkpoint(const std::filesystem::path& path);

}  // namespace glap
