#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "facesearch/common.hpp"

namespace facesearch {

// Reference MLP that the depth/width expansion ratios scale.
struct BaseArch {
  std::size_t input_dim = 32;
  std::size_t base_depth = 2;   // hidden layers
  std::size_t base_width = 32;  // hidden units per layer
  std::size_t embed_dim = 16;

  void validate() const;
};

struct NetworkConfig {
  // [input_dim, w', ..., w', embed_dim] with depth' hidden entries.
  std::vector<std::size_t> layer_dims;
  double depth_ratio = 1.0;
  double width_ratio = 1.0;

  std::size_t hidden_layers() const noexcept { return layer_dims.size() - 2; }
  std::size_t hidden_width() const noexcept { return layer_dims[1]; }
};

// round-half-up(D*L) hidden layers of round-half-up(W*H) units. Throws
// InvalidArgument if that leaves fewer than 1 layer or 2 units.
NetworkConfig expand(const BaseArch& base, double depth_ratio, double width_ratio);

// Sum of 2*fan_in*fan_out over the affine layers.
std::uint64_t flops(const NetworkConfig& cfg);

struct Layer {
  Matrix weight;  // fan_in x fan_out, so activations are row-vectors: a' = a*W + b
  RowVector bias;
};

struct Network {
  NetworkConfig config;
  std::vector<Layer> layers;

  std::size_t input_dim() const noexcept { return config.layer_dims.front(); }
  std::size_t output_dim() const noexcept { return config.layer_dims.back(); }
  std::size_t parameter_count() const;
  bool all_finite() const;
};

struct ActivationCache {
  // inputs[l] is the input to layer l (inputs[0] is the batch);
  // pre[l] is the affine output of layer l before ReLU.
  std::vector<Matrix> inputs;
  std::vector<Matrix> pre;
};

struct NetworkGradients {
  std::vector<Layer> layers;
  Matrix grad_input;
};

Network instantiate(const BaseArch& base, double depth_ratio, double width_ratio, std::uint64_t seed);
// He-uniform weights, zero biases, for an explicit config.
Network instantiate(const NetworkConfig& cfg, std::uint64_t seed);

// ReLU on hidden layers, identity on the output. The output is not normalised.
Matrix forward(const Network& net, const Matrix& batch, ActivationCache* cache = nullptr);

NetworkGradients backward(const Network& net, const ActivationCache& cache, const Matrix& grad_output);

void write_network(std::ostream& out, const Network& net);
Network read_network(std::istream& in);
void save_network(const std::string& path, const Network& net);
Network load_network(const std::string& path);

}  // namespace facesearch
