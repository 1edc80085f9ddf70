#include "facesearch/backbone.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "binary_io.hpp"

namespace facesearch {
namespace {

constexpr std::uint32_t kNetworkVersion = 1;

std::size_t round_half_up(double v) {
  return v <= 0.0 ? 0 : static_cast<std::size_t>(std::floor(v + 0.5));
}

}  // namespace

void BaseArch::validate() const {
  if (input_dim < 1) throw InvalidArgument("BaseArch: input_dim must be positive");
  if (base_depth < 1) throw InvalidArgument("BaseArch: base_depth must be >= 1");
  if (base_width < 2) throw InvalidArgument("BaseArch: base_width must be >= 2");
  if (embed_dim < 2) throw InvalidArgument("BaseArch: embed_dim must be >= 2");
}

NetworkConfig expand(const BaseArch& base, double depth_ratio, double width_ratio) {
  base.validate();
  if (!std::isfinite(depth_ratio) || !std::isfinite(width_ratio)) {
    throw InvalidArgument("expand: ratios must be finite");
  }
  const auto depth = round_half_up(depth_ratio * static_cast<double>(base.base_depth));
  const auto width = round_half_up(width_ratio * static_cast<double>(base.base_width));
  if (depth < 1) throw InvalidArgument("expand: depth ratio leaves no hidden layer");
  if (width < 2) throw InvalidArgument("expand: width ratio leaves fewer than 2 units");
  NetworkConfig cfg;
  cfg.depth_ratio = depth_ratio;
  cfg.width_ratio = width_ratio;
  cfg.layer_dims.push_back(base.input_dim);
  cfg.layer_dims.insert(cfg.layer_dims.end(), depth, width);
  cfg.layer_dims.push_back(base.embed_dim);
  return cfg;
}

std::uint64_t flops(const NetworkConfig& cfg) {
  std::uint64_t total = 0;
  for (std::size_t l = 0; l + 1 < cfg.layer_dims.size(); ++l) {
    total += 2 * static_cast<std::uint64_t>(cfg.layer_dims[l]) * cfg.layer_dims[l + 1];
  }
  return total;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) n += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
  return n;
}

bool Network::all_finite() const {
  for (const auto& layer : layers) {
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
  }
  return true;
}

Network instantiate(const NetworkConfig& cfg, std::uint64_t seed) {
  if (cfg.layer_dims.size() < 2) throw InvalidArgument("instantiate: need at least one layer");
  Network net;
  net.config = cfg;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < cfg.layer_dims.size(); ++l) {
    const auto fan_in = static_cast<Eigen::Index>(cfg.layer_dims[l]);
    const auto fan_out = static_cast<Eigen::Index>(cfg.layer_dims[l + 1]);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> uniform(-limit, limit);
    Layer layer{Matrix(fan_in, fan_out), RowVector::Zero(fan_out)};
    for (Eigen::Index r = 0; r < fan_in; ++r) {
      for (Eigen::Index c = 0; c < fan_out; ++c) layer.weight(r, c) = uniform(rng);
    }
    net.layers.push_back(std::move(layer));
  }
  return net;
}

Network instantiate(const BaseArch& base, double depth_ratio, double width_ratio, std::uint64_t seed) {
  return instantiate(expand(base, depth_ratio, width_ratio), seed);
}

Matrix forward(const Network& net, const Matrix& batch, ActivationCache* cache) {
  if (static_cast<std::size_t>(batch.cols()) != net.input_dim()) {
    throw InvalidArgument("forward: batch has " + std::to_string(batch.cols()) +
                          " columns, network expects " + std::to_string(net.input_dim()));
  }
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Matrix a = batch;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    Matrix z = a * layer.weight;
    z.rowwise() += layer.bias;
    if (cache) {
      cache->inputs.push_back(std::move(a));
      cache->pre.push_back(z);
    }
    if (l + 1 < net.layers.size()) {
      a = z.cwiseMax(0.0);
    } else {
      a = std::move(z);
    }
  }
  return a;
}

NetworkGradients backward(const Network& net, const ActivationCache& cache, const Matrix& grad_output) {
  const auto n_layers = net.layers.size();
  if (cache.inputs.size() != n_layers || cache.pre.size() != n_layers) {
    throw InvalidArgument("backward: cache does not match network depth");
  }
  for (std::size_t l = 0; l < n_layers; ++l) {
    if (cache.inputs[l].cols() != net.layers[l].weight.rows() ||
        cache.pre[l].cols() != net.layers[l].weight.cols() ||
        cache.pre[l].rows() != cache.inputs[l].rows()) {
      throw InvalidArgument("backward: stale activation cache");
    }
  }
  if (grad_output.rows() != cache.pre.back().rows() || grad_output.cols() != cache.pre.back().cols()) {
    throw InvalidArgument("backward: upstream gradient shape mismatch");
  }

  NetworkGradients grads;
  grads.layers.resize(n_layers);
  Matrix delta = grad_output;  // dL/dz for the current layer
  for (std::size_t l = n_layers; l-- > 0;) {
    if (l + 1 < n_layers) {
      delta = delta.cwiseProduct((cache.pre[l].array() > 0.0).cast<double>().matrix());
    }
    grads.layers[l].weight = cache.inputs[l].transpose() * delta;
    grads.layers[l].bias = delta.colwise().sum();
    delta = delta * net.layers[l].weight.transpose();
  }
  grads.grad_input = std::move(delta);
  return grads;
}

void write_network(std::ostream& out, const Network& net) {
  io::write_magic(out, "FSNW");
  io::write_u32(out, kNetworkVersion);
  io::write_f64(out, net.config.depth_ratio);
  io::write_f64(out, net.config.width_ratio);
  io::write_u64(out, net.config.layer_dims.size());
  for (auto d : net.config.layer_dims) io::write_u64(out, d);
  for (const auto& layer : net.layers) {
    io::write_matrix(out, layer.weight);
    io::write_matrix(out, layer.bias);
  }
}

Network read_network(std::istream& in) {
  io::expect_magic(in, "FSNW");
  const auto version = io::read_u32(in);
  if (version != kNetworkVersion) throw FormatError("FSNW: unsupported version " + std::to_string(version));
  Network net;
  net.config.depth_ratio = io::read_f64(in);
  net.config.width_ratio = io::read_f64(in);
  const auto n_dims = io::read_u64(in);
  if (n_dims < 2 || n_dims > 4096) throw FormatError("FSNW: bad layer count");
  for (std::uint64_t k = 0; k < n_dims; ++k) net.config.layer_dims.push_back(io::read_u64(in));
  for (std::size_t l = 0; l + 1 < net.config.layer_dims.size(); ++l) {
    Layer layer;
    layer.weight = io::read_matrix(in, net.config.layer_dims[l], net.config.layer_dims[l + 1]);
    layer.bias = io::read_matrix(in, 1, net.config.layer_dims[l + 1]);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

void save_network(const std::string& path, const Network& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_network(out, net);
}

Network load_network(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return read_network(in);
}

}  // namespace facesearch
