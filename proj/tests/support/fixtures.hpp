#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "facesearch/common.hpp"
#include "facesearch/synthdata.hpp"

namespace fixture {

using facesearch::Matrix;

inline Matrix gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = n(rng);
  }
  return m;
}

inline std::vector<std::uint32_t> labels(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  std::uniform_int_distribution<std::uint32_t> u(0, static_cast<std::uint32_t>(k - 1));
  std::vector<std::uint32_t> y(n);
  for (auto& v : y) v = u(rng);
  return y;
}

inline facesearch::DatasetSpec small_spec(std::uint64_t seed) {
  facesearch::DatasetSpec s;
  s.n_classes = 6;
  s.samples_per_class = 12;
  s.feature_dim = 10;
  s.embed_dim = 8;
  s.intra_spread = 0.2;
  s.outlier_rate = 0.1;
  s.flip_rate = 0.05;
  s.seed = seed;
  return s;
}

}  // namespace fixture
