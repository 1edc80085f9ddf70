#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace facesearch {

// Row-major so that one sample / one class weight is one contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition violated by the caller.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A zero-norm vector where a direction is required.
class DegenerateEmbedding : public Error {
 public:
  using Error::Error;
};

// Cleaning left fewer than two classes, or a class has no usable members.
class DegenerateDataset : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class Diverged : public Error {
 public:
  Diverged(const std::string& what, std::int64_t step) : Error(what), step_(step) {}
  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

// Malformed or version-mismatched file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// SplitMix64 finaliser; used to derive independent PRNG streams from a
// global seed and a tuple of indices.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a) noexcept {
  return mix_seed(seed ^ mix_seed(a + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) noexcept {
  return derive_seed(derive_seed(seed, a), b);
}

}  // namespace facesearch
