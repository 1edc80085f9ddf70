#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "facesearch/common.hpp"

namespace facesearch {

// Parameters of a synthetic identity corpus. Class directions live on the
// unit sphere in `embed_dim` dimensions; observations are a fixed random
// linear lift of those embeddings into `feature_dim` dimensions.
struct DatasetSpec {
  std::size_t n_classes = 10;
  std::size_t samples_per_class = 20;
  std::size_t feature_dim = 32;
  std::size_t embed_dim = 16;
  double intra_spread = 0.3;
  double outlier_rate = 0.1;
  double flip_rate = 0.05;
  // Gaussian corruption added to the cleaning embeddings (models a weaker
  // feature extractor). Zero means the cleaner sees the true geometry.
  double embedding_corruption = 0.0;
  // Isotropic noise added to the lifted raw features.
  double feature_noise = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class NoiseKind : std::uint8_t { Clean = 0, Outlier = 1, Flip = 2 };

// Ground-truth annotation of one sample. `identity` is the true class in
// the id space of the generating corpus: for a Flip it is the class the
// sample was taken from, for an Outlier it is meaningless (an outlier has
// no identity) and holds the assigned label's class.
struct NoiseTruth {
  NoiseKind kind = NoiseKind::Clean;
  std::uint32_t identity = 0;

  bool operator==(const NoiseTruth&) const = default;
};

struct LabeledDataset {
  Matrix features;          // n x feature_dim
  Matrix clean_embeddings;  // n x embed_dim, unit rows
  std::vector<std::uint32_t> labels;
  std::vector<NoiseTruth> truth;
  std::size_t n_classes = 0;
  // Largest cosine between two generating class directions, or NaN when
  // the dataset was not produced by generate_dataset.
  double max_direction_cosine = std::numeric_limits<double>::quiet_NaN();

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t feature_dim() const noexcept { return static_cast<std::size_t>(features.cols()); }
  std::size_t embed_dim() const noexcept { return static_cast<std::size_t>(clean_embeddings.cols()); }

  // Rows `indices` in order; labels and n_classes are kept as-is.
  LabeledDataset subset(const std::vector<std::size_t>& indices) const;
  // Throws InvalidArgument on shape or label inconsistencies.
  void validate() const;
};

bool operator==(const LabeledDataset& a, const LabeledDataset& b);

struct VerificationPair {
  std::size_t a = 0;
  std::size_t b = 0;
  bool genuine = false;

  bool operator==(const VerificationPair&) const = default;
};

struct PairSet {
  std::vector<VerificationPair> pairs;

  std::size_t genuine_count() const;
  std::size_t impostor_count() const;
};

LabeledDataset generate_dataset(const DatasetSpec& spec);

// Per-class stratified split on the observed labels. Requires
// 0 < val_fraction < 0.5 and at least two samples in every class.
std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& ds, double val_fraction,
                                                std::uint64_t seed);

// Partitions the labelled classes into a search part and `heldout_classes`
// unseen identities. Both halves have their labels compacted to [0, K');
// truth identities are left in the original id space.
std::pair<LabeledDataset, LabeledDataset> split_identities(const LabeledDataset& ds,
                                                           std::size_t heldout_classes,
                                                           std::uint64_t seed);

// Verification pairs drawn without replacement. Identity comes from the
// ground truth (a flipped sample pairs with its original class); outliers
// belong to no identity and never appear in a pair.
PairSet build_pairset(const LabeledDataset& ds, std::size_t n_genuine, std::size_t n_impostor,
                      std::uint64_t seed);

// Binary "FSDS" container and CSV export.
void write_dataset(std::ostream& out, const LabeledDataset& ds);
LabeledDataset read_dataset(std::istream& in);
void save_dataset(const std::string& path, const LabeledDataset& ds);
LabeledDataset load_dataset(const std::string& path);
void write_dataset_csv(std::ostream& out, const LabeledDataset& ds);

std::string to_string(const NoiseTruth& t);

}  // namespace facesearch
