#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "facesearch/common.hpp"
#include "facesearch/synthdata.hpp"

namespace facesearch {

struct CentroidTable {
  Matrix centroids;  // K x embed_dim, unit rows
  std::vector<std::size_t> class_sizes;

  std::size_t n_classes() const noexcept { return class_sizes.size(); }
};

struct CleanParams {
  double tau_intra = 0.0;  // drop samples whose discriminability is below this
  double tau_inter = 1.0;  // merge class pairs whose centroid cosine exceeds this
  // Exclude the sample itself from its own class centroid when scoring it.
  bool leave_one_out = false;

  void validate() const;
};

struct CleanReport {
  std::vector<std::size_t> kept_indices;
  std::vector<std::size_t> removed_indices;
  // Input class id -> merged class id (smallest id of its group).
  std::vector<std::uint32_t> merge_map;
  // Merged class id -> output (compacted) label, or -1 if the class was emptied.
  std::vector<std::int64_t> compact_map;
  std::vector<std::uint32_t> dropped_classes;
  // Samples whose hardest-negative similarity was <= 0 (ratio undefined, kept).
  std::vector<std::size_t> undefined_ratio_indices;

  // Noise-detection quality against ground truth. Removing a flipped sample
  // counts as a correct detection, same as an outlier.
  std::size_t true_outliers = 0;
  std::size_t true_flips = 0;
  std::size_t removed_outliers = 0;
  std::size_t removed_flips = 0;
  double noise_precision = 0.0;  // removed ∩ (outlier ∪ flip) / removed
  double noise_recall = 0.0;     // removed ∩ (outlier ∪ flip) / (outlier ∪ flip)
  double outlier_recall = 0.0;   // removed ∩ outlier / outlier
  double flip_recall = 0.0;

  std::size_t classes_before = 0;
  std::size_t classes_after = 0;
};

void to_json(nlohmann::json& j, const CleanReport& r);

// Unit-normalised per-class mean of `embeddings` rows (the sample itself
// included). Throws DegenerateDataset for an empty class and
// DegenerateEmbedding when a class mean is the zero vector.
CentroidTable class_centroids(const Matrix& embeddings, const std::vector<std::uint32_t>& labels,
                              std::size_t n_classes);

// Ratio of the cosine to the own-class centroid over the largest cosine to
// any other centroid. std::nullopt when that largest negative cosine is
// not positive (ratio undefined).
std::optional<double> discriminability(std::size_t i, const Matrix& embeddings,
                                       const std::vector<std::uint32_t>& labels,
                                       const CentroidTable& table);

// Union of every class pair with centroid cosine strictly above tau_inter,
// closed transitively. Each group maps to its smallest member id.
std::vector<std::uint32_t> merge_classes(const CentroidTable& table, double tau_inter);

// Merge, recompute centroids on merged labels, then drop samples with
// discriminability strictly below tau_intra (filtering is disabled when
// tau_intra <= 0). Output labels are compacted to [0, K').
std::pair<LabeledDataset, CleanReport> clean(const LabeledDataset& ds, const CleanParams& params);

}  // namespace facesearch
