#include "facesearch/cleaner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace facesearch {
namespace {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0U); }

  std::uint32_t find(std::uint32_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  // The smaller id becomes the root, so every root is its group's minimum.
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
  }

 private:
  std::vector<std::uint32_t> parent_;
};

double ratio_or_nan(double own, double hardest_negative) {
  if (!(hardest_negative > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return own / hardest_negative;
}

double safe_div(std::size_t num, std::size_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

void CleanParams::validate() const {
  if (!(tau_intra >= 0.0 && tau_intra <= 1.0) || !(tau_inter >= 0.0 && tau_inter <= 1.0)) {
    throw InvalidArgument("CleanParams: thresholds must lie in [0,1]");
  }
}

void to_json(nlohmann::json& j, const CleanReport& r) {
  j = nlohmann::json{
      {"kept", r.kept_indices.size()},
      {"removed", r.removed_indices.size()},
      {"removed_indices", r.removed_indices},
      {"merge_map", r.merge_map},
      {"compact_map", r.compact_map},
      {"dropped_classes", r.dropped_classes},
      {"undefined_ratio_indices", r.undefined_ratio_indices},
      {"classes_before", r.classes_before},
      {"classes_after", r.classes_after},
      {"true_outliers", r.true_outliers},
      {"true_flips", r.true_flips},
      {"removed_outliers", r.removed_outliers},
      {"removed_flips", r.removed_flips},
      {"noise_precision", r.noise_precision},
      {"noise_recall", r.noise_recall},
      {"outlier_recall", r.outlier_recall},
      {"flip_recall", r.flip_recall},
  };
}

CentroidTable class_centroids(const Matrix& embeddings, const std::vector<std::uint32_t>& labels,
                              std::size_t n_classes) {
  if (static_cast<std::size_t>(embeddings.rows()) != labels.size()) {
    throw InvalidArgument("class_centroids: embeddings/labels size mismatch");
  }
  CentroidTable table;
  table.centroids = Matrix::Zero(static_cast<Eigen::Index>(n_classes), embeddings.cols());
  table.class_sizes.assign(n_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_classes) throw InvalidArgument("class_centroids: label out of range");
    table.centroids.row(labels[i]) += embeddings.row(static_cast<Eigen::Index>(i));
    ++table.class_sizes[labels[i]];
  }
  for (std::size_t k = 0; k < n_classes; ++k) {
    if (table.class_sizes[k] == 0) {
      throw DegenerateDataset("class_centroids: class " + std::to_string(k) + " is empty");
    }
    const double norm = table.centroids.row(static_cast<Eigen::Index>(k)).norm();
    if (!(norm > 1e-12)) {
      throw DegenerateEmbedding("class_centroids: class " + std::to_string(k) +
                                " has a zero mean embedding");
    }
    table.centroids.row(static_cast<Eigen::Index>(k)) /= norm;
  }
  return table;
}

std::optional<double> discriminability(std::size_t i, const Matrix& embeddings,
                                       const std::vector<std::uint32_t>& labels,
                                       const CentroidTable& table) {
  if (table.n_classes() < 2) throw InvalidArgument("discriminability: need K >= 2");
  if (i >= labels.size()) throw InvalidArgument("discriminability: index out of range");
  const RowVector x = embeddings.row(static_cast<Eigen::Index>(i)).normalized();
  const Vector sims = table.centroids * x.transpose();
  const auto p = static_cast<Eigen::Index>(labels[i]);
  double hardest = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < sims.size(); ++k) {
    if (k != p) hardest = std::max(hardest, sims[k]);
  }
  const double d = ratio_or_nan(sims[p], hardest);
  if (std::isnan(d)) return std::nullopt;
  return d;
}

std::vector<std::uint32_t> merge_classes(const CentroidTable& table, double tau_inter) {
  const auto k = table.n_classes();
  DisjointSets sets(k);
  const Matrix sims = table.centroids * table.centroids.transpose();
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a + 1; b < k; ++b) {
      if (sims(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) > tau_inter) {
        sets.unite(static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b));
      }
    }
  }
  std::vector<std::uint32_t> map(k);
  for (std::size_t c = 0; c < k; ++c) map[c] = sets.find(static_cast<std::uint32_t>(c));
  return map;
}

std::pair<LabeledDataset, CleanReport> clean(const LabeledDataset& ds, const CleanParams& params) {
  params.validate();
  ds.validate();
  CleanReport report;
  report.classes_before = ds.n_classes;

  const auto initial = class_centroids(ds.clean_embeddings, ds.labels, ds.n_classes);
  report.merge_map = merge_classes(initial, params.tau_inter);

  std::vector<std::uint32_t> merged_labels(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) merged_labels[i] = report.merge_map[ds.labels[i]];
  std::size_t merged_groups = 0;
  for (std::size_t c = 0; c < ds.n_classes; ++c) merged_groups += (report.merge_map[c] == c);
  if (merged_groups < 2) {
    throw DegenerateDataset("clean: fewer than 2 classes remain after merging");
  }

  // Merged ids are sparse (the group minima); centroids are indexed by the
  // original id space and only roots are ever populated or compared.
  std::vector<bool> is_root(ds.n_classes);
  for (std::size_t c = 0; c < ds.n_classes; ++c) is_root[c] = report.merge_map[c] == c;
  Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(ds.n_classes), ds.clean_embeddings.cols());
  std::vector<std::size_t> sizes(ds.n_classes, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    sums.row(merged_labels[i]) += ds.clean_embeddings.row(static_cast<Eigen::Index>(i));
    ++sizes[merged_labels[i]];
  }
  Matrix centroids = Matrix::Zero(sums.rows(), sums.cols());
  for (std::size_t c = 0; c < ds.n_classes; ++c) {
    if (!is_root[c]) continue;
    const double norm = sums.row(static_cast<Eigen::Index>(c)).norm();
    if (!(norm > 1e-12)) {
      throw DegenerateEmbedding("clean: merged class " + std::to_string(c) + " has a zero mean");
    }
    centroids.row(static_cast<Eigen::Index>(c)) = sums.row(static_cast<Eigen::Index>(c)) / norm;
  }

  const bool filtering = params.tau_intra > 0.0;
  std::vector<bool> keep(ds.size(), true);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const RowVector x = ds.clean_embeddings.row(static_cast<Eigen::Index>(i)).normalized();
    const auto p = merged_labels[i];
    double own;
    if (params.leave_one_out && sizes[p] > 1) {
      const RowVector rest = sums.row(p) - ds.clean_embeddings.row(static_cast<Eigen::Index>(i));
      const double norm = rest.norm();
      own = norm > 1e-12 ? x.dot(rest) / norm : 0.0;
    } else {
      own = x.dot(centroids.row(p));
    }
    double hardest = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < ds.n_classes; ++c) {
      if (is_root[c] && c != p) hardest = std::max(hardest, x.dot(centroids.row(static_cast<Eigen::Index>(c))));
    }
    const double d = ratio_or_nan(own, hardest);
    if (std::isnan(d)) {
      report.undefined_ratio_indices.push_back(i);
      continue;
    }
    if (filtering && d < params.tau_intra) keep[i] = false;
  }

  std::vector<std::size_t> survivors(ds.n_classes, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (keep[i]) {
      report.kept_indices.push_back(i);
      ++survivors[merged_labels[i]];
    } else {
      report.removed_indices.push_back(i);
    }
  }
  report.compact_map.assign(ds.n_classes, -1);
  std::int64_t next = 0;
  for (std::size_t c = 0; c < ds.n_classes; ++c) {
    if (!is_root[c]) continue;
    if (survivors[c] == 0) {
      report.dropped_classes.push_back(static_cast<std::uint32_t>(c));
    } else {
      report.compact_map[c] = next++;
    }
  }
  report.classes_after = static_cast<std::size_t>(next);
  if (report.classes_after < 2) {
    throw DegenerateDataset("clean: fewer than 2 classes survive filtering");
  }

  LabeledDataset out = ds.subset(report.kept_indices);
  for (std::size_t r = 0; r < out.size(); ++r) {
    out.labels[r] = static_cast<std::uint32_t>(report.compact_map[merged_labels[report.kept_indices[r]]]);
  }
  out.n_classes = report.classes_after;

  std::size_t removed_noise = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto kind = ds.truth[i].kind;
    report.true_outliers += kind == NoiseKind::Outlier;
    report.true_flips += kind == NoiseKind::Flip;
    if (!keep[i]) {
      report.removed_outliers += kind == NoiseKind::Outlier;
      report.removed_flips += kind == NoiseKind::Flip;
      removed_noise += kind != NoiseKind::Clean;
    }
  }
  report.noise_precision = safe_div(removed_noise, report.removed_indices.size());
  report.noise_recall = safe_div(removed_noise, report.true_outliers + report.true_flips);
  report.outlier_recall = safe_div(report.removed_outliers, report.true_outliers);
  report.flip_recall = safe_div(report.removed_flips, report.true_flips);
  return {std::move(out), std::move(report)};
}

}  // namespace facesearch
