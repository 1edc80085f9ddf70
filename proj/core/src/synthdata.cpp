#include "facesearch/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <unordered_set>

#include "binary_io.hpp"

namespace facesearch {
namespace {

constexpr std::uint32_t kDatasetVersion = 1;

RowVector random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  RowVector v(static_cast<Eigen::Index>(dim));
  for (;;) {
    for (Eigen::Index k = 0; k < v.size(); ++k) v[k] = normal(rng);
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

std::size_t rounded_count(double rate, std::size_t n) {
  return static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
}

std::vector<std::vector<std::size_t>> members_by_label(const LabeledDataset& ds) {
  std::vector<std::vector<std::size_t>> groups(ds.n_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) groups[ds.labels[i]].push_back(i);
  return groups;
}

// Keeps the classes in `keep` (ascending) and renumbers them 0..K'-1.
LabeledDataset take_classes(const LabeledDataset& ds, const std::vector<std::uint32_t>& keep) {
  std::vector<std::int64_t> remap(ds.n_classes, -1);
  for (std::size_t k = 0; k < keep.size(); ++k) remap[keep[k]] = static_cast<std::int64_t>(k);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (remap[ds.labels[i]] >= 0) rows.push_back(i);
  }
  LabeledDataset out = ds.subset(rows);
  for (auto& y : out.labels) y = static_cast<std::uint32_t>(remap[y]);
  out.n_classes = keep.size();
  return out;
}

}  // namespace

void DatasetSpec::validate() const {
  if (n_classes < 1 || samples_per_class < 1) {
    throw InvalidArgument("DatasetSpec: n_classes and samples_per_class must be positive");
  }
  if (feature_dim < 2 || embed_dim < 2) {
    throw InvalidArgument("DatasetSpec: feature_dim and embed_dim must be >= 2");
  }
  if (!(intra_spread >= 0.0) || !(embedding_corruption >= 0.0) || !(feature_noise >= 0.0)) {
    throw InvalidArgument("DatasetSpec: noise scales must be nonnegative");
  }
  if (!(outlier_rate >= 0.0 && outlier_rate <= 1.0) || !(flip_rate >= 0.0 && flip_rate <= 1.0)) {
    throw InvalidArgument("DatasetSpec: rates must lie in [0,1]");
  }
  if (outlier_rate + flip_rate > 0.5) {
    throw InvalidArgument("DatasetSpec: outlier_rate + flip_rate must not exceed 0.5");
  }
  if (flip_rate > 0.0 && n_classes < 2) {
    throw InvalidArgument("DatasetSpec: label flips need at least two classes");
  }
}

LabeledDataset LabeledDataset::subset(const std::vector<std::size_t>& indices) const {
  LabeledDataset out;
  out.n_classes = n_classes;
  out.max_direction_cosine = max_direction_cosine;
  out.features.resize(static_cast<Eigen::Index>(indices.size()), features.cols());
  out.clean_embeddings.resize(static_cast<Eigen::Index>(indices.size()), clean_embeddings.cols());
  out.labels.reserve(indices.size());
  out.truth.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto i = indices[r];
    if (i >= size()) throw InvalidArgument("subset: index out of range");
    out.features.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(i));
    out.clean_embeddings.row(static_cast<Eigen::Index>(r)) =
        clean_embeddings.row(static_cast<Eigen::Index>(i));
    out.labels.push_back(labels[i]);
    out.truth.push_back(truth[i]);
  }
  return out;
}

void LabeledDataset::validate() const {
  const auto n = static_cast<Eigen::Index>(labels.size());
  if (features.rows() != n || clean_embeddings.rows() != n || truth.size() != labels.size()) {
    throw InvalidArgument("LabeledDataset: inconsistent row counts");
  }
  for (auto y : labels) {
    if (y >= n_classes) throw InvalidArgument("LabeledDataset: label out of range");
  }
}

bool operator==(const LabeledDataset& a, const LabeledDataset& b) {
  return a.n_classes == b.n_classes && a.labels == b.labels && a.truth == b.truth &&
         a.features.rows() == b.features.rows() && a.features.cols() == b.features.cols() &&
         a.clean_embeddings.rows() == b.clean_embeddings.rows() &&
         a.clean_embeddings.cols() == b.clean_embeddings.cols() && a.features == b.features &&
         a.clean_embeddings == b.clean_embeddings;
}

std::size_t PairSet::genuine_count() const {
  return static_cast<std::size_t>(
      std::count_if(pairs.begin(), pairs.end(), [](const auto& p) { return p.genuine; }));
}

std::size_t PairSet::impostor_count() const { return pairs.size() - genuine_count(); }

LabeledDataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  const std::size_t k_classes = spec.n_classes;
  const std::size_t n = k_classes * spec.samples_per_class;
  const auto e_dim = static_cast<Eigen::Index>(spec.embed_dim);
  const auto f_dim = static_cast<Eigen::Index>(spec.feature_dim);

  Matrix directions(static_cast<Eigen::Index>(k_classes), e_dim);
  for (std::size_t c = 0; c < k_classes; ++c) {
    directions.row(static_cast<Eigen::Index>(c)) = random_unit(rng, spec.embed_dim);
  }

  Matrix lift(e_dim, f_dim);
  const double lift_scale = 1.0 / std::sqrt(static_cast<double>(spec.embed_dim));
  for (Eigen::Index r = 0; r < e_dim; ++r) {
    for (Eigen::Index c = 0; c < f_dim; ++c) lift(r, c) = normal(rng) * lift_scale;
  }

  LabeledDataset ds;
  ds.n_classes = k_classes;
  ds.labels.resize(n);
  ds.truth.resize(n);
  Matrix geometry(static_cast<Eigen::Index>(n), e_dim);
  for (std::size_t c = 0; c < k_classes; ++c) {
    for (std::size_t j = 0; j < spec.samples_per_class; ++j) {
      const std::size_t i = c * spec.samples_per_class + j;
      RowVector v = directions.row(static_cast<Eigen::Index>(c));
      for (;;) {
        RowVector w = v;
        for (Eigen::Index k = 0; k < e_dim; ++k) w[k] += spec.intra_spread * normal(rng);
        const double norm = w.norm();
        if (norm > 1e-12) {
          geometry.row(static_cast<Eigen::Index>(i)) = w / norm;
          break;
        }
      }
      ds.labels[i] = static_cast<std::uint32_t>(c);
      ds.truth[i] = {NoiseKind::Clean, static_cast<std::uint32_t>(c)};
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_outliers = rounded_count(spec.outlier_rate, n);
  const std::size_t n_flips = std::min(rounded_count(spec.flip_rate, n), n - n_outliers);

  for (std::size_t r = 0; r < n_outliers; ++r) {
    const auto i = order[r];
    geometry.row(static_cast<Eigen::Index>(i)) = random_unit(rng, spec.embed_dim);
    ds.truth[i].kind = NoiseKind::Outlier;
  }
  if (n_flips > 0) {
    std::uniform_int_distribution<std::uint32_t> other(0, static_cast<std::uint32_t>(k_classes - 2));
    for (std::size_t r = n_outliers; r < n_outliers + n_flips; ++r) {
      const auto i = order[r];
      const auto original = ds.labels[i];
      auto target = other(rng);
      if (target >= original) ++target;
      ds.labels[i] = target;
      ds.truth[i] = {NoiseKind::Flip, original};
    }
  }

  ds.clean_embeddings = geometry;
  if (spec.embedding_corruption > 0.0) {
    for (Eigen::Index i = 0; i < ds.clean_embeddings.rows(); ++i) {
      for (;;) {
        RowVector w = geometry.row(i);
        for (Eigen::Index k = 0; k < e_dim; ++k) w[k] += spec.embedding_corruption * normal(rng);
        const double norm = w.norm();
        if (norm > 1e-12) {
          ds.clean_embeddings.row(i) = w / norm;
          break;
        }
      }
    }
  }

  ds.features = geometry * lift;
  if (spec.feature_noise > 0.0) {
    for (Eigen::Index i = 0; i < ds.features.rows(); ++i) {
      for (Eigen::Index k = 0; k < f_dim; ++k) ds.features(i, k) += spec.feature_noise * normal(rng);
    }
  }

  double max_cos = -1.0;
  for (std::size_t a = 0; a < k_classes; ++a) {
    for (std::size_t b = a + 1; b < k_classes; ++b) {
      max_cos = std::max(max_cos, directions.row(static_cast<Eigen::Index>(a))
                                      .dot(directions.row(static_cast<Eigen::Index>(b))));
    }
  }
  ds.max_direction_cosine = k_classes > 1 ? max_cos : std::numeric_limits<double>::quiet_NaN();
  return ds;
}

std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& ds, double val_fraction,
                                                std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 0.5)) {
    throw InvalidArgument("split: val_fraction must lie in (0, 0.5)");
  }
  ds.validate();
  auto groups = members_by_label(ds);
  std::erase_if(groups, [](const auto& m) { return m.empty(); });
  for (const auto& members : groups) {
    if (members.size() < 2) throw InvalidArgument("split: a class has fewer than 2 samples");
  }

  // Largest-remainder allocation so the total is round(val_fraction * n)
  // even when class sizes differ; every class keeps >= 1 on each side.
  std::size_t total = 0;
  for (const auto& m : groups) total += m.size();
  const auto target = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(total)));
  std::vector<std::size_t> n_val(groups.size());
  std::vector<double> remainder(groups.size());
  std::size_t assigned = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double ideal = val_fraction * static_cast<double>(groups[g].size());
    n_val[g] = std::clamp<std::size_t>(static_cast<std::size_t>(ideal), 1, groups[g].size() - 1);
    remainder[g] = ideal - static_cast<double>(n_val[g]);
    assigned += n_val[g];
  }
  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < target && i < order.size(); ++i) {
    if (n_val[order[i]] + 1 < groups[order[i]].size()) {
      ++n_val[order[i]];
      ++assigned;
    }
  }
  for (std::size_t i = order.size(); assigned > target && i-- > 0;) {
    if (n_val[order[i]] > 1) {
      --n_val[order[i]];
      --assigned;
    }
  }

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> val_rows;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& members = groups[g];
    std::shuffle(members.begin(), members.end(), rng);
    const auto cut = static_cast<std::ptrdiff_t>(n_val[g]);
    val_rows.insert(val_rows.end(), members.begin(), members.begin() + cut);
    train_rows.insert(train_rows.end(), members.begin() + cut, members.end());
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(val_rows.begin(), val_rows.end());
  return {ds.subset(train_rows), ds.subset(val_rows)};
}

std::pair<LabeledDataset, LabeledDataset> split_identities(const LabeledDataset& ds,
                                                           std::size_t heldout_classes,
                                                           std::uint64_t seed) {
  ds.validate();
  if (heldout_classes < 2 || heldout_classes + 2 > ds.n_classes) {
    throw InvalidArgument("split_identities: need >= 2 held-out and >= 2 remaining classes");
  }
  std::vector<std::uint32_t> classes(ds.n_classes);
  std::iota(classes.begin(), classes.end(), 0U);
  std::mt19937_64 rng(seed);
  std::shuffle(classes.begin(), classes.end(), rng);
  std::vector<std::uint32_t> heldout(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(heldout_classes));
  std::vector<std::uint32_t> search(classes.begin() + static_cast<std::ptrdiff_t>(heldout_classes), classes.end());
  std::sort(heldout.begin(), heldout.end());
  std::sort(search.begin(), search.end());
  return {take_classes(ds, search), take_classes(ds, heldout)};
}

PairSet build_pairset(const LabeledDataset& ds, std::size_t n_genuine, std::size_t n_impostor,
                      std::uint64_t seed) {
  ds.validate();
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.truth[i].kind != NoiseKind::Outlier) eligible.push_back(i);
  }
  std::map<std::uint32_t, std::size_t> per_identity;
  for (auto i : eligible) ++per_identity[ds.truth[i].identity];
  std::size_t total_genuine = 0;
  for (const auto& [id, count] : per_identity) total_genuine += count * (count - 1) / 2;
  const std::size_t m = eligible.size();
  const std::size_t total_pairs = m < 2 ? 0 : m * (m - 1) / 2;
  const std::size_t total_impostor = total_pairs - total_genuine;
  if (n_genuine > total_genuine) {
    throw InvalidArgument("build_pairset: requested " + std::to_string(n_genuine) +
                          " genuine pairs but only " + std::to_string(total_genuine) + " exist");
  }
  if (n_impostor > total_impostor) {
    throw InvalidArgument("build_pairset: requested " + std::to_string(n_impostor) +
                          " impostor pairs but only " + std::to_string(total_impostor) + " exist");
  }

  std::mt19937_64 rng(seed);
  auto same = [&](std::size_t a, std::size_t b) {
    return ds.truth[a].identity == ds.truth[b].identity;
  };

  // Draws `want` distinct pairs of the requested kind out of `available`.
  auto draw = [&](bool genuine, std::size_t want, std::size_t available) {
    std::vector<VerificationPair> chosen;
    if (want == 0) return chosen;
    constexpr std::size_t kEnumerateLimit = 4'000'000;
    if (available <= kEnumerateLimit || 2 * want > available) {
      std::vector<VerificationPair> all;
      all.reserve(available);
      for (std::size_t x = 0; x < m; ++x) {
        for (std::size_t y = x + 1; y < m; ++y) {
          if (same(eligible[x], eligible[y]) == genuine) all.push_back({eligible[x], eligible[y], genuine});
        }
      }
      for (std::size_t r = 0; r < want; ++r) {
        std::uniform_int_distribution<std::size_t> pick(r, all.size() - 1);
        std::swap(all[r], all[pick(rng)]);
      }
      all.resize(want);
      return all;
    }
    std::unordered_set<std::uint64_t> seen;
    std::uniform_int_distribution<std::size_t> pick(0, m - 1);
    while (chosen.size() < want) {
      auto x = pick(rng);
      auto y = pick(rng);
      if (x == y) continue;
      if (x > y) std::swap(x, y);
      if (same(eligible[x], eligible[y]) != genuine) continue;
      if (!seen.insert(static_cast<std::uint64_t>(x) * m + y).second) continue;
      chosen.push_back({eligible[x], eligible[y], genuine});
    }
    return chosen;
  };

  PairSet out;
  out.pairs = draw(true, n_genuine, total_genuine);
  auto impostors = draw(false, n_impostor, total_impostor);
  out.pairs.insert(out.pairs.end(), impostors.begin(), impostors.end());
  return out;
}

std::string to_string(const NoiseTruth& t) {
  switch (t.kind) {
    case NoiseKind::Clean:
      return "clean";
    case NoiseKind::Outlier:
      return "outlier";
    case NoiseKind::Flip:
      return "flip:" + std::to_string(t.identity);
  }
  return "unknown";
}

void write_dataset(std::ostream& out, const LabeledDataset& ds) {
  ds.validate();
  io::write_magic(out, "FSDS");
  io::write_u32(out, kDatasetVersion);
  io::write_u64(out, ds.size());
  io::write_u64(out, ds.feature_dim());
  io::write_u64(out, ds.embed_dim());
  io::write_u64(out, ds.n_classes);
  io::write_matrix(out, ds.features);
  io::write_matrix(out, ds.clean_embeddings);
  for (auto y : ds.labels) io::write_u32(out, y);
  for (const auto& t : ds.truth) io::write_u8(out, static_cast<std::uint8_t>(t.kind));
  for (const auto& t : ds.truth) io::write_u32(out, t.identity);
}

LabeledDataset read_dataset(std::istream& in) {
  io::expect_magic(in, "FSDS");
  const auto version = io::read_u32(in);
  if (version != kDatasetVersion) {
    throw FormatError("FSDS: unsupported version " + std::to_string(version));
  }
  const auto n = io::read_u64(in);
  const auto f_dim = io::read_u64(in);
  const auto e_dim = io::read_u64(in);
  LabeledDataset ds;
  ds.n_classes = io::read_u64(in);
  ds.features = io::read_matrix(in, n, f_dim);
  ds.clean_embeddings = io::read_matrix(in, n, e_dim);
  ds.labels.resize(n);
  ds.truth.resize(n);
  for (auto& y : ds.labels) y = io::read_u32(in);
  for (auto& t : ds.truth) {
    const auto kind = io::read_u8(in);
    if (kind > 2) throw FormatError("FSDS: bad truth kind");
    t.kind = static_cast<NoiseKind>(kind);
  }
  for (auto& t : ds.truth) t.identity = io::read_u32(in);
  try {
    ds.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("FSDS: ") + e.what());
  }
  return ds;
}

void save_dataset(const std::string& path, const LabeledDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_dataset(out, ds);
}

LabeledDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return read_dataset(in);
}

void write_dataset_csv(std::ostream& out, const LabeledDataset& ds) {
  out << "id,label,truth";
  for (std::size_t k = 0; k < ds.feature_dim(); ++k) out << ",feat_" << k;
  out << '\n';
  out << std::setprecision(17);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << i << ',' << ds.labels[i] << ',' << to_string(ds.truth[i]);
    for (Eigen::Index k = 0; k < ds.features.cols(); ++k) {
      out << ',' << ds.features(static_cast<Eigen::Index>(i), k);
    }
    out << '\n';
  }
}

}  // namespace facesearch
