#include "facesearch/searchspace.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace facesearch {
namespace {

constexpr double kOnGridTolerance = 1e-9;

// Values lo, lo+step, ... up to hi, rounded to kill accumulated drift.
std::vector<double> arithmetic(double lo, double hi, double step) {
  std::vector<double> v;
  const auto n = static_cast<long>(std::llround((hi - lo) / step));
  for (long k = 0; k <= n; ++k) {
    v.push_back(std::round((lo + static_cast<double>(k) * step) * 1e9) / 1e9);
  }
  return v;
}

std::vector<double> with_extras(std::vector<double> v, std::initializer_list<double> extras) {
  v.insert(v.end(), extras);
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end(), [](double a, double b) { return std::abs(a - b) < kOnGridTolerance; }),
          v.end());
  return v;
}

}  // namespace

std::array<double, kNumTokens> Combination::values() const {
  return {tau_intra, tau_inter, m1, m2, m3, s_p, s_n, depth_ratio, width_ratio};
}

Combination Combination::from_values(const std::array<double, kNumTokens>& v) {
  return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
}

void to_json(nlohmann::json& j, const Combination& c) {
  j = nlohmann::json::object();
  const auto v = c.values();
  for (std::size_t i = 0; i < kNumTokens; ++i) j[std::string(kParameterNames[i])] = v[i];
}

void from_json(const nlohmann::json& j, Combination& c) {
  std::array<double, kNumTokens> v{};
  for (std::size_t i = 0; i < kNumTokens; ++i) v[i] = j.at(std::string(kParameterNames[i])).get<double>();
  c = Combination::from_values(v);
}

SearchSpace::SearchSpace(std::vector<ParameterGrid> grids) : grids_(std::move(grids)) {
  if (grids_.size() != kNumTokens) throw InvalidArgument("SearchSpace: expected 9 grids");
  for (std::size_t i = 0; i < kNumTokens; ++i) {
    const auto& g = grids_[i];
    if (g.name != kParameterNames[i]) {
      throw InvalidArgument("SearchSpace: grid " + std::to_string(i) + " must be named " +
                            std::string(kParameterNames[i]) + ", got " + g.name);
    }
    if (g.values.empty()) throw InvalidArgument("SearchSpace: grid " + g.name + " is empty");
    for (std::size_t k = 0; k < g.values.size(); ++k) {
      if (!std::isfinite(g.values[k])) throw InvalidArgument("SearchSpace: non-finite value in " + g.name);
      if (k > 0 && !(g.values[k] > g.values[k - 1])) {
        throw InvalidArgument("SearchSpace: grid " + g.name + " is not strictly increasing");
      }
    }
  }
}

std::vector<std::size_t> SearchSpace::cardinalities() const {
  std::vector<std::size_t> out;
  for (const auto& g : grids_) out.push_back(g.values.size());
  return out;
}

double SearchSpace::size() const {
  double n = 1.0;
  for (const auto& g : grids_) n *= static_cast<double>(g.values.size());
  return n;
}

Combination SearchSpace::decode(const Tokens& tokens) const {
  std::array<double, kNumTokens> v{};
  for (std::size_t i = 0; i < kNumTokens; ++i) {
    if (tokens[i] >= grids_[i].values.size()) {
      throw InvalidArgument("decode: token " + std::to_string(tokens[i]) + " out of range for " +
                            grids_[i].name);
    }
    v[i] = grids_[i].values[tokens[i]];
  }
  return Combination::from_values(v);
}

Tokens SearchSpace::encode(const Combination& c) const {
  const auto v = c.values();
  Tokens t{};
  for (std::size_t i = 0; i < kNumTokens; ++i) {
    const auto& grid = grids_[i].values;
    const auto it = std::find_if(grid.begin(), grid.end(),
                                 [&](double g) { return std::abs(g - v[i]) <= kOnGridTolerance; });
    if (it == grid.end()) {
      std::ostringstream msg;
      msg << "encode: " << grids_[i].name << " = " << v[i] << " is not on the grid";
      throw InvalidArgument(msg.str());
    }
    t[i] = static_cast<std::size_t>(it - grid.begin());
  }
  return t;
}

SearchSpace default_space() {
  const std::vector<double> scales = {16, 24, 32, 40, 48, 64};
  return SearchSpace({
      {"tau_intra", arithmetic(0.10, 0.50, 0.02)},
      {"tau_inter", arithmetic(0.50, 0.90, 0.02)},
      {"m1", arithmetic(0.90, 1.30, 0.05)},
      {"m2", arithmetic(0.00, 0.50, 0.02)},
      {"m3", arithmetic(0.00, 0.40, 0.05)},
      {"s_p", scales},
      {"s_n", scales},
      {"D", with_extras(arithmetic(0.50, 2.00, 0.125), {1.22, 1.47})},
      {"W", with_extras(arithmetic(0.50, 2.00, 0.125), {0.84, 0.91})},
  });
}

void to_json(nlohmann::json& j, const SearchSpace& s) {
  j = nlohmann::json::object();
  j["schema_version"] = 1;
  auto grids = nlohmann::json::array();
  for (const auto& g : s.grids()) grids.push_back({{"name", g.name}, {"values", g.values}});
  j["grids"] = std::move(grids);
}

SearchSpace space_from_json(const nlohmann::json& j) {
  if (j.value("schema_version", 0) != 1) throw FormatError("search space: unsupported schema_version");
  std::vector<ParameterGrid> grids;
  for (const auto& g : j.at("grids")) {
    grids.push_back({g.at("name").get<std::string>(), g.at("values").get<std::vector<double>>()});
  }
  return SearchSpace(std::move(grids));
}

std::string format_tokens(const Tokens& t) {
  std::string s;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(t[i]);
  }
  return s;
}

}  // namespace facesearch
