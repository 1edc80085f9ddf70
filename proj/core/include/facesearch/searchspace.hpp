#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "facesearch/backbone.hpp"
#include "facesearch/cleaner.hpp"
#include "facesearch/marginloss.hpp"

namespace facesearch {

inline constexpr std::size_t kNumTokens = 9;

// Token order: data cleaning -> loss -> architecture.
inline constexpr std::array<std::string_view, kNumTokens> kParameterNames = {
    "tau_intra", "tau_inter", "m1", "m2", "m3", "s_p", "s_n", "D", "W"};

using Tokens = std::array<std::size_t, kNumTokens>;

struct Combination {
  double tau_intra = 0.0;
  double tau_inter = 1.0;
  double m1 = 1.0;
  double m2 = 0.0;
  double m3 = 0.0;
  double s_p = 64.0;
  double s_n = 64.0;
  double depth_ratio = 1.0;
  double width_ratio = 1.0;

  std::array<double, kNumTokens> values() const;
  static Combination from_values(const std::array<double, kNumTokens>& v);

  CleanParams clean_params() const { return {tau_intra, tau_inter, false}; }
  LossParams loss_params() const { return {m1, m2, m3, s_p, s_n}; }

  bool operator==(const Combination&) const = default;
};

void to_json(nlohmann::json& j, const Combination& c);
void from_json(const nlohmann::json& j, Combination& c);

struct ParameterGrid {
  std::string name;
  std::vector<double> values;  // strictly increasing
};

class SearchSpace {
 public:
  // Throws InvalidArgument unless there are exactly nine grids, named in
  // token order, each non-empty and strictly increasing.
  explicit SearchSpace(std::vector<ParameterGrid> grids);

  const std::vector<ParameterGrid>& grids() const noexcept { return grids_; }
  const ParameterGrid& grid(std::size_t i) const { return grids_.at(i); }
  std::vector<std::size_t> cardinalities() const;
  // Product of grid sizes, as a double (it overflows 32 bits quickly).
  double size() const;

  Combination decode(const Tokens& tokens) const;
  Tokens encode(const Combination& c) const;

 private:
  std::vector<ParameterGrid> grids_;
};

SearchSpace default_space();

void to_json(nlohmann::json& j, const SearchSpace& s);
SearchSpace space_from_json(const nlohmann::json& j);

std::string format_tokens(const Tokens& t);

}  // namespace facesearch
