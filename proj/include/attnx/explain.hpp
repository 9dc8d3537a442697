// Decision conditions harvested from a trained forest, the level frequency
// histogram over those conditions, and influence scores per feature and per
// time interval.
//
// Influence is mean decrease in impurity: each internal node contributes its
// node gain, and all contributions are normalized to sum to 1 forest-wide.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "attnx/dataset.hpp"
#include "attnx/forest.hpp"

namespace attnx {

/// How a feature index maps back onto the window of previous rows.
struct FeatureLayout {
  std::size_t p = 1;
  std::size_t grid_cols = 1;
  FeatureMode mode = FeatureMode::RowConcat;

  std::size_t feature_dim() const { return mode == FeatureMode::RowConcat ? p * grid_cols : p; }
  std::size_t features_per_interval() const {
    return mode == FeatureMode::RowConcat ? grid_cols : 1;
  }
  /// 1 = the row immediately before the predicted row, p = the oldest.
  std::size_t interval_of(std::size_t feature) const {
    return p - feature / features_per_interval();
  }
};

struct ConditionRecord {
  std::size_t tree = 0;
  std::size_t feature_index = 0;
  double threshold = 0.0;
  int attributed_level = 0;  // ceil(threshold): smallest level routed right
  std::size_t time_interval = 0;
  double gain_share = 0.0;
};

/// One record per internal node of every tree, trees in order, nodes in
/// pre-order.
std::vector<ConditionRecord> harvest_conditions(const Forest& forest, const FeatureLayout& layout);

/// Index l-1 holds the count of records attributed to level l.
std::vector<std::uint64_t> condition_level_frequencies(std::span<const ConditionRecord> records,
                                                       int num_levels);

/// Index k-1 holds the summed gain share of interval k divided by the number
/// of features in that interval.
std::vector<double> influence_by_interval(std::span<const ConditionRecord> records,
                                          const FeatureLayout& layout);

std::map<std::size_t, double> influence_by_feature(std::span<const ConditionRecord> records);

struct InfluenceTable {
  std::map<std::size_t, double> per_feature;
  std::vector<double> per_interval;
  std::vector<std::uint64_t> level_frequencies;
  std::size_t condition_count = 0;
};

InfluenceTable explain_forest(const Forest& forest, const FeatureLayout& layout, int num_levels);

nlohmann::json to_json(const InfluenceTable& table);
nlohmann::json to_json(const FeatureLayout& layout);
FeatureLayout feature_layout_from_json(const nlohmann::json& j);

}  // namespace attnx
