#include "attnx/explain.hpp"

#include <cmath>
#include <string>

namespace attnx {

std::vector<ConditionRecord> harvest_conditions(const Forest& forest,
                                                const FeatureLayout& layout) {
  if (layout.p < 1 || layout.grid_cols < 1) throw DataError("invalid feature layout");
  if (forest.feature_dim() != layout.feature_dim())
    throw DataError("forest has feature_dim " + std::to_string(forest.feature_dim()) +
                    " but p=" + std::to_string(layout.p) + ", grid_cols=" +
                    std::to_string(layout.grid_cols) + " in " +
                    std::string(to_string(layout.mode)) + " mode implies " +
                    std::to_string(layout.feature_dim()));
  std::vector<ConditionRecord> records;
  double total = 0.0;
  const auto trees = forest.trees();
  for (std::size_t t = 0; t < trees.size(); ++t) {
    for (const auto& node : trees[t].nodes()) {
      if (node.is_leaf()) continue;
      ConditionRecord r;
      r.tree = t;
      r.feature_index = static_cast<std::size_t>(node.feature);
      r.threshold = node.threshold;
      r.attributed_level = static_cast<int>(std::ceil(node.threshold));
      r.time_interval = layout.interval_of(r.feature_index);
      r.gain_share = node.gain;
      total += node.gain;
      records.push_back(r);
    }
  }
  if (total > 0.0)
    for (auto& r : records) r.gain_share /= total;
  return records;
}

std::vector<std::uint64_t> condition_level_frequencies(std::span<const ConditionRecord> records,
                                                       int num_levels) {
  std::vector<std::uint64_t> hist(static_cast<std::size_t>(num_levels), 0);
  for (const auto& r : records) {
    if (r.attributed_level < 1 || r.attributed_level > num_levels)
      throw DataError("condition level " + std::to_string(r.attributed_level) +
                      " outside 1.." + std::to_string(num_levels));
    ++hist[static_cast<std::size_t>(r.attributed_level - 1)];
  }
  return hist;
}

std::vector<double> influence_by_interval(std::span<const ConditionRecord> records,
                                          const FeatureLayout& layout) {
  if (layout.p < 1) throw DataError("p must be >= 1");
  std::vector<double> sums(layout.p, 0.0);
  for (const auto& r : records) {
    if (r.time_interval < 1 || r.time_interval > layout.p)
      throw DataError("condition interval outside 1..p");
    sums[r.time_interval - 1] += r.gain_share;
  }
  const double per = static_cast<double>(layout.features_per_interval());
  for (auto& s : sums) s /= per;
  return sums;
}

std::map<std::size_t, double> influence_by_feature(std::span<const ConditionRecord> records) {
  std::map<std::size_t, double> out;
  for (const auto& r : records) out[r.feature_index] += r.gain_share;
  return out;
}

InfluenceTable explain_forest(const Forest& forest, const FeatureLayout& layout, int num_levels) {
  const auto records = harvest_conditions(forest, layout);
  InfluenceTable t;
  t.per_feature = influence_by_feature(records);
  t.per_interval = influence_by_interval(records, layout);
  t.level_frequencies = condition_level_frequencies(records, num_levels);
  t.condition_count = records.size();
  return t;
}

nlohmann::json to_json(const InfluenceTable& table) {
  nlohmann::json per_feature = nlohmann::json::object();
  for (const auto& [f, s] : table.per_feature) per_feature[std::to_string(f)] = s;
  return {{"level_frequencies", table.level_frequencies},
          {"per_interval", table.per_interval},
          {"per_feature", per_feature},
          {"condition_count", table.condition_count}};
}

nlohmann::json to_json(const FeatureLayout& layout) {
  return {{"p", layout.p},
          {"grid_cols", layout.grid_cols},
          {"feature_mode", std::string(to_string(layout.mode))}};
}

FeatureLayout feature_layout_from_json(const nlohmann::json& j) {
  FeatureLayout l;
  l.p = j.at("p").get<std::size_t>();
  l.grid_cols = j.at("grid_cols").get<std::size_t>();
  l.mode = parse_feature_mode(j.at("feature_mode").get<std::string>());
  return l;
}

}  // namespace attnx
