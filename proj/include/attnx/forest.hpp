// Bagged ensemble of binary CART trees over ordinal level features.
//
// Splits are "feature <= threshold" with thresholds at midpoints between
// consecutive distinct observed values, chosen by Gini impurity decrease.
// Trees grow until purity, max_depth, min_leaf or no positive-gain split.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "attnx/dataset.hpp"

namespace attnx {

struct TrainConfig {
  std::size_t num_trees = 100;
  std::size_t max_depth = 64;
  std::size_t min_leaf = 64;
  /// Candidate features per split. nullopt: ceil(sqrt(feature_dim)); 0: all.
  std::optional<std::size_t> feature_subsample;
  std::uint64_t seed = 0;
  /// Worker threads for tree training; 0 uses the hardware concurrency.
  unsigned threads = 0;

  void validate() const;
  std::size_t candidates_per_split(std::size_t feature_dim) const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct Split {
  std::size_t feature = 0;
  double threshold = 0.0;
  double gain = 0.0;  // Gini(parent) - weighted Gini(children)
  std::size_t left_count = 0;
  std::size_t right_count = 0;
};

/// Best Gini split of the examples at `indices` (duplicates allowed, as in a
/// bootstrap sample) over `candidate_features`. Only splits leaving at least
/// min_leaf examples on both sides are considered. Ties go to the lower
/// feature index, then the lower threshold. nullopt when nothing has gain > 0.
std::optional<Split> best_split(const Dataset& data, std::span<const std::uint32_t> indices,
                                std::span<const std::size_t> candidate_features,
                                std::size_t min_leaf = 1);

/// Gini impurity 1 - (a^2 + b^2) / (a + b)^2 for class counts (a, b).
double gini(std::uint64_t a, std::uint64_t b);

struct TreeNode {
  std::int32_t feature = -1;  // -1 for leaves
  double threshold = 0.0;
  double gain = 0.0;  // impurity decrease * fraction of bootstrap examples here
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  std::uint32_t depth = 0;
  std::uint64_t count_low = 0;
  std::uint64_t count_high = 0;

  bool is_leaf() const { return feature < 0; }
  std::uint64_t total() const { return count_low + count_high; }
  Label prediction() const { return count_high > count_low ? Label::High : Label::Low; }
};

class Tree {
 public:
  Tree() = default;
  /// Nodes in pre-order, root first.
  explicit Tree(std::vector<TreeNode> nodes);

  std::span<const TreeNode> nodes() const { return nodes_; }
  const TreeNode& root() const { return nodes_.front(); }
  const TreeNode& leaf_for(std::span<const Level> features) const;
  Label predict(std::span<const Level> features) const { return leaf_for(features).prediction(); }

  std::size_t max_depth() const;
  std::size_t internal_count() const;

  bool operator==(const Tree&) const;

 private:
  std::vector<TreeNode> nodes_;
};

class Forest {
 public:
  Forest() = default;
  Forest(std::vector<Tree> trees, TrainConfig config, std::size_t feature_dim);

  std::span<const Tree> trees() const { return trees_; }
  const TrainConfig& config() const { return config_; }
  std::size_t feature_dim() const { return feature_dim_; }

  /// Majority vote; an even split goes to Low.
  Label predict(std::span<const Level> features) const;

  nlohmann::json to_json() const;
  static Forest from_json(const nlohmann::json& j);

  bool operator==(const Forest& other) const { return trees_ == other.trees_; }

 private:
  std::vector<Tree> trees_;
  TrainConfig config_;
  std::size_t feature_dim_ = 0;
};

/// Seed for tree t, a pure function of the master seed and the tree index.
std::uint64_t tree_seed(std::uint64_t master, std::size_t tree_index);

/// n draws with replacement from 0..n-1, returned sorted.
std::vector<std::uint32_t> bootstrap_sample(std::size_t n, std::uint64_t seed);

Tree train_tree(const Dataset& train, std::uint64_t bootstrap_seed, const TrainConfig& cfg);
Forest train_forest(const Dataset& train, const TrainConfig& cfg);

struct RowAccuracy {
  std::uint32_t row_id = 0;
  std::uint64_t correct = 0;
  std::uint64_t total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
};

struct Evaluation {
  std::vector<RowAccuracy> rows;  // populated rows only, ascending row_id
  std::uint64_t correct = 0;
  std::uint64_t total = 0;

  double overall() const { return total ? static_cast<double>(correct) / total : 0.0; }
  /// nullopt when the row had no evaluation examples.
  std::optional<double> accuracy_for(std::uint32_t row_id) const;
};

Evaluation evaluate_by_row(const Forest& forest, const Dataset& eval);

}  // namespace attnx
