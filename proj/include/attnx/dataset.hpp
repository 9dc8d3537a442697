// Windowed binary classification datasets built from level grids.
//
// One example per grid cell (i, j). The label is whether the cell's level
// exceeds the high threshold; the features are the p rows before i, either
// whole rows concatenated (row-concat) or the same column only
// (column-window). Rows before the first grid row read as zeros.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "attnx/attention_data.hpp"

namespace attnx {

enum class FeatureMode { RowConcat, ColumnWindow };

std::string_view to_string(FeatureMode mode);
FeatureMode parse_feature_mode(std::string_view s);

enum class Label : std::uint8_t { Low = 0, High = 1 };

struct BuildConfig {
  std::size_t p = 1;
  int high_threshold = 5;
  FeatureMode mode = FeatureMode::RowConcat;
  double split_fraction = 0.8;
  std::uint64_t seed = 0;

  void validate(const GridSpec& grid) const;
};

nlohmann::json to_json(const BuildConfig& cfg);
BuildConfig build_config_from_json(const nlohmann::json& j);

/// Feature vectors live in a shared table; row-concat examples from the same
/// (utterance, row) point at one table row.
struct Example {
  std::uint32_t feature_row = 0;
  Label label = Label::Low;
  std::uint32_t row_id = 0;     // 1-based
  std::uint32_t col_id = 0;     // 1-based
  std::uint32_t utterance = 0;  // index into Dataset::utterances()
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(std::size_t feature_dim, std::vector<Level> feature_table,
          std::vector<Example> examples, std::vector<std::string> utterances,
          BuildConfig config, GridSpec grid);

  std::size_t size() const { return examples_.size(); }
  bool empty() const { return examples_.empty(); }
  std::size_t feature_dim() const { return feature_dim_; }

  const Example& example(std::size_t i) const { return examples_[i]; }
  std::span<const Example> examples() const { return examples_; }
  Label label(std::size_t i) const { return examples_[i].label; }

  std::span<const Level> features(std::size_t i) const {
    return {table_->data() + std::size_t{examples_[i].feature_row} * feature_dim_, feature_dim_};
  }
  Level feature(std::size_t i, std::size_t f) const {
    return (*table_)[std::size_t{examples_[i].feature_row} * feature_dim_ + f];
  }

  const std::vector<std::string>& utterances() const { return *utterances_; }
  const std::string& utterance_id(std::size_t i) const {
    return (*utterances_)[examples_[i].utterance];
  }
  const BuildConfig& config() const { return config_; }
  const GridSpec& grid() const { return grid_; }

  /// Examples picked by index, in the given order. Shares the feature table.
  Dataset select(std::span<const std::size_t> order) const;

 private:
  std::size_t feature_dim_ = 0;
  std::shared_ptr<const std::vector<Level>> table_ = std::make_shared<std::vector<Level>>();
  std::vector<Example> examples_;
  std::shared_ptr<const std::vector<std::string>> utterances_ =
      std::make_shared<std::vector<std::string>>();
  BuildConfig config_;
  GridSpec grid_;
};

/// Small in-memory dataset, one table row per example. Row ids default to 1.
Dataset make_dataset(std::span<const std::vector<Level>> features, std::span<const Label> labels,
                     std::span<const std::uint32_t> row_ids = {});

/// Examples in canonical order: input order of matrices, then row-major cells.
Dataset build_examples(std::span<const LevelMatrix> levels, const GridSpec& grid,
                       const BuildConfig& cfg);

/// Seeded permutation, first floor(split_fraction * n) examples to train.
std::pair<Dataset, Dataset> shuffle_split(const Dataset& d, const BuildConfig& cfg);

// Dump format: utterance_id,row_id,col_id,label,f_1,...,f_d per line.
void write_dataset_csv(const std::filesystem::path& path, const Dataset& d);
Dataset read_dataset_csv(const std::filesystem::path& path, const BuildConfig& cfg,
                         const GridSpec& grid);

}  // namespace attnx
