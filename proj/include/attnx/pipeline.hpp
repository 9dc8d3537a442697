// End-to-end run: load -> boundaries -> quantize -> for each p (build,
// split, train, evaluate, explain) -> report and figure tables.

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnx/attention_data.hpp"
#include "attnx/dataset.hpp"
#include "attnx/explain.hpp"
#include "attnx/forest.hpp"

namespace attnx {

/// A failure tagged with the pipeline stage that raised it.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message)
      : std::runtime_error(stage + ": " + message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct PipelineOptions {
  std::vector<std::size_t> p_list{1};
  BuildConfig build;  // build.p is replaced by each entry of p_list
  TrainConfig train;
  /// Quantize with these instead of fitting boundaries on the corpus.
  std::optional<DecileBoundaries> boundaries;
  /// Grid overrides applied to the manifest's grid after loading.
  std::optional<std::size_t> grid_rows;
  std::optional<std::size_t> grid_cols;
  std::optional<int> num_levels;
  bool save_forests = false;
};

struct WindowResult {
  std::size_t p = 0;
  std::size_t train_examples = 0;
  std::size_t eval_examples = 0;
  Evaluation evaluation;
  InfluenceTable influence;
};

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct RunReport {
  GridSpec grid;
  std::size_t num_matrices = 0;
  bool boundaries_fitted = true;
  DecileBoundaries boundaries;
  BuildConfig build;
  TrainConfig train;
  std::vector<std::uint64_t> level_distribution;  // levels 0..num_levels
  std::vector<WindowResult> windows;              // one per p, in p_list order
  std::vector<StageTiming> timings;

  std::map<std::size_t, double> accuracy_vs_p() const;
  const WindowResult& window(std::size_t p) const;

  /// Deterministic report; wall-clock timings are kept out of it.
  nlohmann::json to_json() const;
  nlohmann::json timings_json() const;
};

/// In-memory analysis of a loaded corpus. When `forest_dir` is set, each
/// trained forest is written there as forest_p<p>.json.
RunReport analyze_corpus(const Corpus& corpus, const PipelineOptions& opts,
                         const std::filesystem::path* forest_dir = nullptr);

/// Full run from a manifest. Writes report.json, timings.json and the figure
/// tables into out_dir; files written by a failed run are removed.
RunReport run_pipeline(const std::filesystem::path& manifest_path, const PipelineOptions& opts,
                       const std::filesystem::path& out_dir);

/// fig1_row_accuracy.csv .. fig5_influence_by_interval.csv. Returns the
/// paths written.
std::vector<std::filesystem::path> emit_figure_tables(const RunReport& report,
                                                      const std::filesystem::path& out_dir);

/// "1,2,4" or "1-8" or a mix of both.
std::vector<std::size_t> parse_p_list(const std::string& text);

}  // namespace attnx
