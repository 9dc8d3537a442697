// Attention weight matrices, equal-frequency level boundaries and the fixed
// size level grids that the rest of the pipeline consumes.
//
// Row index = encoder output state, column index = decoder output state.
// Levels run 1..num_levels inside an utterance's extent; 0 marks a vacancy.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace attnx {

using Level = std::uint8_t;

/// Raised for malformed input: bad files, shape mismatches, invalid weights.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GridSpec {
  std::size_t rows = 100;
  std::size_t cols = 659;
  int num_levels = 10;

  void validate() const;
  std::size_t cells() const { return rows * cols; }

  bool operator==(const GridSpec&) const = default;
};

struct AttentionMatrix {
  std::string id;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> weights;  // row-major, rows * cols

  double at(std::size_t i, std::size_t j) const { return weights[i * cols + j]; }
};

/// Checks weights are finite and strictly positive and that the matrix fits
/// the grid. Messages name the utterance and the offending cell.
void validate_matrix(const AttentionMatrix& m, const GridSpec& grid);

/// Cut points b_1..b_{L-1} of an equal-frequency split of pooled weights.
struct DecileBoundaries {
  std::vector<double> cuts;

  int num_levels() const { return static_cast<int>(cuts.size()) + 1; }

  /// 1 + |{k : w > b_k}|. Weights equal to a cut fall in the lower level.
  int level_of(double w) const;
};

struct LevelMatrix {
  std::string id;
  std::size_t grid_rows = 0;
  std::size_t grid_cols = 0;
  std::size_t used_rows = 0;
  std::size_t used_cols = 0;
  std::vector<Level> levels;  // grid_rows * grid_cols, row-major

  Level at(std::size_t i, std::size_t j) const { return levels[i * grid_cols + j]; }
  std::span<const Level> row(std::size_t i) const {
    return {levels.data() + i * grid_cols, grid_cols};
  }
  std::size_t nonzero_cells() const;
};

struct ManifestEntry {
  std::string id;
  std::string path;  // relative to the manifest's directory
  std::size_t rows = 0;
  std::size_t cols = 0;
};

struct CorpusManifest {
  GridSpec grid;
  std::vector<ManifestEntry> entries;

  static CorpusManifest read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;
};

struct Corpus {
  GridSpec grid;
  std::vector<AttentionMatrix> matrices;
};

// Matrix files are headerless CSV, one row per line. Values are written in
// shortest round-trip form so save/load is bit-exact.
AttentionMatrix read_matrix_csv(const std::filesystem::path& path, std::string id);
void write_matrix_csv(const std::filesystem::path& path, const AttentionMatrix& m);

/// Loads every manifest entry, in manifest order, validating declared shapes.
Corpus load_corpus(const std::filesystem::path& manifest_path);

/// Pools every used cell of every matrix, sorts ascending and takes
/// b_k = element at 1-based rank ceil(k * N / num_levels).
DecileBoundaries compute_decile_boundaries(std::span<const AttentionMatrix> matrices,
                                           const GridSpec& grid);
DecileBoundaries compute_decile_boundaries(std::vector<double> pooled, int num_levels);

LevelMatrix quantize_matrix(const AttentionMatrix& m, const DecileBoundaries& b,
                            const GridSpec& grid);
std::vector<LevelMatrix> quantize_corpus(const Corpus& corpus, const DecileBoundaries& b);

/// Counts of levels 0..num_levels over every grid cell of every matrix.
std::vector<std::uint64_t> level_distribution(std::span<const LevelMatrix> levels,
                                              int num_levels);

nlohmann::json to_json(const GridSpec& grid);
GridSpec grid_from_json(const nlohmann::json& j);

nlohmann::json to_json(const DecileBoundaries& b);
DecileBoundaries boundaries_from_json(const nlohmann::json& j);

// Level grid file: grid, boundaries and the used region of every matrix.
struct LevelsFile {
  GridSpec grid;
  DecileBoundaries boundaries;
  std::vector<LevelMatrix> matrices;
};
nlohmann::json levels_to_json(const GridSpec& grid, const DecileBoundaries& b,
                              std::span<const LevelMatrix> levels);
LevelsFile levels_from_json(const nlohmann::json& j);
void write_levels_file(const std::filesystem::path& path, const GridSpec& grid,
                       const DecileBoundaries& b, std::span<const LevelMatrix> levels);
LevelsFile read_levels_file(const std::filesystem::path& path);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace attnx
