// Synthetic attention-level corpora with a known dependency structure.
//
// Each column evolves independently down the rows. Silence-prefix rows are
// level 1. After that, with probability 1 - noise a cell follows the
// transition rule over the previous `markov_order` rows, otherwise it is
// resampled uniformly from 1..num_levels. Levels are then mapped to
// representative weights taken from a fixed seeded weight pool, so that
// quantizing with the pool's boundaries returns the generated levels.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "attnx/attention_data.hpp"

namespace attnx {

struct SynthConfig {
  std::size_t num_matrices = 200;
  GridSpec grid{100, 40, 10};
  std::size_t markov_order = 1;
  double noise = 0.05;
  std::size_t silence_prefix = 10;
  /// A window whose oldest level exceeds this copies it forward.
  int persist_above = 7;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const SynthConfig& cfg);

/// Rule applied to the window of previous levels, oldest first. Returns the
/// oldest level if it is above persist_above, otherwise the lower median of
/// the window. Rows before the first grid row read as 0; the result is
/// clamped to 1..num_levels.
int transition_rule(std::span<const int> window, int persist_above, int num_levels);

/// The fixed weight pool behind the level -> weight mapping.
std::vector<double> synthetic_weight_pool(int num_levels);

struct SynthCorpus {
  GridSpec grid;
  std::vector<AttentionMatrix> matrices;
  std::vector<LevelMatrix> truth;
  /// Boundaries of the weight pool; quantizing with these recovers `truth`.
  DecileBoundaries pool_boundaries;
  /// Index l-1 holds the weight emitted for level l.
  std::vector<double> representative_weights;
};

SynthCorpus generate_corpus(const SynthConfig& cfg);

/// Writes manifest.json, one CSV per matrix under matrices/, truth.json and
/// boundaries.json (the pool boundaries).
void write_synth_corpus(const SynthCorpus& corpus, const SynthConfig& cfg,
                        const std::filesystem::path& dir);

}  // namespace attnx
