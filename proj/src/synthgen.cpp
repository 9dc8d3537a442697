#include "attnx/synthgen.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>

namespace attnx {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kPoolSeed = 0x61747465'6E74696FULL;
constexpr std::size_t kPoolSize = 10000;

std::uint64_t matrix_seed(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (std::uint64_t{out[0]} << 32) | out[1];
}

}  // namespace

void SynthConfig::validate() const {
  grid.validate();
  if (num_matrices < 1) throw DataError("num_matrices must be >= 1");
  if (markov_order < 1 || markov_order >= grid.rows)
    throw DataError("markov order must satisfy 1 <= m < grid rows");
  if (silence_prefix >= grid.rows) throw DataError("silence prefix must be < grid rows");
  if (!(noise >= 0.0 && noise < 1.0)) throw DataError("noise must lie in [0, 1)");
}

nlohmann::json to_json(const SynthConfig& cfg) {
  return {{"num_matrices", cfg.num_matrices}, {"grid", to_json(cfg.grid)},
          {"markov_order", cfg.markov_order}, {"noise", cfg.noise},
          {"silence_prefix", cfg.silence_prefix}, {"persist_above", cfg.persist_above},
          {"seed", cfg.seed}};
}

int transition_rule(std::span<const int> window, int persist_above, int num_levels) {
  if (window.empty()) throw DataError("transition rule needs a non-empty window");
  int next = 0;
  if (window.front() > persist_above) {
    next = window.front();
  } else {
    std::vector<int> sorted(window.begin(), window.end());
    const auto mid = sorted.begin() + static_cast<std::ptrdiff_t>((sorted.size() - 1) / 2);
    std::nth_element(sorted.begin(), mid, sorted.end());
    next = *mid;
  }
  return std::clamp(next, 1, num_levels);
}

std::vector<double> synthetic_weight_pool(int num_levels) {
  std::mt19937_64 rng(kPoolSeed + static_cast<std::uint64_t>(num_levels));
  std::lognormal_distribution<double> draw(-4.0, 1.5);
  std::vector<double> pool(kPoolSize);
  for (auto& w : pool) w = draw(rng);
  return pool;
}

SynthCorpus generate_corpus(const SynthConfig& cfg) {
  cfg.validate();
  const GridSpec& grid = cfg.grid;
  const int L = grid.num_levels;

  SynthCorpus out;
  out.grid = grid;

  // Level -> weight: midpoint of each equal-frequency bucket of the pool.
  auto pool = synthetic_weight_pool(L);
  out.pool_boundaries = compute_decile_boundaries(pool, L);
  std::sort(pool.begin(), pool.end());
  if (std::adjacent_find(pool.begin(), pool.end()) != pool.end())
    throw DataError("synthetic weight pool has duplicate values");
  {
    std::size_t lo = 0;
    for (int level = 1; level <= L; ++level) {
      const std::size_t hi =
          level == L ? pool.size()
                     : (static_cast<std::size_t>(level) * pool.size() + L - 1) / L;
      out.representative_weights.push_back((pool[lo] + pool[hi - 1]) / 2.0);
      lo = hi;
    }
  }

  const std::size_t rows = grid.rows;
  const std::size_t cols = grid.cols;
  const std::size_t m = cfg.markov_order;
  out.matrices.reserve(cfg.num_matrices);
  out.truth.reserve(cfg.num_matrices);
  std::vector<int> column(rows);
  std::vector<int> window(m);
  for (std::size_t u = 0; u < cfg.num_matrices; ++u) {
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%05zu", u);
    std::mt19937_64 rng(matrix_seed(cfg.seed, u));
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::uniform_int_distribution<int> uniform_level(1, L);

    LevelMatrix truth;
    truth.id = name;
    truth.grid_rows = rows;
    truth.grid_cols = cols;
    truth.used_rows = rows;
    truth.used_cols = cols;
    truth.levels.assign(grid.cells(), 0);
    AttentionMatrix mat;
    mat.id = name;
    mat.rows = rows;
    mat.cols = cols;
    mat.weights.assign(grid.cells(), 0.0);

    for (std::size_t j = 0; j < cols; ++j) {
      for (std::size_t i = 0; i < rows; ++i) {
        int level = 1;
        if (i >= cfg.silence_prefix) {
          if (coin(rng) < cfg.noise) {
            level = uniform_level(rng);
          } else {
            for (std::size_t k = 0; k < m; ++k) {
              const auto src = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(m) +
                               static_cast<std::ptrdiff_t>(k);
              window[k] = src < 0 ? 0 : column[static_cast<std::size_t>(src)];
            }
            level = transition_rule(window, cfg.persist_above, L);
          }
        }
        column[i] = level;
        truth.levels[i * cols + j] = static_cast<Level>(level);
        mat.weights[i * cols + j] = out.representative_weights[static_cast<std::size_t>(level - 1)];
      }
    }
    out.matrices.push_back(std::move(mat));
    out.truth.push_back(std::move(truth));
  }
  return out;
}

void write_synth_corpus(const SynthCorpus& corpus, const SynthConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir / "matrices");
  CorpusManifest manifest;
  manifest.grid = corpus.grid;
  for (const auto& m : corpus.matrices) {
    const std::string rel = "matrices/" + m.id + ".csv";
    write_matrix_csv(dir / rel, m);
    manifest.entries.push_back({m.id, rel, m.rows, m.cols});
  }
  manifest.write(dir / "manifest.json");

  auto truth = levels_to_json(corpus.grid, corpus.pool_boundaries, corpus.truth);
  truth["config"] = to_json(cfg);
  truth["representative_weights"] = corpus.representative_weights;
  std::ofstream out(dir / "truth.json");
  if (!out) throw DataError("cannot write " + (dir / "truth.json").string());
  out << truth.dump() << '\n';
  write_json_file(dir / "boundaries.json", to_json(corpus.pool_boundaries));
}

}  // namespace attnx
