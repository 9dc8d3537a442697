#include "attnx/attention_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace attnx {

namespace fs = std::filesystem;

void GridSpec::validate() const {
  if (rows < 1) throw DataError("grid rows must be >= 1");
  if (cols < 1) throw DataError("grid cols must be >= 1");
  if (num_levels < 2 || num_levels > 255)
    throw DataError("num_levels must be in 2..255, got " + std::to_string(num_levels));
}

void validate_matrix(const AttentionMatrix& m, const GridSpec& grid) {
  if (m.rows < 1 || m.cols < 1)
    throw DataError("matrix '" + m.id + "' is empty");
  if (m.rows > grid.rows)
    throw DataError("matrix '" + m.id + "' has " + std::to_string(m.rows) +
                    " rows, grid allows " + std::to_string(grid.rows));
  if (m.cols > grid.cols)
    throw DataError("matrix '" + m.id + "' has " + std::to_string(m.cols) +
                    " cols, grid allows " + std::to_string(grid.cols));
  if (m.weights.size() != m.rows * m.cols)
    throw DataError("matrix '" + m.id + "' weight count does not match its shape");
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) {
      const double w = m.at(i, j);
      if (!std::isfinite(w) || w <= 0.0) {
        std::ostringstream os;
        os << "matrix '" << m.id << "' cell (" << i + 1 << "," << j + 1
           << ") has invalid weight " << w << " (must be finite and > 0)";
        throw DataError(os.str());
      }
    }
  }
}

int DecileBoundaries::level_of(double w) const {
  // Number of cuts strictly below w.
  const auto it = std::lower_bound(cuts.begin(), cuts.end(), w);
  return 1 + static_cast<int>(it - cuts.begin());
}

std::size_t LevelMatrix::nonzero_cells() const {
  return static_cast<std::size_t>(
      std::count_if(levels.begin(), levels.end(), [](Level v) { return v != 0; }));
}

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

}  // namespace

AttentionMatrix read_matrix_csv(const fs::path& path, std::string id) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open matrix file " + path.string());
  AttentionMatrix m;
  m.id = std::move(id);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view rest = trim(line);
    if (rest.empty()) continue;
    std::size_t count = 0;
    while (true) {
      const auto comma = rest.find(',');
      const std::string_view field = trim(rest.substr(0, comma));
      double v = 0.0;
      const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
      if (res.ec != std::errc() || res.ptr != field.data() + field.size())
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad value '" +
                        std::string(field) + "'");
      m.weights.push_back(v);
      ++count;
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    if (m.rows == 0) {
      m.cols = count;
    } else if (count != m.cols) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(m.cols) + " values, found " + std::to_string(count));
    }
    ++m.rows;
  }
  return m;
}

void write_matrix_csv(const fs::path& path, const AttentionMatrix& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write matrix file " + path.string());
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) {
      if (j) out << ',';
      out << format_double(m.at(i, j));
    }
    out << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

nlohmann::json to_json(const GridSpec& grid) {
  return {{"rows", grid.rows}, {"cols", grid.cols}, {"levels", grid.num_levels}};
}

GridSpec grid_from_json(const nlohmann::json& j) {
  GridSpec g;
  g.rows = j.at("rows").get<std::size_t>();
  g.cols = j.at("cols").get<std::size_t>();
  g.num_levels = j.value("levels", 10);
  g.validate();
  return g;
}

nlohmann::json to_json(const DecileBoundaries& b) { return {{"cuts", b.cuts}}; }

DecileBoundaries boundaries_from_json(const nlohmann::json& j) {
  DecileBoundaries b;
  b.cuts = j.at("cuts").get<std::vector<double>>();
  if (!std::is_sorted(b.cuts.begin(), b.cuts.end()))
    throw DataError("boundary cuts are not non-decreasing");
  return b;
}

CorpusManifest CorpusManifest::read(const fs::path& path) {
  const auto j = read_json_file(path);
  CorpusManifest m;
  try {
    m.grid = grid_from_json(j.at("grid"));
    std::unordered_set<std::string> seen;
    for (const auto& e : j.at("entries")) {
      ManifestEntry entry{e.at("id").get<std::string>(), e.at("path").get<std::string>(),
                          e.at("rows").get<std::size_t>(), e.at("cols").get<std::size_t>()};
      if (!seen.insert(entry.id).second)
        throw DataError("duplicate utterance id '" + entry.id + "'");
      m.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return m;
}

void CorpusManifest::write(const fs::path& path) const {
  nlohmann::json entries_json = nlohmann::json::array();
  for (const auto& e : entries)
    entries_json.push_back({{"id", e.id}, {"path", e.path}, {"rows", e.rows}, {"cols", e.cols}});
  write_json_file(path, {{"grid", to_json(grid)}, {"entries", entries_json}});
}

Corpus load_corpus(const fs::path& manifest_path) {
  const auto manifest = CorpusManifest::read(manifest_path);
  const fs::path base = manifest_path.parent_path();
  Corpus corpus;
  corpus.grid = manifest.grid;
  corpus.matrices.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    const fs::path file = base / e.path;
    if (!fs::exists(file))
      throw DataError("matrix file for '" + e.id + "' not found: " + file.string());
    auto m = read_matrix_csv(file, e.id);
    if (m.rows != e.rows || m.cols != e.cols)
      throw DataError("shape mismatch in " + file.string() + ": manifest declares " +
                      std::to_string(e.rows) + "x" + std::to_string(e.cols) + ", file has " +
                      std::to_string(m.rows) + "x" + std::to_string(m.cols));
    validate_matrix(m, corpus.grid);
    corpus.matrices.push_back(std::move(m));
  }
  return corpus;
}

DecileBoundaries compute_decile_boundaries(std::vector<double> pooled, int num_levels) {
  if (num_levels < 2) throw DataError("num_levels must be >= 2");
  const std::size_t n = pooled.size();
  if (n < static_cast<std::size_t>(num_levels))
    throw DataError("need at least " + std::to_string(num_levels) +
                    " weights to fit level boundaries, got " + std::to_string(n));
  std::sort(pooled.begin(), pooled.end());
  DecileBoundaries b;
  b.cuts.reserve(num_levels - 1);
  const auto levels = static_cast<std::size_t>(num_levels);
  for (std::size_t k = 1; k < levels; ++k) {
    const std::size_t rank = (k * n + levels - 1) / levels;  // ceil, 1-based
    b.cuts.push_back(pooled[rank - 1]);
  }
  return b;
}

DecileBoundaries compute_decile_boundaries(std::span<const AttentionMatrix> matrices,
                                           const GridSpec& grid) {
  std::size_t total = 0;
  for (const auto& m : matrices) total += m.weights.size();
  std::vector<double> pooled;
  pooled.reserve(total);
  for (const auto& m : matrices) pooled.insert(pooled.end(), m.weights.begin(), m.weights.end());
  return compute_decile_boundaries(std::move(pooled), grid.num_levels);
}

LevelMatrix quantize_matrix(const AttentionMatrix& m, const DecileBoundaries& b,
                            const GridSpec& grid) {
  if (m.rows > grid.rows)
    throw DataError("matrix '" + m.id + "' rows " + std::to_string(m.rows) +
                    " exceed grid rows " + std::to_string(grid.rows));
  if (m.cols > grid.cols)
    throw DataError("matrix '" + m.id + "' cols " + std::to_string(m.cols) +
                    " exceed grid cols " + std::to_string(grid.cols));
  if (b.num_levels() != grid.num_levels)
    throw DataError("boundaries define " + std::to_string(b.num_levels()) +
                    " levels, grid expects " + std::to_string(grid.num_levels));
  LevelMatrix out;
  out.id = m.id;
  out.grid_rows = grid.rows;
  out.grid_cols = grid.cols;
  out.used_rows = m.rows;
  out.used_cols = m.cols;
  out.levels.assign(grid.cells(), 0);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j)
      out.levels[i * grid.cols + j] = static_cast<Level>(b.level_of(m.at(i, j)));
  return out;
}

std::vector<LevelMatrix> quantize_corpus(const Corpus& corpus, const DecileBoundaries& b) {
  std::vector<LevelMatrix> out;
  out.reserve(corpus.matrices.size());
  for (const auto& m : corpus.matrices) out.push_back(quantize_matrix(m, b, corpus.grid));
  return out;
}

std::vector<std::uint64_t> level_distribution(std::span<const LevelMatrix> levels,
                                              int num_levels) {
  std::vector<std::uint64_t> hist(static_cast<std::size_t>(num_levels) + 1, 0);
  for (const auto& m : levels) {
    for (const Level v : m.levels) {
      if (v > num_levels)
        throw DataError("level " + std::to_string(v) + " in '" + m.id + "' exceeds " +
                        std::to_string(num_levels));
      ++hist[v];
    }
  }
  return hist;
}

nlohmann::json levels_to_json(const GridSpec& grid, const DecileBoundaries& b,
                              std::span<const LevelMatrix> levels) {
  nlohmann::json mats = nlohmann::json::array();
  for (const auto& m : levels) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < m.used_rows; ++i) {
      const auto r = m.row(i).first(m.used_cols);
      rows.push_back(std::vector<int>(r.begin(), r.end()));
    }
    mats.push_back({{"id", m.id},
                    {"used_rows", m.used_rows},
                    {"used_cols", m.used_cols},
                    {"levels", std::move(rows)}});
  }
  return {{"grid", to_json(grid)}, {"boundaries", to_json(b)}, {"matrices", std::move(mats)}};
}

LevelsFile levels_from_json(const nlohmann::json& j) {
  LevelsFile f;
  f.grid = grid_from_json(j.at("grid"));
  f.boundaries = boundaries_from_json(j.at("boundaries"));
  for (const auto& mj : j.at("matrices")) {
    LevelMatrix m;
    m.id = mj.at("id").get<std::string>();
    m.grid_rows = f.grid.rows;
    m.grid_cols = f.grid.cols;
    m.used_rows = mj.at("used_rows").get<std::size_t>();
    m.used_cols = mj.at("used_cols").get<std::size_t>();
    if (m.used_rows > f.grid.rows || m.used_cols > f.grid.cols)
      throw DataError("level matrix '" + m.id + "' exceeds the grid");
    m.levels.assign(f.grid.cells(), 0);
    const auto& rows = mj.at("levels");
    if (rows.size() != m.used_rows)
      throw DataError("level matrix '" + m.id + "' row count mismatch");
    for (std::size_t i = 0; i < m.used_rows; ++i) {
      const auto vals = rows[i].get<std::vector<int>>();
      if (vals.size() != m.used_cols)
        throw DataError("level matrix '" + m.id + "' col count mismatch");
      for (std::size_t c = 0; c < vals.size(); ++c) {
        if (vals[c] < 1 || vals[c] > f.grid.num_levels)
          throw DataError("level matrix '" + m.id + "' has out-of-range level");
        m.levels[i * f.grid.cols + c] = static_cast<Level>(vals[c]);
      }
    }
    f.matrices.push_back(std::move(m));
  }
  return f;
}

void write_levels_file(const fs::path& path, const GridSpec& grid, const DecileBoundaries& b,
                       std::span<const LevelMatrix> levels) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  // Compact: level files get large.
  out << levels_to_json(grid, b, levels).dump() << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

LevelsFile read_levels_file(const fs::path& path) {
  const auto j = read_json_file(path);
  try {
    return levels_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace attnx
