#include "attnx/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_map>

namespace attnx {

std::string_view to_string(FeatureMode mode) {
  return mode == FeatureMode::RowConcat ? "row-concat" : "column-window";
}

FeatureMode parse_feature_mode(std::string_view s) {
  if (s == "row-concat") return FeatureMode::RowConcat;
  if (s == "column-window") return FeatureMode::ColumnWindow;
  throw DataError("unknown feature mode '" + std::string(s) +
                  "' (expected row-concat or column-window)");
}

void BuildConfig::validate(const GridSpec& grid) const {
  if (p < 1 || p >= grid.rows)
    throw DataError("p must satisfy 1 <= p < grid rows (" + std::to_string(grid.rows) +
                    "), got " + std::to_string(p));
  if (high_threshold < 0 || high_threshold >= grid.num_levels)
    throw DataError("high threshold must be in 0.." + std::to_string(grid.num_levels - 1));
  if (!(split_fraction > 0.0 && split_fraction < 1.0))
    throw DataError("split fraction must lie in (0, 1)");
}

nlohmann::json to_json(const BuildConfig& cfg) {
  return {{"p", cfg.p},
          {"high_threshold", cfg.high_threshold},
          {"feature_mode", std::string(to_string(cfg.mode))},
          {"split_fraction", cfg.split_fraction},
          {"seed", cfg.seed}};
}

BuildConfig build_config_from_json(const nlohmann::json& j) {
  BuildConfig cfg;
  cfg.p = j.at("p").get<std::size_t>();
  cfg.high_threshold = j.at("high_threshold").get<int>();
  cfg.mode = parse_feature_mode(j.at("feature_mode").get<std::string>());
  cfg.split_fraction = j.at("split_fraction").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

Dataset::Dataset(std::size_t feature_dim, std::vector<Level> feature_table,
                 std::vector<Example> examples, std::vector<std::string> utterances,
                 BuildConfig config, GridSpec grid)
    : feature_dim_(feature_dim),
      table_(std::make_shared<const std::vector<Level>>(std::move(feature_table))),
      examples_(std::move(examples)),
      utterances_(std::make_shared<const std::vector<std::string>>(std::move(utterances))),
      config_(config),
      grid_(grid) {}

Dataset Dataset::select(std::span<const std::size_t> order) const {
  Dataset out = *this;
  out.examples_.clear();
  out.examples_.reserve(order.size());
  for (const std::size_t i : order) out.examples_.push_back(examples_.at(i));
  return out;
}

Dataset make_dataset(std::span<const std::vector<Level>> features, std::span<const Label> labels,
                     std::span<const std::uint32_t> row_ids) {
  if (features.size() != labels.size())
    throw DataError("features and labels differ in length");
  if (!row_ids.empty() && row_ids.size() != labels.size())
    throw DataError("row ids and labels differ in length");
  const std::size_t dim = features.empty() ? 0 : features.front().size();
  std::vector<Level> table;
  table.reserve(features.size() * dim);
  std::vector<Example> examples;
  examples.reserve(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != dim) throw DataError("ragged feature vectors");
    table.insert(table.end(), features[i].begin(), features[i].end());
    examples.push_back({static_cast<std::uint32_t>(i), labels[i],
                        row_ids.empty() ? 1u : row_ids[i], 1u, 0u});
  }
  GridSpec grid;
  grid.rows = 1;
  grid.cols = dim;
  return Dataset(dim, std::move(table), std::move(examples), {"inline"}, BuildConfig{}, grid);
}

Dataset build_examples(std::span<const LevelMatrix> levels, const GridSpec& grid,
                       const BuildConfig& cfg) {
  if (levels.empty()) throw DataError("no level matrices to build examples from");
  cfg.validate(grid);
  for (const auto& m : levels)
    if (m.grid_rows != grid.rows || m.grid_cols != grid.cols)
      throw DataError("level matrix '" + m.id + "' does not match the grid");

  const std::size_t rows = grid.rows;
  const std::size_t cols = grid.cols;
  const std::size_t p = cfg.p;
  const bool concat = cfg.mode == FeatureMode::RowConcat;
  const std::size_t dim = concat ? p * cols : p;
  const std::size_t per_matrix = rows * cols;
  const std::size_t table_rows = levels.size() * (concat ? rows : per_matrix);

  std::vector<Level> table(table_rows * dim, 0);
  std::vector<Example> examples;
  examples.reserve(levels.size() * per_matrix);
  std::vector<std::string> ids;
  ids.reserve(levels.size());

  for (std::size_t u = 0; u < levels.size(); ++u) {
    const LevelMatrix& m = levels[u];
    ids.push_back(m.id);
    for (std::size_t i = 0; i < rows; ++i) {
      // Window rows i-p .. i-1 (0-based), oldest first; negative rows stay zero.
      if (concat) {
        const std::size_t trow = u * rows + i;
        Level* dst = table.data() + trow * dim;
        for (std::size_t k = 0; k < p; ++k) {
          const auto src_row = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(p) +
                               static_cast<std::ptrdiff_t>(k);
          if (src_row < 0) continue;
          const auto r = m.row(static_cast<std::size_t>(src_row));
          std::copy(r.begin(), r.end(), dst + k * cols);
        }
      }
      for (std::size_t j = 0; j < cols; ++j) {
        std::uint32_t trow = 0;
        if (concat) {
          trow = static_cast<std::uint32_t>(u * rows + i);
        } else {
          trow = static_cast<std::uint32_t>(u * per_matrix + i * cols + j);
          Level* dst = table.data() + std::size_t{trow} * dim;
          for (std::size_t k = 0; k < p; ++k) {
            const auto src_row = static_cast<std::ptrdiff_t>(i) -
                                 static_cast<std::ptrdiff_t>(p) + static_cast<std::ptrdiff_t>(k);
            if (src_row >= 0) dst[k] = m.at(static_cast<std::size_t>(src_row), j);
          }
        }
        const Label label = m.at(i, j) > cfg.high_threshold ? Label::High : Label::Low;
        examples.push_back({trow, label, static_cast<std::uint32_t>(i + 1),
                            static_cast<std::uint32_t>(j + 1), static_cast<std::uint32_t>(u)});
      }
    }
  }
  return Dataset(dim, std::move(table), std::move(examples), std::move(ids), cfg, grid);
}

std::pair<Dataset, Dataset> shuffle_split(const Dataset& d, const BuildConfig& cfg) {
  if (d.empty()) throw DataError("cannot split an empty dataset");
  if (!(cfg.split_fraction > 0.0 && cfg.split_fraction < 1.0))
    throw DataError("split fraction must lie in (0, 1)");
  const std::size_t n = d.size();
  const auto n_train = static_cast<std::size_t>(std::floor(cfg.split_fraction * n));
  if (n_train == 0 || n_train == n)
    throw DataError("split of " + std::to_string(n) + " examples at fraction " +
                    std::to_string(cfg.split_fraction) + " leaves one side empty");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::span<const std::size_t> all(order);
  return {d.select(all.first(n_train)), d.select(all.subspan(n_train))};
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& d) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  std::string line;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const Example& e = d.example(i);
    line.clear();
    line += d.utterance_id(i);
    line += ',' + std::to_string(e.row_id) + ',' + std::to_string(e.col_id) + ',' +
            (e.label == Label::High ? '1' : '0');
    for (const Level v : d.features(i)) {
      line += ',';
      line += std::to_string(v);
    }
    line += '\n';
    out << line;
  }
  if (!out) throw DataError("failed writing " + path.string());
}

namespace {

std::uint32_t parse_uint(std::string_view field, const std::string& where) {
  std::uint32_t v = 0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size())
    throw DataError(where + ": bad integer '" + std::string(field) + "'");
  return v;
}

}  // namespace

Dataset read_dataset_csv(const std::filesystem::path& path, const BuildConfig& cfg,
                         const GridSpec& grid) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  const std::size_t dim = cfg.mode == FeatureMode::RowConcat ? cfg.p * grid.cols : cfg.p;
  std::vector<Level> table;
  std::vector<Example> examples;
  std::vector<std::string> ids;
  std::unordered_map<std::string, std::uint32_t> id_index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    if (fields.size() != 4 + dim)
      throw DataError(where + ": expected " + std::to_string(4 + dim) + " fields, found " +
                      std::to_string(fields.size()));
    const std::string id(fields[0]);
    auto [it, inserted] = id_index.try_emplace(id, static_cast<std::uint32_t>(ids.size()));
    if (inserted) ids.push_back(id);
    Example e;
    e.utterance = it->second;
    e.row_id = parse_uint(fields[1], where);
    e.col_id = parse_uint(fields[2], where);
    const auto label = parse_uint(fields[3], where);
    if (label > 1) throw DataError(where + ": label must be 0 or 1");
    e.label = label ? Label::High : Label::Low;
    e.feature_row = static_cast<std::uint32_t>(examples.size());
    for (std::size_t f = 0; f < dim; ++f) {
      const auto v = parse_uint(fields[4 + f], where);
      if (v > static_cast<std::uint32_t>(grid.num_levels))
        throw DataError(where + ": feature value out of range");
      table.push_back(static_cast<Level>(v));
    }
    examples.push_back(e);
  }
  return Dataset(dim, std::move(table), std::move(examples), std::move(ids), cfg, grid);
}

}  // namespace attnx
