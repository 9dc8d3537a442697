#include "attnx/pipeline.hpp"

#include <charconv>
#include <chrono>
#include <fstream>
#include <functional>
#include <sstream>

namespace attnx {

namespace fs = std::filesystem;

std::map<std::size_t, double> RunReport::accuracy_vs_p() const {
  std::map<std::size_t, double> out;
  for (const auto& w : windows) out[w.p] = w.evaluation.overall();
  return out;
}

const WindowResult& RunReport::window(std::size_t p) const {
  for (const auto& w : windows)
    if (w.p == p) return w;
  throw DataError("no result for p=" + std::to_string(p));
}

nlohmann::json RunReport::to_json() const {
  std::vector<std::size_t> p_list;
  for (const auto& w : windows) p_list.push_back(w.p);

  nlohmann::json accuracy = nlohmann::json::array();
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& w : windows) {
    accuracy.push_back({{"p", w.p}, {"accuracy", w.evaluation.overall()}});
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : w.evaluation.rows)
      rows.push_back({{"row_id", r.row_id},
                      {"n", r.total},
                      {"correct", r.correct},
                      {"accuracy", r.accuracy()}});
    runs.push_back({{"p", w.p},
                    {"train_examples", w.train_examples},
                    {"eval_examples", w.eval_examples},
                    {"overall_accuracy", w.evaluation.overall()},
                    {"per_row_accuracy", std::move(rows)},
                    {"explanation", attnx::to_json(w.influence)}});
  }
  nlohmann::json build_json = attnx::to_json(build);
  build_json.erase("p");
  return {{"config",
           {{"grid", attnx::to_json(grid)},
            {"num_matrices", num_matrices},
            {"boundaries_source", boundaries_fitted ? "fit" : "reused"},
            {"p_list", p_list},
            {"build", std::move(build_json)},
            {"train", attnx::to_json(train)}}},
          {"boundaries", boundaries.cuts},
          {"level_distribution", level_distribution},
          {"accuracy_vs_p", std::move(accuracy)},
          {"runs", std::move(runs)}};
}

nlohmann::json RunReport::timings_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& t : timings) out.push_back({{"stage", t.stage}, {"seconds", t.seconds}});
  return out;
}

namespace {

class StageClock {
 public:
  explicit StageClock(std::vector<StageTiming>& sink) : sink_(sink) {}

  template <typename F>
  auto run(const std::string& stage, F&& body) -> decltype(body()) {
    const auto start = std::chrono::steady_clock::now();
    auto record = [&] {
      sink_.push_back(
          {stage, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()});
    };
    try {
      if constexpr (std::is_void_v<decltype(body())>) {
        body();
        record();
      } else {
        auto result = body();
        record();
        return result;
      }
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(stage, e.what());
    }
  }

 private:
  std::vector<StageTiming>& sink_;
};

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

RunReport analyze_corpus(const Corpus& corpus, const PipelineOptions& opts,
                         const fs::path* forest_dir) {
  if (opts.p_list.empty()) throw StageError("config", "p list is empty");
  for (const auto p : opts.p_list)
    if (p < 1 || p >= corpus.grid.rows)
      throw StageError("config", "p=" + std::to_string(p) + " must satisfy 1 <= p < grid rows");
  if (corpus.matrices.empty()) throw StageError("load", "corpus has no matrices");

  RunReport report;
  StageClock clock(report.timings);
  report.grid = corpus.grid;
  report.num_matrices = corpus.matrices.size();
  report.build = opts.build;
  report.train = opts.train;

  report.boundaries = clock.run("boundaries", [&] {
    if (opts.boundaries) {
      if (opts.boundaries->num_levels() != corpus.grid.num_levels)
        throw DataError("supplied boundaries do not match the grid's level count");
      return *opts.boundaries;
    }
    return compute_decile_boundaries(corpus.matrices, corpus.grid);
  });
  report.boundaries_fitted = !opts.boundaries;

  const auto levels =
      clock.run("quantize", [&] { return quantize_corpus(corpus, report.boundaries); });
  report.level_distribution = level_distribution(levels, corpus.grid.num_levels);

  for (const std::size_t p : opts.p_list) {
    const std::string tag = " (p=" + std::to_string(p) + ")";
    BuildConfig build = opts.build;
    build.p = p;
    const auto data = clock.run("build" + tag, [&] { return build_examples(levels, corpus.grid, build); });
    auto [train, eval] = clock.run("split" + tag, [&] { return shuffle_split(data, build); });
    const auto forest = clock.run("train" + tag, [&] { return train_forest(train, opts.train); });
    if (forest_dir) {
      clock.run("save forest" + tag, [&] {
        write_json_file(*forest_dir / ("forest_p" + std::to_string(p) + ".json"),
                        forest.to_json());
      });
    }
    WindowResult w;
    w.p = p;
    w.train_examples = train.size();
    w.eval_examples = eval.size();
    w.evaluation = clock.run("evaluate" + tag, [&] { return evaluate_by_row(forest, eval); });
    const FeatureLayout layout{p, corpus.grid.cols, build.mode};
    w.influence = clock.run("explain" + tag, [&] {
      return explain_forest(forest, layout, corpus.grid.num_levels);
    });
    report.windows.push_back(std::move(w));
  }
  return report;
}

std::vector<fs::path> emit_figure_tables(const RunReport& report, const fs::path& out_dir) {
  std::vector<fs::path> written;
  auto emit = [&](const std::string& name, const std::string& header,
                  const std::function<void(std::ostream&)>& body) {
    const fs::path path = out_dir / name;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    written.push_back(path);
    out << header << '\n';
    body(out);
    if (!out) throw DataError("failed writing " + path.string());
  };

  emit("fig1_row_accuracy.csv", "p,row_id,n,accuracy", [&](std::ostream& out) {
    for (const auto& w : report.windows)
      for (const auto& r : w.evaluation.rows)
        if (r.total > 0)
          out << w.p << ',' << r.row_id << ',' << r.total << ',' << fmt(r.accuracy()) << '\n';
  });
  emit("fig2_level_distribution.csv", "level,count", [&](std::ostream& out) {
    for (std::size_t l = 0; l < report.level_distribution.size(); ++l)
      out << l << ',' << report.level_distribution[l] << '\n';
  });
  emit("fig3_accuracy_vs_p.csv", "p,accuracy", [&](std::ostream& out) {
    for (const auto& w : report.windows) out << w.p << ',' << fmt(w.evaluation.overall()) << '\n';
  });
  emit("fig4_condition_frequencies.csv", "p,level,count", [&](std::ostream& out) {
    for (const auto& w : report.windows)
      for (std::size_t l = 0; l < w.influence.level_frequencies.size(); ++l)
        out << w.p << ',' << l + 1 << ',' << w.influence.level_frequencies[l] << '\n';
  });
  emit("fig5_influence_by_interval.csv", "p,interval,influence", [&](std::ostream& out) {
    for (const auto& w : report.windows)
      for (std::size_t k = 0; k < w.influence.per_interval.size(); ++k)
        out << w.p << ',' << k + 1 << ',' << fmt(w.influence.per_interval[k]) << '\n';
  });
  return written;
}

RunReport run_pipeline(const fs::path& manifest_path, const PipelineOptions& opts,
                       const fs::path& out_dir) {
  std::vector<fs::path> written;
  const bool created_dir = !fs::exists(out_dir);
  auto cleanup = [&] {
    std::error_code ec;
    for (const auto& p : written) fs::remove(p, ec);
    if (created_dir && fs::is_empty(out_dir, ec)) fs::remove(out_dir, ec);
  };
  try {
    std::vector<StageTiming> load_timing;
    const Corpus corpus = StageClock(load_timing).run("load", [&] {
      Corpus c = load_corpus(manifest_path);
      if (opts.grid_rows || opts.grid_cols || opts.num_levels) {
        if (opts.grid_rows) c.grid.rows = *opts.grid_rows;
        if (opts.grid_cols) c.grid.cols = *opts.grid_cols;
        if (opts.num_levels) c.grid.num_levels = *opts.num_levels;
        c.grid.validate();
        for (const auto& m : c.matrices) validate_matrix(m, c.grid);
      }
      return c;
    });
    StageClock(load_timing).run("output", [&] { fs::create_directories(out_dir); });

    std::vector<fs::path> forests;
    if (opts.save_forests)
      for (const auto p : opts.p_list)
        forests.push_back(out_dir / ("forest_p" + std::to_string(p) + ".json"));
    written.insert(written.end(), forests.begin(), forests.end());

    RunReport report = analyze_corpus(corpus, opts, opts.save_forests ? &out_dir : nullptr);
    report.timings.insert(report.timings.begin(), load_timing.begin(), load_timing.end());

    StageClock(report.timings).run("emit", [&] {
      for (const auto& name : {"report.json", "timings.json"}) written.push_back(out_dir / name);
      write_json_file(out_dir / "report.json", report.to_json());
      const auto tables = emit_figure_tables(report, out_dir);
      written.insert(written.end(), tables.begin(), tables.end());
      write_json_file(out_dir / "timings.json", report.timings_json());
    });
    return report;
  } catch (...) {
    cleanup();
    throw;
  }
}

std::vector<std::size_t> parse_p_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  auto number = [&](const std::string& s) {
    std::size_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
      throw DataError("bad p value '" + s + "' in '" + text + "'");
    return v;
  };
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      out.push_back(number(item));
    } else {
      const auto lo = number(item.substr(0, dash));
      const auto hi = number(item.substr(dash + 1));
      if (lo > hi) throw DataError("bad p range '" + item + "'");
      for (auto p = lo; p <= hi; ++p) out.push_back(p);
    }
  }
  if (out.empty()) throw DataError("empty p list '" + text + "'");
  return out;
}

}  // namespace attnx
