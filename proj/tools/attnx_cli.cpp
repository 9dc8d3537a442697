// attnx: quantize attention matrices, build windowed datasets, train the
// forest and report accuracy / condition levels / influence by interval.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "attnx/attention_data.hpp"
#include "attnx/dataset.hpp"
#include "attnx/explain.hpp"
#include "attnx/forest.hpp"
#include "attnx/pipeline.hpp"
#include "attnx/synthgen.hpp"

namespace fs = std::filesystem;
using namespace attnx;

namespace {

struct GridFlags {
  std::optional<std::size_t> rows;
  std::optional<std::size_t> cols;
  std::optional<int> levels;

  void add(CLI::App* app) {
    app->add_option("--grid-rows", rows, "Level grid rows (max encoder states)");
    app->add_option("--grid-cols", cols, "Level grid columns (max decoder states)");
    app->add_option("--levels", levels, "Number of attention levels");
  }
};

struct BuildFlags {
  int threshold = 5;
  std::string mode = "row-concat";
  double split = 0.8;

  void add(CLI::App* app) {
    app->add_option("--threshold", threshold, "Levels above this are labeled high")
        ->capture_default_str();
    app->add_option("--feature-mode", mode, "row-concat or column-window")
        ->check(CLI::IsMember({"row-concat", "column-window"}))
        ->capture_default_str();
    app->add_option("--split", split, "Training fraction")->capture_default_str();
  }
  BuildConfig config(std::size_t p, std::uint64_t seed) const {
    return {p, threshold, parse_feature_mode(mode), split, seed};
  }
};

struct TrainFlags {
  std::size_t trees = 100;
  std::size_t max_depth = 64;
  std::size_t min_leaf = 64;
  std::optional<std::size_t> features;
  unsigned threads = 0;

  void add(CLI::App* app) {
    app->add_option("--trees", trees, "Trees in the forest")->capture_default_str();
    app->add_option("--max-depth", max_depth, "Maximum tree depth")->capture_default_str();
    app->add_option("--min-leaf", min_leaf, "Minimum training examples per leaf")
        ->capture_default_str();
    app->add_option("--features", features,
                    "Candidate features per split (default ceil(sqrt(d)), 0 = all)");
    app->add_option("--threads", threads, "Training threads (0 = all cores)");
  }
  TrainConfig config(std::uint64_t seed) const {
    TrainConfig cfg;
    cfg.num_trees = trees;
    cfg.max_depth = max_depth;
    cfg.min_leaf = min_leaf;
    cfg.feature_subsample = features;
    cfg.seed = seed;
    cfg.threads = threads;
    return cfg;
  }
};

void print_distribution(const std::vector<std::uint64_t>& hist) {
  std::cout << "level distribution:";
  for (std::size_t l = 0; l < hist.size(); ++l) std::cout << ' ' << l << ':' << hist[l];
  std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Explain attention dynamics with decision-tree ensembles"};
  app.require_subcommand(1);
  std::string current = "cli";

  // synth
  SynthConfig synth_cfg;
  GridFlags synth_grid;
  fs::path synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with known dynamics");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--matrices", synth_cfg.num_matrices, "Number of matrices")
      ->capture_default_str();
  synth_grid.add(synth);
  synth->add_option("--order", synth_cfg.markov_order, "Markov order m")->capture_default_str();
  synth->add_option("--noise", synth_cfg.noise, "Resampling probability")->capture_default_str();
  synth->add_option("--silence", synth_cfg.silence_prefix, "Rows forced to level 1")
      ->capture_default_str();
  synth->add_option("--persist-above", synth_cfg.persist_above,
                    "Levels above this copy forward")
      ->capture_default_str();
  synth->add_option("--seed", synth_cfg.seed, "Random seed")->capture_default_str();

  // quantize
  fs::path q_manifest, q_out, q_boundaries_in;
  auto* quantize = app.add_subcommand("quantize", "Fit level boundaries and quantize a corpus");
  quantize->add_option("--manifest", q_manifest, "Corpus manifest")->required();
  quantize->add_option("--out", q_out, "Level grid file to write")->required();
  quantize->add_option("--boundaries", q_boundaries_in, "Reuse boundaries from this file");
  GridFlags q_grid;
  q_grid.add(quantize);

  // build
  fs::path b_levels, b_out;
  std::size_t b_p = 1;
  std::uint64_t b_seed = 0;
  BuildFlags b_flags;
  auto* build = app.add_subcommand("build", "Build and split a windowed dataset");
  build->add_option("--levels-file", b_levels, "Level grid file from 'quantize'")->required();
  build->add_option("--out", b_out, "Output directory")->required();
  build->add_option("--p", b_p, "Number of previous states")->capture_default_str();
  build->add_option("--seed", b_seed, "Shuffle seed")->capture_default_str();
  b_flags.add(build);

  // train
  fs::path t_data, t_out;
  std::uint64_t t_seed = 0;
  TrainFlags t_flags;
  auto* train = app.add_subcommand("train", "Train a forest on a built dataset and evaluate it");
  train->add_option("--data", t_data, "Directory written by 'build'")->required();
  train->add_option("--out", t_out, "Forest JSON to write")->required();
  train->add_option("--seed", t_seed, "Forest seed")->capture_default_str();
  t_flags.add(train);

  // explain
  fs::path e_forest, e_out;
  auto* explain = app.add_subcommand("explain", "Condition levels and influence of a forest");
  explain->add_option("--forest", e_forest, "Forest JSON from 'train'")->required();
  explain->add_option("--out", e_out, "Explanation JSON to write")->required();

  // pipeline
  fs::path pl_manifest, pl_out, pl_boundaries;
  std::string pl_p = "1-8";
  std::uint64_t pl_seed = 0;
  bool pl_save_forests = false;
  GridFlags pl_grid;
  BuildFlags pl_build;
  TrainFlags pl_train;
  auto* pipeline = app.add_subcommand("pipeline", "Run every stage and emit the figure tables");
  pipeline->add_option("--manifest", pl_manifest, "Corpus manifest")->required();
  pipeline->add_option("--out", pl_out, "Output directory")->required();
  pipeline->add_option("--p", pl_p, "Window sizes, e.g. 1,2,4,8 or 1-8")->capture_default_str();
  pipeline->add_option("--seed", pl_seed, "Seed for shuffling and training")
      ->capture_default_str();
  pipeline->add_option("--boundaries", pl_boundaries, "Reuse boundaries instead of fitting");
  pipeline->add_flag("--save-forests", pl_save_forests, "Also write forest_p<p>.json");
  pl_grid.add(pipeline);
  pl_build.add(pipeline);
  pl_train.add(pipeline);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      current = "synth";
      if (synth_grid.rows) synth_cfg.grid.rows = *synth_grid.rows;
      if (synth_grid.cols) synth_cfg.grid.cols = *synth_grid.cols;
      if (synth_grid.levels) synth_cfg.grid.num_levels = *synth_grid.levels;
      const auto corpus = generate_corpus(synth_cfg);
      write_synth_corpus(corpus, synth_cfg, synth_out);
      std::cout << "wrote " << corpus.matrices.size() << " matrices to " << synth_out << '\n';
    } else if (*quantize) {
      current = "load";
      auto corpus = load_corpus(q_manifest);
      if (q_grid.rows) corpus.grid.rows = *q_grid.rows;
      if (q_grid.cols) corpus.grid.cols = *q_grid.cols;
      if (q_grid.levels) corpus.grid.num_levels = *q_grid.levels;
      corpus.grid.validate();
      current = "boundaries";
      const auto bounds = q_boundaries_in.empty()
                              ? compute_decile_boundaries(corpus.matrices, corpus.grid)
                              : boundaries_from_json(read_json_file(q_boundaries_in));
      current = "quantize";
      const auto levels = quantize_corpus(corpus, bounds);
      write_levels_file(q_out, corpus.grid, bounds, levels);
      print_distribution(level_distribution(levels, corpus.grid.num_levels));
    } else if (*build) {
      current = "build";
      const auto lf = read_levels_file(b_levels);
      const auto cfg = b_flags.config(b_p, b_seed);
      const auto data = build_examples(lf.matrices, lf.grid, cfg);
      current = "split";
      const auto [tr, ev] = shuffle_split(data, cfg);
      fs::create_directories(b_out);
      write_dataset_csv(b_out / "train.csv", tr);
      write_dataset_csv(b_out / "eval.csv", ev);
      write_json_file(b_out / "dataset.json",
                      {{"build", to_json(cfg)},
                       {"grid", to_json(lf.grid)},
                       {"train_examples", tr.size()},
                       {"eval_examples", ev.size()}});
      std::cout << "train " << tr.size() << " / eval " << ev.size() << " examples, feature_dim "
                << data.feature_dim() << '\n';
    } else if (*train) {
      current = "train";
      const auto meta = read_json_file(t_data / "dataset.json");
      const auto cfg = build_config_from_json(meta.at("build"));
      const auto grid = grid_from_json(meta.at("grid"));
      const auto tr = read_dataset_csv(t_data / "train.csv", cfg, grid);
      const auto ev = read_dataset_csv(t_data / "eval.csv", cfg, grid);
      const auto forest = train_forest(tr, t_flags.config(t_seed));
      current = "evaluate";
      const auto evaluation = evaluate_by_row(forest, ev);
      auto j = forest.to_json();
      j["layout"] = to_json(FeatureLayout{cfg.p, grid.cols, cfg.mode});
      j["num_levels"] = grid.num_levels;
      write_json_file(t_out, j);
      std::cout << "eval accuracy " << evaluation.overall() << " over " << evaluation.total
                << " examples\n";
    } else if (*explain) {
      current = "explain";
      const auto j = read_json_file(e_forest);
      const auto forest = Forest::from_json(j);
      if (!j.contains("layout")) throw DataError("forest file has no layout block");
      const auto layout = feature_layout_from_json(j.at("layout"));
      const int levels = j.value("num_levels", 10);
      const auto table = explain_forest(forest, layout, levels);
      auto out = to_json(table);
      out["config"] = {{"layout", to_json(layout)}, {"forest", to_json(forest.config())}};
      write_json_file(e_out, out);
      std::cout << table.condition_count << " decision conditions\n";
    } else if (*pipeline) {
      current = "config";
      PipelineOptions opts;
      opts.p_list = parse_p_list(pl_p);
      opts.build = pl_build.config(1, pl_seed);
      opts.train = pl_train.config(pl_seed);
      opts.grid_rows = pl_grid.rows;
      opts.grid_cols = pl_grid.cols;
      opts.num_levels = pl_grid.levels;
      opts.save_forests = pl_save_forests;
      if (!pl_boundaries.empty())
        opts.boundaries = boundaries_from_json(read_json_file(pl_boundaries));
      opts.train.validate();
      current = "pipeline";
      const auto report = run_pipeline(pl_manifest, opts, pl_out);
      for (const auto& [p, acc] : report.accuracy_vs_p())
        std::cout << "p=" << p << " accuracy " << acc << '\n';
    }
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error [" << current << "]: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
