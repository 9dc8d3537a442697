// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "attnx/pipeline.hpp"
#include "attnx/synthgen.hpp"
#include "split_oracle.hpp"
#include "test_util.hpp"

using namespace attnx;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// --- shared corpora -------------------------------------------------------

SynthConfig oracle_config(std::size_t order) {
  SynthConfig cfg;
  cfg.num_matrices = 200;
  cfg.grid = GridSpec{100, 40, 10};
  cfg.markov_order = order;
  cfg.noise = 0.05;
  cfg.silence_prefix = 10;
  cfg.seed = 1;
  return cfg;
}

PipelineOptions oracle_options(std::vector<std::size_t> p_list, const fs::path& corpus_dir) {
  PipelineOptions opts;
  opts.p_list = std::move(p_list);
  opts.build.mode = FeatureMode::ColumnWindow;
  opts.build.seed = 7;
  opts.train.num_trees = 100;
  opts.train.seed = 7;
  opts.boundaries = boundaries_from_json(read_json_file(corpus_dir / "boundaries.json"));
  opts.save_forests = true;
  return opts;
}

struct OracleRun {
  fs::path corpus_dir;
  fs::path out_dir;
  RunReport report;
  double seconds = 0.0;
};

// Synthesize to disk, then run the file-based pipeline on it.
OracleRun run_oracle(const TempDir& root, std::size_t order, std::vector<std::size_t> p_list,
                     const std::string& tag) {
  OracleRun run;
  run.corpus_dir = root / ("corpus_m" + std::to_string(order));
  run.out_dir = root / ("out_" + tag);
  const auto start = Clock::now();
  if (!fs::exists(run.corpus_dir / "manifest.json")) {
    const auto cfg = oracle_config(order);
    write_synth_corpus(generate_corpus(cfg), cfg, run.corpus_dir);
  }
  run.report = run_pipeline(run.corpus_dir / "manifest.json",
                            oracle_options(std::move(p_list), run.corpus_dir), run.out_dir);
  run.seconds = seconds_since(start);
  return run;
}

Forest load_forest(const OracleRun& run, std::size_t p) {
  return Forest::from_json(read_json_file(run.out_dir / ("forest_p" + std::to_string(p) + ".json")));
}

// --- criteria ---------------------------------------------------------------

Outcome quantile_correctness() {
  Outcome o;
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> w(10000);
  for (auto& x : w) x = u(rng);

  const auto start = Clock::now();
  const auto b = compute_decile_boundaries(w, 10);
  std::vector<std::size_t> counts(10, 0);
  std::vector<int> assigned(w.size());
  for (std::size_t k = 0; k < w.size(); ++k) {
    assigned[k] = b.level_of(w[k]);
    ++counts[static_cast<std::size_t>(assigned[k] - 1)];
  }
  const double secs = seconds_since(start);

  // Oracle: rank r (0-based) of the sorted sample falls in the bucket whose
  // rank range [ceil((k-1)N/L), ceil(kN/L)) contains it.
  std::vector<std::size_t> order(w.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) { return w[a] < w[c]; });
  std::vector<std::size_t> oracle_counts(10, 0);
  std::size_t mismatches = 0;
  const std::size_t n = w.size();
  for (std::size_t r = 0; r < n; ++r) {
    int level = 1;
    while (level < 10 && r >= (static_cast<std::size_t>(level) * n + 9) / 10) ++level;
    ++oracle_counts[static_cast<std::size_t>(level - 1)];
    mismatches += assigned[order[r]] != level;
  }
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  o.require(mismatches == 0, std::to_string(mismatches) + " bucket mismatches vs rank oracle");
  o.require(counts == oracle_counts, "occupancies differ from oracle");
  o.require(*hi - *lo <= 1, "per-level counts spread " + std::to_string(*hi - *lo));
  o.require(secs < 1.0, "runtime " + num(secs) + " s");
  o.note("counts " + std::to_string(*lo) + ".." + std::to_string(*hi) + ", " + num(secs, 3) + " s");
  return o;
}

Outcome split_correctness() {
  Outcome o;
  std::mt19937_64 rng(777);
  std::uniform_int_distribution<std::size_t> n_dist(1, 30), d_dist(1, 5);
  std::uniform_int_distribution<int> lv_dist(1, 10);
  std::size_t disagreements = 0, with_split = 0;
  double worst = 0.0;
  const auto start = Clock::now();
  for (int trial = 0; trial < 200; ++trial) {
    const auto inst = oracle::random_instance(rng, n_dist(rng), d_dist(rng), lv_dist(rng));
    const auto data = make_dataset(inst.features, inst.labels);
    std::vector<std::uint32_t> idx(inst.labels.size());
    std::iota(idx.begin(), idx.end(), 0u);
    std::vector<std::size_t> feats(inst.features[0].size());
    std::iota(feats.begin(), feats.end(), std::size_t{0});
    const auto got = best_split(data, idx, feats);
    const auto expected = oracle::best(oracle::all_splits(inst, idx, 1));
    if (got.has_value() != expected.has_value()) {
      ++disagreements;
      continue;
    }
    if (!got) continue;
    ++with_split;
    const double err = std::abs(got->gain - expected->gain);
    worst = std::max(worst, err);
    if (got->feature != expected->feature || got->threshold != expected->threshold || err > 1e-12)
      ++disagreements;
  }
  const double secs = seconds_since(start);
  o.require(disagreements == 0, std::to_string(disagreements) + " of 200 instances disagree");
  o.require(secs < 10.0, "runtime " + num(secs) + " s");
  o.note(std::to_string(with_split) + " instances with a split, max |gain err| " +
         sci(worst) + ", " + num(secs, 3) + " s");
  return o;
}

Outcome structural_bounds(const std::vector<const OracleRun*>& runs) {
  Outcome o;
  std::size_t forests = 0, trees = 0, leaves = 0, violations = 0, max_depth = 0;
  for (const auto* run : runs) {
    for (const auto& w : run->report.windows) {
      const auto forest = load_forest(*run, w.p);
      const auto& cfg = forest.config();
      ++forests;
      for (const auto& tree : forest.trees()) {
        ++trees;
        const auto nodes = tree.nodes();
        max_depth = std::max(max_depth, tree.max_depth());
        if (tree.max_depth() > 64 || tree.max_depth() > cfg.max_depth) ++violations;
        for (const auto& node : nodes) {
          if (node.is_leaf()) {
            ++leaves;
            continue;
          }
          for (const auto child : {node.left, node.right}) {
            const auto& c = nodes[child];
            if (c.is_leaf() && node.total() >= 2 * cfg.min_leaf && c.total() < cfg.min_leaf)
              ++violations;
          }
        }
      }
    }
  }
  o.require(violations == 0, std::to_string(violations) + " depth/leaf violations");
  o.require(forests > 0, "no forests inspected");
  o.note(std::to_string(forests) + " forests, " + std::to_string(trees) + " trees, " +
         std::to_string(leaves) + " leaves, max depth " + std::to_string(max_depth));
  return o;
}

Outcome order1_recovery(const OracleRun& p1, const OracleRun& p4) {
  Outcome o;
  const auto& w1 = p1.report.window(1);
  const double acc = w1.evaluation.overall();
  o.require(acc >= 0.90, "overall accuracy " + num(acc));

  const auto strict_max_first = [](const std::vector<double>& v) {
    for (std::size_t k = 1; k < v.size(); ++k)
      if (!(v[0] > v[k])) return false;
    return !v.empty() && v[0] > 0.0;
  };
  o.require(strict_max_first(w1.influence.per_interval), "p=1 interval 1 not the strict maximum");
  const auto& pi4 = p4.report.window(4).influence.per_interval;
  o.require(strict_max_first(pi4), "p=4 interval 1 not the strict maximum");

  double worst_silence = 1.0;
  for (std::uint32_t row = 1; row <= 10; ++row) {
    const auto a = w1.evaluation.accuracy_for(row);
    o.require(a.has_value(), "no eval examples for row " + std::to_string(row));
    if (a) worst_silence = std::min(worst_silence, *a);
  }
  o.require(worst_silence >= 0.95, "silence-row accuracy " + num(worst_silence));
  o.require(p1.seconds < 300.0, "runtime " + num(p1.seconds, 1) + " s");

  std::string intervals;
  for (const auto v : pi4) intervals += (intervals.empty() ? "" : "/") + num(v, 3);
  o.note("accuracy " + num(acc) + ", min silence-row accuracy " + num(worst_silence) +
         ", p=4 per_interval " + intervals + ", " + num(p1.seconds, 1) + " s");
  return o;
}

Outcome order4_recovery(const OracleRun& run) {
  Outcome o;
  const auto acc = run.report.accuracy_vs_p();
  for (std::size_t p = 1; p <= 8; ++p)
    if (!acc.count(p)) o.require(false, "missing p=" + std::to_string(p));
  if (!o.pass) return o;
  const double gain = acc.at(4) - acc.at(1);
  o.require(gain >= 0.03, "p=1->4 gain " + num(gain));
  double lo = acc.at(4), hi = acc.at(4);
  for (std::size_t p = 5; p <= 8; ++p) {
    lo = std::min(lo, acc.at(p));
    hi = std::max(hi, acc.at(p));
  }
  o.require(hi - lo <= 0.02, "spread over p=4..8 is " + num(hi - lo));
  o.require(run.seconds < 1200.0, "runtime " + num(run.seconds, 1) + " s");
  std::string curve;
  for (const auto& [p, a] : acc) curve += (curve.empty() ? "" : " ") + num(a, 3);
  o.note("accuracy_vs_p " + curve + ", " + num(run.seconds, 1) + " s");
  return o;
}

Outcome condition_signature(const OracleRun& run) {
  Outcome o;
  const auto& freq = run.report.window(1).influence.level_frequencies;
  const auto total = std::accumulate(freq.begin(), freq.end(), std::uint64_t{0});
  const auto top = freq[7] + freq[8] + freq[9];
  const double share = total ? static_cast<double>(top) / static_cast<double>(total) : 0.0;
  o.require(share >= 0.40, "levels 8-10 hold " + num(share) + " of conditions");
  std::string hist;
  for (const auto c : freq) hist += (hist.empty() ? "" : " ") + std::to_string(c);
  o.note("share " + num(share) + " of " + std::to_string(total) + " conditions; levels 1..10: " +
         hist);
  return o;
}

Outcome determinism(const TempDir& root, const OracleRun& first) {
  Outcome o;
  const auto again = run_oracle(root, 1, {1}, "m1_p1_again");
  const auto a = slurp(first.out_dir / "report.json");
  const auto b = slurp(again.out_dir / "report.json");
  o.require(!a.empty() && a == b, "report.json differs between runs");
  o.note(std::to_string(a.size()) + " bytes compared");
  return o;
}

Outcome conservation(const OracleRun& run) {
  Outcome o;
  // fig2 sums to matrices * grid cells.
  std::ifstream fig2(run.out_dir / "fig2_level_distribution.csv");
  std::string line;
  std::getline(fig2, line);
  std::uint64_t cells = 0;
  while (std::getline(fig2, line)) cells += std::stoull(line.substr(line.find(',') + 1));
  const std::uint64_t expected_cells = 200ull * 100 * 40;
  o.require(cells == expected_cells, "fig2 sums to " + std::to_string(cells));

  // Gain shares of every saved forest.
  double worst = 0.0;
  for (const auto& w : run.report.windows) {
    const auto forest = load_forest(run, w.p);
    const auto records =
        harvest_conditions(forest, FeatureLayout{w.p, 40, FeatureMode::ColumnWindow});
    double sum = 0.0;
    for (const auto& r : records) sum += r.gain_share;
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  o.require(worst <= 1e-9, "gain_share sum off by " + sci(worst));

  // Split preserves the example multiset: every canonical example appears
  // once across train and eval with its original features and label.
  const auto corpus = load_corpus(run.corpus_dir / "manifest.json");
  const auto levels = quantize_corpus(
      corpus, boundaries_from_json(read_json_file(run.corpus_dir / "boundaries.json")));
  BuildConfig cfg;
  cfg.p = 3;
  cfg.mode = FeatureMode::ColumnWindow;
  cfg.seed = 7;
  const auto data = build_examples(levels, corpus.grid, cfg);
  const auto [train, eval] = shuffle_split(data, cfg);
  const std::size_t per_matrix = 100 * 40;
  std::vector<std::uint8_t> seen(data.size(), 0);
  std::size_t bad = 0;
  for (const Dataset* part : {&train, &eval}) {
    for (std::size_t k = 0; k < part->size(); ++k) {
      const auto& e = part->example(k);
      const std::size_t pos =
          std::size_t{e.utterance} * per_matrix + (e.row_id - 1) * 40 + (e.col_id - 1);
      if (pos >= seen.size()) {
        ++bad;
        continue;
      }
      ++seen[pos];
      const auto a = part->features(k);
      const auto b = data.features(pos);
      if (part->label(k) != data.label(pos) || !std::equal(a.begin(), a.end(), b.begin(), b.end()))
        ++bad;
    }
  }
  const auto missing = std::count_if(seen.begin(), seen.end(), [](std::uint8_t s) { return s != 1; });
  o.require(train.size() + eval.size() == data.size(), "split changed the example count");
  o.require(bad == 0 && missing == 0, "split multiset differs (" + std::to_string(bad) + " bad, " +
                                          std::to_string(missing) + " not seen once)");
  o.note("fig2 " + std::to_string(cells) + " cells, max |share sum - 1| " + sci(worst) +
         ", " + std::to_string(data.size()) + " examples split " + std::to_string(train.size()) +
         "/" + std::to_string(eval.size()));
  return o;
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](const std::string& name, const std::function<Outcome()>& body) {
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << std::endl;
  };

  report("quantile correctness", quantile_correctness);
  report("split-search correctness", split_correctness);

  TempDir root("acceptance");
  std::optional<OracleRun> m1_p1, m1_p4, m4;
  auto guarded = [&](std::optional<OracleRun>& slot, std::size_t order, std::vector<std::size_t> p,
                     const std::string& tag) -> std::string {
    try {
      slot = run_oracle(root, order, std::move(p), tag);
      return {};
    } catch (const std::exception& e) {
      return e.what();
    }
  };
  const auto err_m1 = guarded(m1_p1, 1, {1}, "m1_p1");
  const auto err_m1p4 = guarded(m1_p4, 1, {4}, "m1_p4");
  const auto err_m4 = guarded(m4, 4, {1, 2, 3, 4, 5, 6, 7, 8}, "m4");
  auto need = [](const std::optional<OracleRun>& r, const std::string& err) {
    if (!r) throw std::runtime_error("pipeline run failed: " + err);
    return &*r;
  };

  report("structural bounds", [&] {
    return structural_bounds({need(m1_p1, err_m1), need(m1_p4, err_m1p4), need(m4, err_m4)});
  });
  report("oracle recovery, order 1",
         [&] { return order1_recovery(*need(m1_p1, err_m1), *need(m1_p4, err_m1p4)); });
  report("oracle recovery, order 4", [&] { return order4_recovery(*need(m4, err_m4)); });
  report("condition signature", [&] { return condition_signature(*need(m1_p1, err_m1)); });
  report("determinism", [&] { return determinism(root, *need(m1_p1, err_m1)); });
  report("conservation identities", [&] { return conservation(*need(m4, err_m4)); });

  std::cout << (failures ? std::to_string(failures) + " criterion(s) failed" : "all criteria passed")
            << std::endl;
  return failures ? 1 : 0;
}
