#include "attnx/forest.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <unordered_map>

namespace attnx {

void TrainConfig::validate() const {
  if (num_trees < 1) throw DataError("num_trees must be >= 1");
  if (max_depth < 1) throw DataError("max_depth must be >= 1");
  if (min_leaf < 1) throw DataError("min_leaf must be >= 1");
}

std::size_t TrainConfig::candidates_per_split(std::size_t feature_dim) const {
  if (!feature_subsample) {
    auto k = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(feature_dim))));
    return std::clamp<std::size_t>(k, 1, std::max<std::size_t>(feature_dim, 1));
  }
  if (*feature_subsample == 0 || *feature_subsample > feature_dim) return feature_dim;
  return *feature_subsample;
}

nlohmann::json to_json(const TrainConfig& cfg) {
  nlohmann::json j = {{"num_trees", cfg.num_trees},
                      {"max_depth", cfg.max_depth},
                      {"min_leaf", cfg.min_leaf},
                      {"seed", cfg.seed}};
  j["feature_subsample"] =
      cfg.feature_subsample ? nlohmann::json(*cfg.feature_subsample) : nlohmann::json(nullptr);
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.num_trees = j.at("num_trees").get<std::size_t>();
  cfg.max_depth = j.at("max_depth").get<std::size_t>();
  cfg.min_leaf = j.at("min_leaf").get<std::size_t>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("feature_subsample") && !j["feature_subsample"].is_null())
    cfg.feature_subsample = j["feature_subsample"].get<std::size_t>();
  return cfg;
}

double gini(std::uint64_t a, std::uint64_t b) {
  const double n = static_cast<double>(a + b);
  if (n == 0) return 0.0;
  return 1.0 - (static_cast<double>(a) * a + static_cast<double>(b) * b) / (n * n);
}

namespace {

using u128 = unsigned __int128;

u128 sq(std::uint64_t x) { return u128{x} * x; }

// Weighted child impurity is minimized where
//   S = (l0^2 + l1^2) / nl + (r0^2 + r1^2) / nr
// is maximized. S is kept as an exact fraction so ties compare exactly.
struct Candidate {
  std::size_t feature = 0;
  double threshold = 0.0;
  u128 num = 0;
  u128 den = 1;
  std::uint64_t left = 0;
  std::uint64_t right = 0;
};

bool better(const Candidate& a, const Candidate& b) {
  const u128 lhs = a.num * b.den;
  const u128 rhs = b.num * a.den;
  if (lhs != rhs) return lhs > rhs;
  if (a.feature != b.feature) return a.feature < b.feature;
  return a.threshold < b.threshold;
}

struct Histogram {
  std::array<std::array<std::uint64_t, 2>, 256> counts{};
  int lo = 256;
  int hi = -1;

  void add(Level v, Label y, std::uint64_t w = 1) {
    counts[v][static_cast<int>(y)] += w;
    lo = std::min<int>(lo, v);
    hi = std::max<int>(hi, v);
  }
  void clear() {
    for (int v = lo; v <= hi; ++v) counts[v] = {0, 0};
    lo = 256;
    hi = -1;
  }
  bool constant() const { return lo >= hi; }
};

// Best threshold of one feature's histogram; updates `best` when improved.
void scan_feature(const Histogram& h, std::size_t feature, std::uint64_t n0, std::uint64_t n1,
                  std::size_t min_leaf, std::optional<Candidate>& best) {
  const u128 parent = sq(n0) + sq(n1);
  const std::uint64_t n = n0 + n1;
  std::uint64_t l0 = 0, l1 = 0;
  int prev = -1;
  for (int v = h.lo; v <= h.hi; ++v) {
    const auto& c = h.counts[v];
    if (c[0] == 0 && c[1] == 0) continue;
    if (prev >= 0) {
      const std::uint64_t nl = l0 + l1;
      const std::uint64_t nr = n - nl;
      if (nl >= min_leaf && nr >= min_leaf) {
        Candidate cand;
        cand.feature = feature;
        cand.threshold = (prev + v) / 2.0;
        const std::uint64_t r0 = n0 - l0, r1 = n1 - l1;
        cand.num = (sq(l0) + sq(l1)) * nr + (sq(r0) + sq(r1)) * nl;
        cand.den = u128{nl} * nr;
        cand.left = nl;
        cand.right = nr;
        // Strictly positive gain: S > parent / n.
        if (cand.num * n > parent * cand.den && (!best || better(cand, *best))) best = cand;
      }
    }
    l0 += c[0];
    l1 += c[1];
    prev = v;
  }
}

double gain_of(const Candidate& c, std::uint64_t n0, std::uint64_t n1) {
  const std::uint64_t n = n0 + n1;
  const u128 parent = sq(n0) + sq(n1);
  const u128 diff = c.num * n - parent * c.den;
  const double nn = static_cast<double>(n);
  return static_cast<double>(diff) / (static_cast<double>(c.den) * nn * nn);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::optional<Split> best_split(const Dataset& data, std::span<const std::uint32_t> indices,
                                std::span<const std::size_t> candidate_features,
                                std::size_t min_leaf) {
  if (indices.empty()) return std::nullopt;
  std::uint64_t n0 = 0, n1 = 0;
  for (const auto i : indices) (data.label(i) == Label::High ? n1 : n0)++;
  std::optional<Candidate> best;
  Histogram h;
  for (const std::size_t f : candidate_features) {
    if (f >= data.feature_dim()) throw DataError("candidate feature out of range");
    for (const auto i : indices) h.add(data.feature(i, f), data.label(i));
    if (!h.constant()) scan_feature(h, f, n0, n1, std::max<std::size_t>(min_leaf, 1), best);
    h.clear();
  }
  if (!best) return std::nullopt;
  return Split{best->feature, best->threshold, gain_of(*best, n0, n1), best->left, best->right};
}

Tree::Tree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {
  if (nodes_.empty()) throw DataError("a tree needs at least one node");
}

const TreeNode& Tree::leaf_for(std::span<const Level> features) const {
  const TreeNode* node = &nodes_.front();
  while (!node->is_leaf()) {
    const auto v = features[static_cast<std::size_t>(node->feature)];
    node = &nodes_[v <= node->threshold ? node->left : node->right];
  }
  return *node;
}

std::size_t Tree::max_depth() const {
  std::size_t d = 0;
  for (const auto& n : nodes_) d = std::max<std::size_t>(d, n.depth);
  return d;
}

std::size_t Tree::internal_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return !n.is_leaf(); }));
}

bool Tree::operator==(const Tree& other) const {
  if (nodes_.size() != other.nodes_.size()) return false;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& a = nodes_[i];
    const auto& b = other.nodes_[i];
    if (a.feature != b.feature || a.threshold != b.threshold || a.gain != b.gain ||
        a.left != b.left || a.right != b.right || a.depth != b.depth ||
        a.count_low != b.count_low || a.count_high != b.count_high)
      return false;
  }
  return true;
}

std::uint64_t tree_seed(std::uint64_t master, std::size_t tree_index) {
  return splitmix64(splitmix64(master) ^ (0xD1B54A32D192ED03ULL * (tree_index + 1)));
}

std::vector<std::uint32_t> bootstrap_sample(std::size_t n, std::uint64_t seed) {
  std::vector<std::uint32_t> hits(n, 0);
  if (n == 0) return {};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(n - 1));
  for (std::size_t k = 0; k < n; ++k) ++hits[pick(rng)];
  std::vector<std::uint32_t> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) out.insert(out.end(), hits[i], i);
  return out;
}

namespace {

// Training examples collapsed to distinct (feature vector, label) units.
// Splits only look at counts, so a bootstrap sample is fully described by a
// weight per unit.
struct CompactData {
  std::size_t dim = 0;
  std::vector<Level> table;
  std::vector<Label> labels;
  std::vector<std::uint32_t> unit_of;  // example -> unit

  Level feature(std::uint32_t u, std::size_t f) const { return table[std::size_t{u} * dim + f]; }
};

CompactData compact(const Dataset& data) {
  CompactData c;
  c.dim = data.feature_dim();
  c.unit_of.resize(data.size());
  std::unordered_map<std::string, std::uint32_t> index;
  std::string key;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto f = data.features(i);
    key.assign(reinterpret_cast<const char*>(f.data()), f.size());
    key.push_back(static_cast<char>(data.label(i)));
    auto [it, inserted] = index.try_emplace(key, static_cast<std::uint32_t>(c.labels.size()));
    if (inserted) {
      c.table.insert(c.table.end(), f.begin(), f.end());
      c.labels.push_back(data.label(i));
    }
    c.unit_of[i] = it->second;
  }
  return c;
}

class TreeBuilder {
 public:
  TreeBuilder(const CompactData& data, const TrainConfig& cfg, std::uint64_t seed)
      : data_(data),
        cfg_(cfg),
        dim_(data.dim),
        per_split_(cfg.candidates_per_split(data.dim)),
        rng_(splitmix64(seed ^ 0x5851F42D4C957F2DULL)),
        weight_(data.labels.size(), 0),
        order_(dim_) {
    const auto sample = bootstrap_sample(data.unit_of.size(), seed);
    total_ = sample.size();
    for (const auto i : sample) ++weight_[data.unit_of[i]];
    for (std::uint32_t u = 0; u < weight_.size(); ++u)
      if (weight_[u]) units_.push_back(u);
    for (std::size_t f = 0; f < dim_; ++f) order_[f] = f;
  }

  Tree build() {
    grow(0, units_.size(), 0);
    return Tree(std::move(nodes_));
  }

 private:
  std::uint32_t grow(std::size_t begin, std::size_t end, std::uint32_t depth) {
    std::uint64_t n0 = 0, n1 = 0;
    for (std::size_t k = begin; k < end; ++k) {
      const auto u = units_[k];
      (data_.labels[u] == Label::High ? n1 : n0) += weight_[u];
    }
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    TreeNode node;
    node.depth = depth;
    node.count_low = n0;
    node.count_high = n1;
    nodes_.push_back(node);

    const std::uint64_t n = n0 + n1;
    if (depth >= cfg_.max_depth || n0 == 0 || n1 == 0 || n < 2 * cfg_.min_leaf) return id;

    const auto best = search(begin, end, n0, n1);
    if (!best) return id;

    const std::size_t f = best->feature;
    const double t = best->threshold;
    const auto mid = std::partition(units_.begin() + begin, units_.begin() + end,
                                    [&](std::uint32_t u) { return data_.feature(u, f) <= t; });
    const auto split_at = static_cast<std::size_t>(mid - units_.begin());

    nodes_[id].feature = static_cast<std::int32_t>(f);
    nodes_[id].threshold = t;
    nodes_[id].gain =
        gain_of(*best, n0, n1) * static_cast<double>(n) / static_cast<double>(total_);
    const auto left = grow(begin, split_at, depth + 1);
    const auto right = grow(split_at, end, depth + 1);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  // Draws features in random order until per_split_ non-constant ones have
  // been scored, so constant features do not use up the budget.
  std::optional<Candidate> search(std::size_t begin, std::size_t end, std::uint64_t n0,
                                  std::uint64_t n1) {
    std::optional<Candidate> best;
    std::size_t visited = 0;
    const bool sample_features = per_split_ < dim_;
    for (std::size_t i = 0; i < dim_ && visited < per_split_; ++i) {
      if (sample_features) {
        std::uniform_int_distribution<std::size_t> pick(i, dim_ - 1);
        std::swap(order_[i], order_[pick(rng_)]);
      }
      const std::size_t f = order_[i];
      for (std::size_t k = begin; k < end; ++k) {
        const auto u = units_[k];
        hist_.add(data_.feature(u, f), data_.labels[u], weight_[u]);
      }
      if (!hist_.constant()) {
        ++visited;
        scan_feature(hist_, f, n0, n1, cfg_.min_leaf, best);
      }
      hist_.clear();
    }
    return best;
  }

  const CompactData& data_;
  const TrainConfig& cfg_;
  std::size_t dim_;
  std::size_t per_split_;
  std::mt19937_64 rng_;
  std::vector<std::uint32_t> weight_;
  std::vector<std::uint32_t> units_;
  std::size_t total_ = 0;
  std::vector<std::size_t> order_;
  std::vector<TreeNode> nodes_;
  Histogram hist_;
};

}  // namespace

Tree train_tree(const Dataset& train, std::uint64_t bootstrap_seed, const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw DataError("cannot train on an empty dataset");
  const auto data = compact(train);
  return TreeBuilder(data, cfg, bootstrap_seed).build();
}

Forest train_forest(const Dataset& train, const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw DataError("cannot train on an empty dataset");
  const auto data = compact(train);
  std::vector<Tree> trees(cfg.num_trees);
  unsigned workers = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, cfg.num_trees));

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t t = next++; t < cfg.num_trees; t = next++) {
      try {
        trees[t] = TreeBuilder(data, cfg, tree_seed(cfg.seed, t)).build();
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);
  return Forest(std::move(trees), cfg, train.feature_dim());
}

Forest::Forest(std::vector<Tree> trees, TrainConfig config, std::size_t feature_dim)
    : trees_(std::move(trees)), config_(config), feature_dim_(feature_dim) {
  for (const auto& tree : trees_)
    for (const auto& node : tree.nodes())
      if (!node.is_leaf() && static_cast<std::size_t>(node.feature) >= feature_dim_)
        throw DataError("tree node references feature outside the forest's dimension");
}

Label Forest::predict(std::span<const Level> features) const {
  if (features.size() != feature_dim_)
    throw DataError("feature vector has length " + std::to_string(features.size()) +
                    ", forest expects " + std::to_string(feature_dim_));
  std::size_t high = 0;
  for (const auto& tree : trees_) high += tree.predict(features) == Label::High;
  return 2 * high > trees_.size() ? Label::High : Label::Low;
}

nlohmann::json Forest::to_json() const {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& tree : trees_) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : tree.nodes()) {
      if (n.is_leaf()) {
        nodes.push_back({{"kind", "leaf"}, {"counts", {n.count_low, n.count_high}}});
      } else {
        nodes.push_back({{"kind", "split"},
                         {"feature", n.feature},
                         {"threshold", n.threshold},
                         {"gain", n.gain},
                         {"counts", {n.count_low, n.count_high}}});
      }
    }
    trees.push_back(std::move(nodes));
  }
  return {{"config", attnx::to_json(config_)}, {"feature_dim", feature_dim_}, {"trees", trees}};
}

namespace {

// Rebuilds child links and depths from a pre-order node list.
std::uint32_t relink(const nlohmann::json& list, std::size_t& pos, std::uint32_t depth,
                     std::vector<TreeNode>& out) {
  if (pos >= list.size()) throw DataError("truncated tree in forest file");
  const auto& j = list[pos++];
  const auto id = static_cast<std::uint32_t>(out.size());
  TreeNode node;
  node.depth = depth;
  const auto counts = j.at("counts").get<std::array<std::uint64_t, 2>>();
  node.count_low = counts[0];
  node.count_high = counts[1];
  out.push_back(node);
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "leaf") return id;
  if (kind != "split") throw DataError("unknown node kind '" + kind + "'");
  out[id].feature = j.at("feature").get<std::int32_t>();
  out[id].threshold = j.at("threshold").get<double>();
  out[id].gain = j.at("gain").get<double>();
  const auto left = relink(list, pos, depth + 1, out);
  const auto right = relink(list, pos, depth + 1, out);
  out[id].left = left;
  out[id].right = right;
  return id;
}

}  // namespace

Forest Forest::from_json(const nlohmann::json& j) {
  try {
    const auto config = train_config_from_json(j.at("config"));
    const auto dim = j.at("feature_dim").get<std::size_t>();
    std::vector<Tree> trees;
    for (const auto& list : j.at("trees")) {
      std::vector<TreeNode> nodes;
      std::size_t pos = 0;
      relink(list, pos, 0, nodes);
      if (pos != list.size()) throw DataError("trailing nodes in forest file");
      trees.emplace_back(std::move(nodes));
    }
    return Forest(std::move(trees), config, dim);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed forest: ") + e.what());
  }
}

std::optional<double> Evaluation::accuracy_for(std::uint32_t row_id) const {
  const auto it = std::lower_bound(rows.begin(), rows.end(), row_id,
                                   [](const RowAccuracy& r, std::uint32_t id) {
                                     return r.row_id < id;
                                   });
  if (it == rows.end() || it->row_id != row_id || it->total == 0) return std::nullopt;
  return it->accuracy();
}

Evaluation evaluate_by_row(const Forest& forest, const Dataset& eval) {
  std::map<std::uint32_t, RowAccuracy> by_row;
  Evaluation out;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const auto& e = eval.example(i);
    const bool ok = forest.predict(eval.features(i)) == e.label;
    auto& r = by_row[e.row_id];
    r.row_id = e.row_id;
    ++r.total;
    r.correct += ok;
    ++out.total;
    out.correct += ok;
  }
  out.rows.reserve(by_row.size());
  for (const auto& [id, r] : by_row) out.rows.push_back(r);
  return out;
}

}  // namespace attnx
