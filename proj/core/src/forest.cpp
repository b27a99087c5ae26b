#include "tutorfx/forest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>

#include "tutorfx/digest.hpp"
#include "tutorfx/error.hpp"
#include "tutorfx/parallel.hpp"
#include "tutorfx/rng.hpp"

namespace tfx {

using Eigen::MatrixXd;

void ForestConfig::validate() const {
  if (n_trees < 1) throw Error(ErrorCode::ConfigError, "forest.n_trees must be >= 1");
  if (!(honesty_fraction > 0.0 && honesty_fraction < 1.0)) {
    throw Error(ErrorCode::ConfigError, "forest.honesty_fraction must be in (0,1)");
  }
  if (!(subsample_fraction > 0.0 && subsample_fraction < 1.0)) {
    throw Error(ErrorCode::ConfigError, "forest.subsample_fraction must be in (0,1)");
  }
  if (min_leaf < 1) throw Error(ErrorCode::ConfigError, "forest.min_leaf must be >= 1");
  if (mtry && *mtry < 1) throw Error(ErrorCode::ConfigError, "forest.mtry must be >= 1");
  if (max_bins < 2 || max_bins > 65536) throw Error(ErrorCode::ConfigError, "forest.max_bins must be in [2, 65536]");
}

std::size_t ForestConfig::mtry_for(std::size_t p) const {
  const std::size_t m = mtry ? *mtry : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(p))));
  return std::clamp<std::size_t>(m, 1, std::max<std::size_t>(p, 1));
}

nlohmann::json ForestConfig::to_json() const {
  nlohmann::json j = {{"n_trees", n_trees},
                      {"honesty", honesty},
                      {"honesty_fraction", honesty_fraction},
                      {"subsample_fraction", subsample_fraction},
                      {"min_leaf", min_leaf},
                      {"max_bins", max_bins},
                      {"seed", seed}};
  j["mtry"] = mtry ? nlohmann::json(*mtry) : nlohmann::json(nullptr);
  j["max_depth"] = max_depth ? nlohmann::json(*max_depth) : nlohmann::json(nullptr);
  return j;
}

ForestConfig ForestConfig::from_json(const nlohmann::json& j) {
  ForestConfig c;
  c.n_trees = j.value("n_trees", c.n_trees);
  c.honesty = j.value("honesty", c.honesty);
  c.honesty_fraction = j.value("honesty_fraction", c.honesty_fraction);
  c.subsample_fraction = j.value("subsample_fraction", c.subsample_fraction);
  c.min_leaf = j.value("min_leaf", c.min_leaf);
  c.max_bins = j.value("max_bins", c.max_bins);
  c.seed = j.value("seed", c.seed);
  if (j.contains("mtry") && !j["mtry"].is_null()) c.mtry = j["mtry"].get<std::size_t>();
  if (j.contains("max_depth") && !j["max_depth"].is_null()) c.max_depth = j["max_depth"].get<std::size_t>();
  return c;
}

int Tree::leaf_of(const double* x, Eigen::Index stride) const {
  int n = 0;
  while (!nodes[static_cast<std::size_t>(n)].is_leaf()) {
    const auto& node = nodes[static_cast<std::size_t>(n)];
    n = x[node.feature * stride] <= node.threshold ? node.left : node.right;
  }
  return n;
}

std::optional<std::uint32_t> Forest::cluster_index(const std::string& id) const {
  auto it = std::lower_bound(clusters.begin(), clusters.end(), id);
  if (it == clusters.end() || *it != id) return std::nullopt;
  return static_cast<std::uint32_t>(it - clusters.begin());
}

namespace {

struct TrainData {
  const MatrixXd& X;
  std::span<const double> y;
  std::span<const double> z;  // empty for regression
  std::vector<std::string> cluster_ids;
  std::vector<std::uint32_t> row_cluster;
  std::vector<std::vector<std::uint32_t>> rows_by_cluster;
  double global_tau = 0.0;

  TrainData(const MatrixXd& X_, std::span<const double> y_, std::span<const double> z_,
            std::span<const std::string> clusters)
      : X(X_), y(y_), z(z_) {
    const auto n = static_cast<std::size_t>(X.rows());
    if (y.size() != n || clusters.size() != n || (!z.empty() && z.size() != n)) {
      throw Error(ErrorCode::LengthMismatch, "forest inputs differ in length");
    }
    if (!X.allFinite()) throw Error(ErrorCode::MalformedRecord, "covariate matrix has non-finite entries");
    cluster_ids.assign(clusters.begin(), clusters.end());
    std::sort(cluster_ids.begin(), cluster_ids.end());
    cluster_ids.erase(std::unique(cluster_ids.begin(), cluster_ids.end()), cluster_ids.end());
    rows_by_cluster.resize(cluster_ids.size());
    row_cluster.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::uint32_t>(
          std::lower_bound(cluster_ids.begin(), cluster_ids.end(), clusters[i]) - cluster_ids.begin());
      row_cluster[i] = c;
      rows_by_cluster[c].push_back(static_cast<std::uint32_t>(i));
    }
    if (!z.empty()) {
      double szz = 0.0, szy = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        szz += z[i] * z[i];
        szy += z[i] * y[i];
      }
      if (!(szz > 0.0)) {
        throw Error(ErrorCode::InsufficientVariation, "residualized treatment has zero variance at the root");
      }
      global_tau = szy / szz;
    }
  }

  std::vector<std::uint32_t> rows_of(const std::vector<std::uint32_t>& cluster_set) const {
    std::vector<std::uint32_t> rows;
    for (auto c : cluster_set) rows.insert(rows.end(), rows_by_cluster[c].begin(), rows_by_cluster[c].end());
    std::sort(rows.begin(), rows.end());
    return rows;
  }
};

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double score = 0.0;
};

double midpoint(double lo, double hi) {
  const double m = lo + (hi - lo) / 2.0;
  return m < hi ? m : lo;
}

// Per-feature bins, computed once per forest. A feature with at most max_bins
// distinct values gets one bin per value; otherwise bins hold roughly equal
// numbers of rows. A split after bin b puts the cut halfway between the
// largest value in b and the smallest value of the next bin occupied in the node.
struct Binning {
  std::vector<std::uint16_t> code;      // column-major, code[f * n + r]
  std::vector<std::vector<double>> lo;  // smallest value per bin
  std::vector<std::vector<double>> hi;  // largest value per bin
  std::size_t n = 0;

  std::uint16_t at(std::uint32_t r, int f) const { return code[static_cast<std::size_t>(f) * n + r]; }
  std::size_t bins(int f) const { return lo[static_cast<std::size_t>(f)].size(); }
};

Binning make_bins(const MatrixXd& X, std::size_t max_bins) {
  Binning b;
  b.n = static_cast<std::size_t>(X.rows());
  const auto p = static_cast<std::size_t>(X.cols());
  b.code.resize(b.n * p);
  b.lo.resize(p);
  b.hi.resize(p);
  parallel_for(p, [&](std::size_t f) {
    const double* col = X.data() + static_cast<Eigen::Index>(f) * X.rows();
    std::vector<double> v(col, col + b.n);
    std::sort(v.begin(), v.end());
    // upper edges: last value of each bin
    std::vector<double> edges;
    std::vector<double> distinct = v;
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() <= max_bins) {
      edges = distinct;
    } else {
      for (std::size_t k = 1; k <= max_bins; ++k) {
        const double e = v[std::min(b.n - 1, (k * b.n) / max_bins - 1)];
        if (edges.empty() || e > edges.back()) edges.push_back(e);
      }
      if (edges.back() < v.back()) edges.push_back(v.back());
    }
    auto& lo = b.lo[f];
    auto& hi = b.hi[f];
    lo.assign(edges.size(), 0.0);
    hi.assign(edges.size(), 0.0);
    std::vector<char> seen(edges.size(), 0);
    for (std::size_t r = 0; r < b.n; ++r) {
      const auto k = static_cast<std::size_t>(std::lower_bound(edges.begin(), edges.end(), col[r]) - edges.begin());
      b.code[f * b.n + r] = static_cast<std::uint16_t>(k);
      if (!seen[k]) {
        lo[k] = hi[k] = col[r];
        seen[k] = 1;
      } else {
        lo[k] = std::min(lo[k], col[r]);
        hi[k] = std::max(hi[k], col[r]);
      }
    }
  });
  return b;
}

class TreeGrower {
 public:
  TreeGrower(const TrainData& d, const Binning& bins, const ForestConfig& cfg, ForestKind kind, Rng& rng)
      : d_(d), bins_(bins), cfg_(cfg), kind_(kind), rng_(rng),
        mtry_(cfg.mtry_for(static_cast<std::size_t>(d.X.cols()))) {}

  std::vector<TreeNode> grow(std::vector<std::uint32_t> rows) {
    nodes_.clear();
    build(std::move(rows), 0);
    return std::move(nodes_);
  }

 private:
  struct Bucket {
    std::uint32_t bin = 0;
    std::uint32_t n = 0;
    std::uint32_t treated = 0;
    double sum = 0.0;
  };

  const TrainData& d_;
  const Binning& bins_;
  const ForestConfig& cfg_;
  ForestKind kind_;
  Rng& rng_;
  std::size_t mtry_;
  std::vector<TreeNode> nodes_;
  std::vector<double> value_;  // per node row: y (regression) or pseudo-outcome (causal)
  std::vector<Bucket> hist_, buckets_;
  std::vector<std::pair<std::uint16_t, std::uint32_t>> pairs_;

  int build(std::vector<std::uint32_t> rows, std::size_t depth) {
    const int idx = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    if (cfg_.max_depth && depth >= *cfg_.max_depth) return idx;
    if (rows.size() < 2 * cfg_.min_leaf) return idx;
    const Split s = best_split(rows);
    if (s.feature < 0) return idx;

    std::vector<std::uint32_t> left, right;
    for (auto r : rows) (d_.X(r, s.feature) <= s.threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    nodes_[static_cast<std::size_t>(idx)].feature = s.feature;
    nodes_[static_cast<std::size_t>(idx)].threshold = s.threshold;
    const int l = build(std::move(left), depth + 1);
    const int r = build(std::move(right), depth + 1);
    nodes_[static_cast<std::size_t>(idx)].left = l;
    nodes_[static_cast<std::size_t>(idx)].right = r;
    return idx;
  }

  std::vector<int> candidate_features() {
    const auto p = static_cast<std::size_t>(d_.X.cols());
    std::vector<int> f(p);
    std::iota(f.begin(), f.end(), 0);
    for (std::size_t i = 0; i < mtry_; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, p - 1);
      std::swap(f[i], f[pick(rng_)]);
    }
    f.resize(mtry_);
    std::sort(f.begin(), f.end());
    return f;
  }

  bool treated(std::uint32_t r) const { return kind_ == ForestKind::Causal && d_.z[r] > 0.0; }

  // Occupied bins of feature f among the node's rows, in bin order.
  void collect(const std::vector<std::uint32_t>& rows, int f) {
    buckets_.clear();
    const std::size_t B = bins_.bins(f);
    if (rows.size() * 8 < B) {
      pairs_.clear();
      for (std::size_t k = 0; k < rows.size(); ++k) pairs_.emplace_back(bins_.at(rows[k], f), static_cast<std::uint32_t>(k));
      std::sort(pairs_.begin(), pairs_.end());
      for (const auto& [bin, k] : pairs_) {
        if (buckets_.empty() || buckets_.back().bin != bin) buckets_.push_back({bin, 0, 0, 0.0});
        auto& b = buckets_.back();
        ++b.n;
        b.treated += treated(rows[k]) ? 1 : 0;
        b.sum += value_[k];
      }
      return;
    }
    hist_.assign(B, Bucket{});
    for (std::size_t k = 0; k < rows.size(); ++k) {
      auto& b = hist_[bins_.at(rows[k], f)];
      ++b.n;
      b.treated += treated(rows[k]) ? 1 : 0;
      b.sum += value_[k];
    }
    for (std::size_t bin = 0; bin < B; ++bin) {
      if (hist_[bin].n == 0) continue;
      buckets_.push_back(hist_[bin]);
      buckets_.back().bin = static_cast<std::uint32_t>(bin);
    }
  }

  Split best_split(const std::vector<std::uint32_t>& rows) {
    const std::size_t n = rows.size();
    value_.resize(n);
    std::size_t n_treated = 0;
    Split best;
    if (kind_ == ForestKind::Regression) {
      for (std::size_t k = 0; k < n; ++k) value_[k] = d_.y[rows[k]];
      const auto [lo, hi] = std::minmax_element(value_.begin(), value_.end());
      if (*lo == *hi) return best;  // nothing to explain; rounding could otherwise fake a gain
    } else {
      double szz = 0.0, szy = 0.0;
      for (auto r : rows) {
        szz += d_.z[r] * d_.z[r];
        szy += d_.z[r] * d_.y[r];
        n_treated += d_.z[r] > 0.0 ? 1 : 0;
      }
      if (!(szz > 0.0)) return best;  // inherits the parent estimate
      if (n_treated < cfg_.min_leaf || n - n_treated < cfg_.min_leaf) return best;
      const double tau_parent = szy / szz;
      const double mean_zz = szz / static_cast<double>(n);
      for (std::size_t k = 0; k < n; ++k) {
        const auto r = rows[k];
        value_[k] = d_.z[r] * (d_.y[r] - d_.z[r] * tau_parent) / mean_zz;
      }
    }
    double total = 0.0;
    for (double v : value_) total += v;
    if (kind_ == ForestKind::Regression) {
      const double parent = total * total / static_cast<double>(n);
      best.score = parent + 1e-12 * (1.0 + std::abs(parent));
    } else {
      best.score = 1e-12;
    }
    for (int f : candidate_features()) {
      collect(rows, f);
      double left_sum = 0.0;
      std::size_t nl = 0, left_treated = 0;
      for (std::size_t k = 0; k + 1 < buckets_.size(); ++k) {
        left_sum += buckets_[k].sum;
        nl += buckets_[k].n;
        left_treated += buckets_[k].treated;
        const std::size_t nr = n - nl;
        if (kind_ == ForestKind::Regression) {
          if (nl < cfg_.min_leaf || nr < cfg_.min_leaf) continue;
        } else {
          const std::size_t right_treated = n_treated - left_treated;
          if (left_treated < cfg_.min_leaf || nl - left_treated < cfg_.min_leaf) continue;
          if (right_treated < cfg_.min_leaf || nr - right_treated < cfg_.min_leaf) continue;
        }
        const double right_sum = total - left_sum;
        const double score = left_sum * left_sum / static_cast<double>(nl) +
                             right_sum * right_sum / static_cast<double>(nr);
        if (score > best.score) {
          const auto fi = static_cast<std::size_t>(f);
          best = {f, midpoint(bins_.hi[fi][buckets_[k].bin], bins_.lo[fi][buckets_[k + 1].bin]), score};
        }
      }
    }
    return best;
  }
};

// Honest node values from the estimation half; nodes without a valid estimate inherit their parent's.
void estimate_nodes(Tree& tree, const TrainData& d, const std::vector<std::uint32_t>& est_rows,
                    ForestKind kind, std::size_t min_leaf) {
  const std::size_t N = tree.nodes.size();
  std::vector<double> s1(N, 0.0), s2(N, 0.0);
  std::vector<std::size_t> count(N, 0), treated(N, 0);
  const Eigen::Index stride = d.X.rows();
  for (auto r : est_rows) {
    int n = 0;
    while (true) {
      const auto u = static_cast<std::size_t>(n);
      ++count[u];
      if (kind == ForestKind::Regression) {
        s1[u] += d.y[r];
      } else {
        s1[u] += d.z[r] * d.y[r];
        s2[u] += d.z[r] * d.z[r];
        treated[u] += d.z[r] > 0.0 ? 1 : 0;
      }
      const auto& node = tree.nodes[u];
      if (node.is_leaf()) break;
      n = d.X.data()[r + node.feature * stride] <= node.threshold ? node.left : node.right;
    }
  }
  std::function<void(int, double)> assign = [&](int n, double inherited) {
    const auto u = static_cast<std::size_t>(n);
    auto& node = tree.nodes[u];
    node.n_est = count[u];
    double value = inherited;
    if (kind == ForestKind::Regression) {
      if (count[u] > 0) value = s1[u] / static_cast<double>(count[u]);
    } else if (s2[u] > 0.0 && treated[u] >= min_leaf && count[u] - treated[u] >= min_leaf) {
      value = s1[u] / s2[u];
    }
    node.value = value;
    if (!node.is_leaf()) {
      assign(node.left, value);
      assign(node.right, value);
    }
  };
  assign(0, kind == ForestKind::Regression ? 0.0 : d.global_tau);
}

Tree grow_tree(const TrainData& d, const Binning& bins,
               const ForestConfig& cfg, ForestKind kind, std::size_t tree_index) {
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(tree_index)));
  const std::size_t G = d.cluster_ids.size();
  std::vector<std::uint32_t> order(G);
  std::iota(order.begin(), order.end(), 0u);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t need = cfg.honesty ? 2 : 1;
  const auto k = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(cfg.subsample_fraction * static_cast<double>(G))), need, G - 1);

  Tree tree;
  if (cfg.honesty) {
    const auto k_split = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(cfg.honesty_fraction * static_cast<double>(k))), 1, k - 1);
    tree.split_half.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k_split));
    tree.est_half.assign(order.begin() + static_cast<std::ptrdiff_t>(k_split),
                         order.begin() + static_cast<std::ptrdiff_t>(k));
  } else {
    tree.split_half.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    tree.est_half = tree.split_half;
  }
  std::sort(tree.split_half.begin(), tree.split_half.end());
  std::sort(tree.est_half.begin(), tree.est_half.end());
  tree.in_sample.assign(G, 0);
  for (auto c : tree.split_half) tree.in_sample[c] = 1;
  for (auto c : tree.est_half) tree.in_sample[c] = 1;

  TreeGrower grower(d, bins, cfg, kind, rng);
  tree.nodes = grower.grow(d.rows_of(tree.split_half));
  estimate_nodes(tree, d, d.rows_of(tree.est_half), kind, cfg.min_leaf);
  return tree;
}

Forest train(const TrainData& d, const ForestConfig& cfg, ForestKind kind) {
  cfg.validate();
  if (d.cluster_ids.size() < (cfg.honesty ? 3u : 2u)) {
    throw Error(ErrorCode::DegenerateSplit, "forest needs more clusters than one subsample can hold");
  }
  Forest f;
  f.kind = kind;
  f.config = cfg;
  f.n_features = static_cast<std::size_t>(d.X.cols());
  f.clusters = d.cluster_ids;
  f.trees.resize(cfg.n_trees);
  const Binning bins = make_bins(d.X, cfg.max_bins);
  parallel_for(cfg.n_trees, [&](std::size_t t) { f.trees[t] = grow_tree(d, bins, cfg, kind, t); });
  if (kind == ForestKind::Regression && !d.y.empty()) {
    f.degenerate_target = std::all_of(d.y.begin(), d.y.end(), [&](double v) { return v == d.y[0]; });
  }
  return f;
}

ForestPrediction predict(const Forest& forest, const MatrixXd& X, std::span<const std::string> clusters) {
  const auto n = static_cast<std::size_t>(X.rows());
  if (clusters.size() != n) throw Error(ErrorCode::LengthMismatch, "clusters and covariates differ in length");
  if (static_cast<std::size_t>(X.cols()) != forest.n_features) {
    throw Error(ErrorCode::LengthMismatch, "covariate matrix has " + std::to_string(X.cols()) +
                                               " columns, forest expects " + std::to_string(forest.n_features));
  }
  ForestPrediction out;
  out.values.assign(n, 0.0);
  out.n_trees_used.assign(n, 0);
  constexpr std::size_t kBlock = 256;
  const std::size_t n_blocks = (n + kBlock - 1) / kBlock;
  parallel_for(n_blocks, [&](std::size_t b) {
    for (std::size_t i = b * kBlock; i < std::min(n, (b + 1) * kBlock); ++i) {
      const auto c = forest.cluster_index(clusters[i]);
      double sum = 0.0;
      std::size_t used = 0;
      for (const auto& tree : forest.trees) {
        if (c && tree.in_sample[*c]) continue;
        sum += tree.nodes[static_cast<std::size_t>(tree.leaf_of(X.data() + i, X.rows()))].value;
        ++used;
      }
      out.n_trees_used[i] = used;
      out.values[i] = used ? sum / static_cast<double>(used) : 0.0;
    }
  });
  const auto uncovered = std::count(out.n_trees_used.begin(), out.n_trees_used.end(), std::size_t{0});
  if (uncovered > 0) {
    throw Error(ErrorCode::NoOobCoverage,
                std::to_string(uncovered) + " units fall in every tree's subsample");
  }
  return out;
}

}  // namespace

Forest train_regression_forest(const MatrixXd& X, std::span<const double> target,
                               std::span<const std::string> clusters, const ForestConfig& cfg) {
  const TrainData d(X, target, {}, clusters);
  return train(d, cfg, ForestKind::Regression);
}

ForestPrediction oob_predict(const Forest& forest, const MatrixXd& X, std::span<const std::string> clusters) {
  return predict(forest, X, clusters);
}

Forest train_causal_forest(const MatrixXd& X, std::span<const double> y_tilde, std::span<const double> z_tilde,
                           std::span<const std::string> clusters, const ForestConfig& cfg) {
  if (z_tilde.size() != y_tilde.size()) throw Error(ErrorCode::LengthMismatch, "y_tilde and z_tilde differ in length");
  const TrainData d(X, y_tilde, z_tilde, clusters);
  return train(d, cfg, ForestKind::Causal);
}

ForestPrediction predict_cate(const Forest& forest, const MatrixXd& X, std::span<const std::string> clusters) {
  return predict(forest, X, clusters);
}

Forest refit_leaves(Forest forest, const MatrixXd& X, std::span<const double> y, std::span<const double> z_tilde,
                    std::span<const std::string> clusters) {
  const TrainData d(X, y, forest.kind == ForestKind::Causal ? z_tilde : std::span<const double>{}, clusters);
  if (d.cluster_ids != forest.clusters) {
    throw Error(ErrorCode::LengthMismatch, "refit data has different clusters than training");
  }
  for (auto& tree : forest.trees) estimate_nodes(tree, d, d.rows_of(tree.est_half), forest.kind, forest.config.min_leaf);
  return forest;
}

ForestConfig tune_regression_forest(const MatrixXd& X, std::span<const double> target,
                                    std::span<const std::string> clusters, const ForestConfig& base) {
  const auto p = static_cast<std::size_t>(X.cols());
  const std::size_t sqrt_p = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(p))));
  const std::size_t third_p = std::max<std::size_t>(1, (p + 2) / 3);
  double mean = 0.0;
  for (double v : target) mean += v;
  mean /= static_cast<double>(target.size());
  double var = 0.0;
  for (double v : target) var += (v - mean) * (v - mean);

  ForestConfig best = base;
  double best_r2 = -std::numeric_limits<double>::infinity();
  for (std::size_t min_leaf : {5, 20, 50}) {
    for (std::size_t mtry : {sqrt_p, third_p}) {
      ForestConfig cfg = base;
      cfg.min_leaf = min_leaf;
      cfg.mtry = mtry;
      const auto pred = oob_predict(train_regression_forest(X, target, clusters, cfg), X, clusters);
      double sse = 0.0;
      for (std::size_t i = 0; i < target.size(); ++i) sse += (target[i] - pred.values[i]) * (target[i] - pred.values[i]);
      const double r2 = var > 0.0 ? 1.0 - sse / var : 0.0;
      if (r2 > best_r2) {
        best_r2 = r2;
        best = cfg;
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// serialization

namespace {

nlohmann::json forest_body(const Forest& f) {
  nlohmann::json j;
  j["format"] = "tutorfx-forest";
  j["version"] = 1;
  j["kind"] = f.kind == ForestKind::Regression ? "regression" : "causal";
  j["config"] = f.config.to_json();
  j["n_features"] = f.n_features;
  j["clusters"] = f.clusters;
  j["degenerate_target"] = f.degenerate_target;
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : f.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value, n.n_est});
    trees.push_back({{"split_half", t.split_half}, {"est_half", t.est_half}, {"nodes", nodes}});
  }
  j["trees"] = trees;
  return j;
}

}  // namespace

nlohmann::json Forest::to_json() const {
  nlohmann::json j = forest_body(*this);
  j["checksum"] = sha256_hex(j.dump());
  return j;
}

Forest Forest::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "tutorfx-forest" || j.value("version", 0) != 1) {
    throw Error(ErrorCode::ChecksumMismatch, "not a version-1 forest checkpoint");
  }
  nlohmann::json body = j;
  body.erase("checksum");
  if (sha256_hex(body.dump()) != j.value("checksum", "")) {
    throw Error(ErrorCode::ChecksumMismatch, "forest checkpoint checksum does not match its contents");
  }
  Forest f;
  f.kind = j.at("kind") == "causal" ? ForestKind::Causal : ForestKind::Regression;
  f.config = ForestConfig::from_json(j.at("config"));
  f.n_features = j.at("n_features").get<std::size_t>();
  f.clusters = j.at("clusters").get<std::vector<std::string>>();
  f.degenerate_target = j.value("degenerate_target", false);
  for (const auto& tj : j.at("trees")) {
    Tree t;
    t.split_half = tj.at("split_half").get<std::vector<std::uint32_t>>();
    t.est_half = tj.at("est_half").get<std::vector<std::uint32_t>>();
    for (const auto& nj : tj.at("nodes")) {
      TreeNode n;
      n.feature = nj.at(0).get<int>();
      n.threshold = nj.at(1).get<double>();
      n.left = nj.at(2).get<int>();
      n.right = nj.at(3).get<int>();
      n.value = nj.at(4).get<double>();
      n.n_est = nj.at(5).get<std::size_t>();
      t.nodes.push_back(n);
    }
    t.in_sample.assign(f.clusters.size(), 0);
    for (auto c : t.split_half) t.in_sample.at(c) = 1;
    for (auto c : t.est_half) t.in_sample.at(c) = 1;
    f.trees.push_back(std::move(t));
  }
  return f;
}

void Forest::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << to_json().dump() << '\n';
}

Forest Forest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingUpstreamArtifact, "cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ChecksumMismatch, path.string() + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json Forest::cluster_diagnostics() const {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t t = 0; t < trees.size(); ++t) {
    std::vector<std::string> split, est;
    for (auto c : trees[t].split_half) split.push_back(clusters[c]);
    for (auto c : trees[t].est_half) est.push_back(clusters[c]);
    out.push_back({{"tree", t}, {"split_half", split}, {"estimation_half", est}});
  }
  return out;
}

}  // namespace tfx
