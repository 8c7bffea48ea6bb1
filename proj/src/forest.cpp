#include "snuh/forest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <spdlog/spdlog.h>

#include "snuh/errors.hpp"

namespace snuh {

void TreeGenConfig::validate() const {
  if (m_trees < 1) throw ConfigError("forest.m_trees must be at least 1");
  if (!(alpha > 0.0)) throw ConfigError("forest.alpha must be positive");
}

namespace {

// Set of unvisited nodes supporting O(1) uniform draws and removals.
class UnvisitedPool {
 public:
  explicit UnvisitedPool(std::size_t n) : items_(n), pos_(n) {
    for (std::size_t i = 0; i < n; ++i) items_[i] = pos_[i] = i;
  }
  bool empty() const { return items_.empty(); }
  std::size_t draw(Rng& rng) const { return items_[rng.uniform_index(items_.size())]; }
  void remove(std::size_t v) {
    const std::size_t p = pos_[v];
    const std::size_t last = items_.back();
    items_[p] = last;
    pos_[last] = p;
    items_.pop_back();
  }

 private:
  std::vector<std::size_t> items_;
  std::vector<std::size_t> pos_;
};

}  // namespace

TreeEdges sample_spanning_tree(const AffinityGraph& sampling, double alpha, Rng& rng) {
  const std::size_t n = sampling.n_nodes();
  std::vector<char> visited(n, 0);
  UnvisitedPool pool(n);
  TreeEdges edges;
  std::vector<std::int32_t> stack;
  std::vector<std::int32_t> open;
  std::vector<double> prob;

  auto visit = [&](std::size_t v) {
    visited[v] = 1;
    pool.remove(v);
  };

  while (!pool.empty()) {
    const std::size_t start = pool.draw(rng);
    visit(start);
    stack.assign(1, static_cast<std::int32_t>(start));
    while (!stack.empty()) {
      const std::int32_t i = stack.back();
      open.clear();
      prob.clear();
      double max_logit = -INFINITY;
      for (const auto& nb : sampling.neighbors(static_cast<std::size_t>(i))) {
        if (visited[static_cast<std::size_t>(nb.node)]) continue;
        open.push_back(nb.node);
        prob.push_back(nb.weight / alpha);
        max_logit = std::max(max_logit, nb.weight / alpha);
      }
      if (open.empty()) {
        stack.pop_back();
        continue;
      }
      double total = 0.0;
      for (double& p : prob) {
        p = std::exp(p - max_logit);
        total += p;
      }
      const double u = rng.uniform() * total;
      std::size_t pick = open.size() - 1;
      double acc = 0.0;
      for (std::size_t c = 0; c < open.size(); ++c) {
        acc += prob[c];
        if (u < acc) {
          pick = c;
          break;
        }
      }
      const std::int32_t j = open[pick];
      visit(static_cast<std::size_t>(j));
      stack.push_back(j);
      edges.emplace_back(std::min(i, j), std::max(i, j));
    }
  }
  return edges;
}

SpanningForest generate_forest(const AffinityGraph& sampling, const TreeGenConfig& config) {
  config.validate();
  SpanningForest forest;
  forest.n_nodes = sampling.n_nodes();
  forest.n_trees = config.m_trees;
  forest.trees.resize(static_cast<std::size_t>(config.m_trees));
#pragma omp parallel for schedule(dynamic, 1)
  for (int t = 0; t < config.m_trees; ++t) {
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(t)));
    forest.trees[static_cast<std::size_t>(t)] = sample_spanning_tree(sampling, config.alpha, rng);
  }
  forest.weighted_edges = collapse_weights(forest.trees, config.m_trees);
  spdlog::info("forest: {} tree(s), {} distinct edges (alpha={}, seed={})", config.m_trees,
               forest.weighted_edges.size(), config.alpha, config.seed);
  return forest;
}

AffinityGraph cosine_sampling_graph(const AffinityGraph& graph, const CsrMatrix& features) {
  if (features.n_rows() != graph.n_nodes())
    throw ShapeError("forest: feature rows (" + std::to_string(features.n_rows()) + ") do not match graph nodes (" +
                     std::to_string(graph.n_nodes()) + ")");
  std::vector<GraphEdge> edges = graph.edges();
  for (GraphEdge& e : edges)
    e.weight = cosine(features.row(static_cast<std::size_t>(e.i)), features.row(static_cast<std::size_t>(e.j)));
  return AffinityGraph(graph.n_nodes(), std::move(edges));
}

SpanningForest generate_forest(const AffinityGraph& graph, const CsrMatrix& features, const TreeGenConfig& config) {
  return generate_forest(cosine_sampling_graph(graph, features), config);
}

std::vector<ForestEdge> collapse_weights(std::span<const TreeEdges> trees, int n_trees) {
  if (n_trees < 1) throw ConfigError("collapse_weights: tree count must be positive");
  std::map<std::pair<std::int32_t, std::int32_t>, int> counts;
  for (const TreeEdges& tree : trees)
    for (const auto& e : tree) ++counts[e];
  std::vector<ForestEdge> out;
  out.reserve(counts.size());
  for (const auto& [key, c] : counts)
    out.push_back({key.first, key.second, static_cast<double>(c) / static_cast<double>(n_trees)});
  return out;
}

void save_forest(const SpanningForest& forest, const std::filesystem::path& path, const std::string& lineage) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  if (!lineage.empty()) out << "# lineage " << lineage << '\n';
  out << forest.n_trees << ' ' << forest.weighted_edges.size() << '\n';
  char buf[64];
  for (const ForestEdge& e : forest.weighted_edges) {
    std::snprintf(buf, sizeof buf, "%.17g", e.weight);
    out << e.i << ' ' << e.j << ' ' << buf << '\n';
  }
}

WeightedForest load_forest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  WeightedForest forest;
  std::size_t n_edges = 0;
  bool have_header = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.front() == '#') continue;
    std::istringstream fields(line);
    if (!have_header) {
      if (!(fields >> forest.n_trees >> n_edges)) throw ParseError(path.string(), lineno, "expected 'M n_edges'");
      have_header = true;
      continue;
    }
    ForestEdge e;
    if (!(fields >> e.i >> e.j >> e.weight)) throw ParseError(path.string(), lineno, "expected 'i j w_ij'");
    if (e.i >= e.j || !(e.weight > 0.0 && e.weight <= 1.0))
      throw ParseError(path.string(), lineno, "need i < j and w_ij in (0, 1]");
    forest.edges.push_back(e);
  }
  if (!have_header) throw DataError(path.string() + ": missing header");
  if (forest.edges.size() != n_edges) throw DataError(path.string() + ": edge count does not match header");
  return forest;
}

}  // namespace snuh
