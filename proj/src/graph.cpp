#include "snuh/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <spdlog/spdlog.h>

#include "snuh/errors.hpp"
#include "snuh/kernels.hpp"

namespace snuh {

AffinityMetric parse_metric(const std::string& name) {
  if (name == "cosine") return AffinityMetric::cosine;
  if (name == "gaussian-kernel" || name == "gaussian") return AffinityMetric::gaussian_kernel;
  throw ConfigError("unknown affinity metric '" + name + "'");
}

const char* to_string(AffinityMetric metric) {
  return metric == AffinityMetric::cosine ? "cosine" : "gaussian-kernel";
}

void AffinityConfig::validate(std::size_t n_nodes) const {
  if (k <= 0) throw ConfigError("affinity.k must be positive");
  if (static_cast<std::size_t>(k) >= n_nodes)
    throw ConfigError("affinity.k=" + std::to_string(k) + " must be smaller than the node count " +
                      std::to_string(n_nodes));
  if (metric == AffinityMetric::gaussian_kernel && !(bandwidth > 0.0))
    throw ConfigError("affinity.bandwidth must be positive for the gaussian kernel");
}

AffinityGraph::AffinityGraph(std::size_t n_nodes, std::vector<GraphEdge> edges)
    : n_nodes_(n_nodes), edges_(std::move(edges)) {
  std::sort(edges_.begin(), edges_.end(), [](const GraphEdge& a, const GraphEdge& b) {
    return a.i != b.i ? a.i < b.i : a.j < b.j;
  });
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const GraphEdge& ed = edges_[e];
    if (ed.i < 0 || ed.j < 0 || static_cast<std::size_t>(ed.j) >= n_nodes_ || ed.i >= ed.j)
      throw ValidationError("graph edge (" + std::to_string(ed.i) + "," + std::to_string(ed.j) +
                            ") must satisfy 0 <= i < j < n_nodes");
    if (e > 0 && edges_[e - 1].i == ed.i && edges_[e - 1].j == ed.j)
      throw ValidationError("duplicate graph edge (" + std::to_string(ed.i) + "," + std::to_string(ed.j) + ")");
  }
  std::vector<std::int64_t> degree(n_nodes_ + 1, 0);
  for (const GraphEdge& ed : edges_) {
    ++degree[static_cast<std::size_t>(ed.i) + 1];
    ++degree[static_cast<std::size_t>(ed.j) + 1];
  }
  adj_start_.assign(n_nodes_ + 1, 0);
  for (std::size_t v = 0; v < n_nodes_; ++v) adj_start_[v + 1] = adj_start_[v] + degree[v + 1];
  adjacent_.resize(edges_.size() * 2);
  std::vector<std::int64_t> fill(adj_start_.begin(), adj_start_.end() - 1);
  // Filling in edge order leaves every adjacency list sorted by neighbor.
  for (const GraphEdge& ed : edges_) {
    adjacent_[static_cast<std::size_t>(fill[static_cast<std::size_t>(ed.i)]++)] = {ed.j, ed.weight};
  }
  for (const GraphEdge& ed : edges_) {
    adjacent_[static_cast<std::size_t>(fill[static_cast<std::size_t>(ed.j)]++)] = {ed.i, ed.weight};
  }
  for (std::size_t v = 0; v < n_nodes_; ++v) {
    auto b = adjacent_.begin() + adj_start_[v];
    auto e = adjacent_.begin() + adj_start_[v + 1];
    std::sort(b, e, [](const Adjacent& a, const Adjacent& c) { return a.node < c.node; });
  }
}

double AffinityGraph::weight(std::int32_t i, std::int32_t j) const {
  const auto nb = neighbors(static_cast<std::size_t>(i));
  const auto it = std::lower_bound(nb.begin(), nb.end(), j, [](const Adjacent& a, std::int32_t v) { return a.node < v; });
  return (it != nb.end() && it->node == j) ? it->weight : 0.0;
}

AffinityGraph build_knn_graph(const CsrMatrix& features, const AffinityConfig& config, GraphReport* report) {
  const std::size_t n = features.n_rows();
  if (n == 0) throw ValidationError("build_knn_graph: no documents");

  std::vector<std::size_t> kept;
  std::vector<std::size_t> excluded;
  for (std::size_t r = 0; r < n; ++r) (features.row(r).squared_norm() > 0.0 ? kept : excluded).push_back(r);
  if (!excluded.empty())
    spdlog::warn("build_knn_graph: {} all-zero document(s) excluded (first row {})", excluded.size(), excluded.front());
  config.validate(kept.size());

  const CsrMatrix normalized = features.select_rows(kept).l2_normalized();
  const auto knn = kernels::knn_by_dot(normalized, config.k);

  std::map<std::pair<std::int32_t, std::int32_t>, double> merged;
  for (std::size_t q = 0; q < kept.size(); ++q) {
    for (const kernels::Neighbor& nb : knn[q]) {
      double a = 0.0;
      if (config.metric == AffinityMetric::cosine) {
        a = std::min(nb.similarity, 1.0);
      } else {
        const double sq_dist = std::max(0.0, 2.0 - 2.0 * nb.similarity);
        a = std::exp(-sq_dist / config.bandwidth);
      }
      if (!(a > 0.0)) continue;
      auto i = static_cast<std::int32_t>(kept[q]);
      auto j = static_cast<std::int32_t>(kept[static_cast<std::size_t>(nb.index)]);
      if (i > j) std::swap(i, j);
      auto [it, inserted] = merged.emplace(std::pair{i, j}, a);
      if (!inserted) it->second = std::max(it->second, a);
    }
  }
  std::vector<GraphEdge> edges;
  edges.reserve(merged.size());
  for (const auto& [key, w] : merged) edges.push_back({key.first, key.second, w});
  AffinityGraph graph(n, std::move(edges));

  const std::size_t n_components = connected_components(graph).size();
  spdlog::info("knn graph: {} nodes, {} edges, {} connected components (k={}, {})", n, graph.n_edges(), n_components,
               config.k, to_string(config.metric));
  if (report) {
    report->n_edges = graph.n_edges();
    report->n_components = n_components;
    report->excluded_rows = std::move(excluded);
  }
  return graph;
}

UnionFind::UnionFind(std::size_t n) : parent_(n), size_(n, 1) {
  for (std::size_t i = 0; i < n; ++i) parent_[i] = i;
}

std::size_t UnionFind::find(std::size_t x) {
  while (parent_[x] != x) {
    parent_[x] = parent_[parent_[x]];
    x = parent_[x];
  }
  return x;
}

bool UnionFind::unite(std::size_t x, std::size_t y) {
  x = find(x);
  y = find(y);
  if (x == y) return false;
  if (size_[x] < size_[y]) std::swap(x, y);
  parent_[y] = x;
  size_[x] += size_[y];
  return true;
}

std::vector<std::vector<std::int32_t>> connected_components(const AffinityGraph& graph) {
  const std::size_t n = graph.n_nodes();
  std::vector<std::int32_t> component(n, -1);
  std::vector<std::vector<std::int32_t>> out;
  std::vector<std::int32_t> stack;
  for (std::size_t s = 0; s < n; ++s) {
    if (component[s] >= 0) continue;
    const auto id = static_cast<std::int32_t>(out.size());
    out.emplace_back();
    component[s] = id;
    stack.push_back(static_cast<std::int32_t>(s));
    while (!stack.empty()) {
      const std::int32_t v = stack.back();
      stack.pop_back();
      out.back().push_back(v);
      for (const auto& nb : graph.neighbors(static_cast<std::size_t>(v))) {
        if (component[static_cast<std::size_t>(nb.node)] < 0) {
          component[static_cast<std::size_t>(nb.node)] = id;
          stack.push_back(nb.node);
        }
      }
    }
    std::sort(out.back().begin(), out.back().end());
  }
  return out;
}

void save_graph(const AffinityGraph& graph, const std::filesystem::path& path, const std::string& lineage) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  if (!lineage.empty()) out << "# lineage " << lineage << '\n';
  out << graph.n_nodes() << ' ' << graph.n_edges() << '\n';
  char buf[64];
  for (const GraphEdge& e : graph.edges()) {
    std::snprintf(buf, sizeof buf, "%.17g", e.weight);
    out << e.i << ' ' << e.j << ' ' << buf << '\n';
  }
}

AffinityGraph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  std::size_t n_nodes = 0, n_edges = 0;
  std::vector<GraphEdge> edges;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.front() == '#') continue;
    std::istringstream fields(line);
    if (!have_header) {
      if (!(fields >> n_nodes >> n_edges)) throw ParseError(path.string(), lineno, "expected 'n_nodes n_edges'");
      have_header = true;
      edges.reserve(n_edges);
      continue;
    }
    GraphEdge e;
    if (!(fields >> e.i >> e.j >> e.weight)) throw ParseError(path.string(), lineno, "expected 'i j a_ij'");
    if (!(e.weight > 0.0 && e.weight <= 1.0))
      throw ParseError(path.string(), lineno, "edge weight must lie in (0, 1]");
    edges.push_back(e);
  }
  if (!have_header) throw DataError(path.string() + ": missing header");
  if (edges.size() != n_edges)
    throw DataError(path.string() + ": header declares " + std::to_string(n_edges) + " edges, found " +
                    std::to_string(edges.size()));
  return AffinityGraph(n_nodes, std::move(edges));
}

}  // namespace snuh
