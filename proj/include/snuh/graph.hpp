#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "snuh/corpus.hpp"

namespace snuh {

enum class AffinityMetric { cosine, gaussian_kernel };

AffinityMetric parse_metric(const std::string& name);
const char* to_string(AffinityMetric metric);

struct AffinityConfig {
  int k = 10;
  AffinityMetric metric = AffinityMetric::cosine;
  // Only read for the gaussian kernel: a_ij = exp(-||x_i - x_j||^2 / bandwidth).
  double bandwidth = 1.0;

  void validate(std::size_t n_nodes) const;
};

// Undirected edge with i < j.
struct GraphEdge {
  std::int32_t i = 0;
  std::int32_t j = 0;
  double weight = 0.0;

  friend bool operator==(const GraphEdge&, const GraphEdge&) = default;
};

// Symmetric sparse affinity matrix without self-loops. Edges are kept sorted
// by (i, j); the adjacency view lists both directions.
class AffinityGraph {
 public:
  AffinityGraph() = default;
  AffinityGraph(std::size_t n_nodes, std::vector<GraphEdge> edges);

  std::size_t n_nodes() const { return n_nodes_; }
  std::size_t n_edges() const { return edges_.size(); }
  const std::vector<GraphEdge>& edges() const { return edges_; }

  struct Adjacent {
    std::int32_t node;
    double weight;
  };
  std::span<const Adjacent> neighbors(std::size_t node) const {
    const auto b = static_cast<std::size_t>(adj_start_[node]);
    const auto e = static_cast<std::size_t>(adj_start_[node + 1]);
    return std::span(adjacent_).subspan(b, e - b);
  }
  // Weight of edge (i, j) in either orientation, or 0 when absent.
  double weight(std::int32_t i, std::int32_t j) const;

  friend bool operator==(const AffinityGraph& a, const AffinityGraph& b) {
    return a.n_nodes_ == b.n_nodes_ && a.edges_ == b.edges_;
  }

 private:
  std::size_t n_nodes_ = 0;
  std::vector<GraphEdge> edges_;
  std::vector<std::int64_t> adj_start_{0};
  std::vector<Adjacent> adjacent_;
};

struct GraphReport {
  std::size_t n_edges = 0;
  std::size_t n_components = 0;
  // Rows of the input whose features are all zero; they get no edges.
  std::vector<std::size_t> excluded_rows;
};

// Exact KNN over the rows of `features` (one node per row). Rows are
// L2-normalized internally. Directed KNN lists are merged with
// a_ij = max(a_ij, a_ji); zero-weight edges are dropped.
AffinityGraph build_knn_graph(const CsrMatrix& features, const AffinityConfig& config, GraphReport* report = nullptr);

// Connected components, each sorted ascending, ordered by smallest member.
std::vector<std::vector<std::int32_t>> connected_components(const AffinityGraph& graph);

// Text format: optional leading '#' lines, then "n_nodes n_edges", then
// "i j a_ij" per edge (i < j, 17 significant digits).
void save_graph(const AffinityGraph& graph, const std::filesystem::path& path, const std::string& lineage = {});
AffinityGraph load_graph(const std::filesystem::path& path);

// Disjoint-set forest with path halving and union by size.
class UnionFind {
 public:
  explicit UnionFind(std::size_t n);
  std::size_t find(std::size_t x);
  // Returns false when x and y were already connected.
  bool unite(std::size_t x, std::size_t y);

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
};

}  // namespace snuh
