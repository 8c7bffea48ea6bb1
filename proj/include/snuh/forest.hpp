#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "snuh/corpus.hpp"
#include "snuh/graph.hpp"
#include "snuh/rng.hpp"

namespace snuh {

struct TreeGenConfig {
  int m_trees = 1;
  // Neighbor-sampling temperature; small values favor the most similar neighbor.
  double alpha = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Edges of one spanning tree (or forest, on a disconnected graph), each with
// first < second, in the order the traversal produced them.
using TreeEdges = std::vector<std::pair<std::int32_t, std::int32_t>>;

struct ForestEdge {
  std::int32_t i = 0;
  std::int32_t j = 0;
  // Fraction of the trees that contain this edge.
  double weight = 0.0;

  friend bool operator==(const ForestEdge&, const ForestEdge&) = default;
};

struct SpanningForest {
  std::size_t n_nodes = 0;
  int n_trees = 0;
  std::vector<TreeEdges> trees;
  std::vector<ForestEdge> weighted_edges;
};

// One randomized depth-first traversal over `sampling`, whose edge weights are
// the similarities used for neighbor selection. Start nodes are uniform over
// unvisited nodes; from node i an unvisited neighbor j is chosen with
// probability proportional to exp(sim(i, j) / alpha). Nodes are marked visited
// when pushed, and a node is popped once it has no unvisited neighbors.
TreeEdges sample_spanning_tree(const AffinityGraph& sampling, double alpha, Rng& rng);

// M independent trees, tree t seeded with config.seed + t.
SpanningForest generate_forest(const AffinityGraph& sampling, const TreeGenConfig& config);

// Same, with sampling similarities cos(x_i, x_j) recomputed from the feature
// rows for every graph edge.
SpanningForest generate_forest(const AffinityGraph& graph, const CsrMatrix& features, const TreeGenConfig& config);

// Copy of `graph` whose edge weights are the cosine similarities of the rows.
AffinityGraph cosine_sampling_graph(const AffinityGraph& graph, const CsrMatrix& features);

std::vector<ForestEdge> collapse_weights(std::span<const TreeEdges> trees, int n_trees);

struct WeightedForest {
  int n_trees = 0;
  std::vector<ForestEdge> edges;
};

// Text format: optional leading '#' lines, "M n_weighted_edges", then "i j w_ij".
void save_forest(const SpanningForest& forest, const std::filesystem::path& path, const std::string& lineage = {});
WeightedForest load_forest(const std::filesystem::path& path);

}  // namespace snuh
