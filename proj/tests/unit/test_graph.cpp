#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "snuh/errors.hpp"
#include "snuh/graph.hpp"
#include "snuh/kernels.hpp"

using namespace snuh;

namespace {

CsrMatrix rows_of(int cols, const std::vector<std::vector<std::pair<int, double>>>& rows) {
  CsrMatrix m(cols);
  for (const auto& r : rows) {
    std::vector<std::int32_t> idx;
    std::vector<double> val;
    for (auto [i, v] : r) {
      idx.push_back(i);
      val.push_back(v);
    }
    m.push_row(idx, val);
  }
  return m;
}

CsrMatrix random_rows(int n, int cols, int nnz, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_int_distribution<int> term(0, cols - 1);
  std::uniform_int_distribution<int> weight(1, 3);
  CsrMatrix m(cols);
  for (int r = 0; r < n; ++r) {
    std::map<int, double> e;
    for (int k = 0; k < nnz; ++k) e[term(gen)] = weight(gen);
    std::vector<std::int32_t> idx;
    std::vector<double> val;
    for (auto [i, v] : e) {
      idx.push_back(i);
      val.push_back(v);
    }
    m.push_row(idx, val);
  }
  return m;
}

}  // namespace

TEST_CASE("duplicate documents give a unit edge") {
  const CsrMatrix m = rows_of(3, {{{0, 1.0}, {2, 2.0}}, {{0, 1.0}, {2, 2.0}}});
  const AffinityGraph g = build_knn_graph(m, {.k = 1});
  REQUIRE(g.n_edges() == 1);
  CHECK(g.edges()[0].i == 0);
  CHECK(g.edges()[0].j == 1);
  CHECK(g.edges()[0].weight == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("orthogonal documents yield no edges") {
  const CsrMatrix m = rows_of(3, {{{0, 1.0}}, {{1, 1.0}}, {{2, 1.0}}});
  GraphReport report;
  const AffinityGraph g = build_knn_graph(m, {.k = 1}, &report);
  CHECK(g.n_edges() == 0);
  CHECK(report.n_components == 3);
}

TEST_CASE("knn graph equals the brute-force oracle") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const CsrMatrix m = random_rows(5 + static_cast<int>(seed) * 7, 12, 4, seed);
    for (int k : {1, 2, 4}) {
      const AffinityGraph g = build_knn_graph(m, {.k = k});
      const auto expect = oracle::brute_force_knn(m, k);
      REQUIRE(g.edges().size() == expect.size());
      for (std::size_t e = 0; e < expect.size(); ++e) {
        CHECK(g.edges()[e].i == expect[e].i);
        CHECK(g.edges()[e].j == expect[e].j);
        CHECK(g.edges()[e].weight == doctest::Approx(expect[e].weight).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("graph invariants") {
  const CsrMatrix m = random_rows(60, 20, 5, 42);
  const AffinityGraph g = build_knn_graph(m, {.k = 3});
  for (const GraphEdge& e : g.edges()) {
    CHECK(e.i < e.j);
    CHECK(e.weight > 0.0);
    CHECK(e.weight <= 1.0);
    CHECK(g.weight(e.i, e.j) == g.weight(e.j, e.i));
  }
  for (std::size_t v = 0; v < g.n_nodes(); ++v)
    for (const auto& nb : g.neighbors(v)) CHECK(g.weight(nb.node, static_cast<std::int32_t>(v)) == nb.weight);
  // Determinism
  CHECK(build_knn_graph(m, {.k = 3}) == g);
}

TEST_CASE("gaussian kernel uses the same support") {
  const CsrMatrix m = random_rows(30, 15, 4, 7);
  const AffinityGraph cos = build_knn_graph(m, {.k = 2});
  const AffinityGraph gk = build_knn_graph(m, {.k = 2, .metric = AffinityMetric::gaussian_kernel, .bandwidth = 0.5});
  REQUIRE(cos.n_edges() == gk.n_edges());
  for (std::size_t e = 0; e < cos.n_edges(); ++e) {
    const double c = cos.edges()[e].weight;
    CHECK(gk.edges()[e].weight == doctest::Approx(std::exp(-(2.0 - 2.0 * c) / 0.5)).epsilon(1e-12));
  }
}

TEST_CASE("configuration and data errors") {
  const CsrMatrix m = rows_of(3, {{{0, 1.0}}, {{0, 2.0}}});
  CHECK_THROWS_AS(build_knn_graph(m, {.k = 2}), ConfigError);
  CHECK_THROWS_AS(build_knn_graph(m, {.k = 0}), ConfigError);
  CHECK_THROWS_AS(build_knn_graph(m, {.k = 1, .metric = AffinityMetric::gaussian_kernel, .bandwidth = 0}),
                  ConfigError);
  CHECK_THROWS_AS(parse_metric("euclid"), ConfigError);

  // An all-zero row is excluded but keeps its node.
  const CsrMatrix z = rows_of(3, {{{0, 1.0}}, {}, {{0, 2.0}}});
  GraphReport report;
  const AffinityGraph g = build_knn_graph(z, {.k = 1}, &report);
  CHECK(report.excluded_rows == std::vector<std::size_t>{1});
  CHECK(g.n_nodes() == 3);
  CHECK(g.neighbors(1).empty());
  CHECK(g.weight(0, 2) == doctest::Approx(1.0));
}

TEST_CASE("connected components") {
  CHECK(connected_components(AffinityGraph(4, {})).size() == 4);
  const auto chain = connected_components(AffinityGraph(3, {{0, 1, 0.5}, {1, 2, 0.5}}));
  REQUIRE(chain.size() == 1);
  CHECK(chain[0] == std::vector<std::int32_t>{0, 1, 2});
  const auto two = connected_components(
      AffinityGraph(6, {{0, 1, 1}, {1, 2, 1}, {0, 2, 1}, {3, 4, 1}, {4, 5, 1}, {3, 5, 1}}));
  REQUIRE(two.size() == 2);
  CHECK(two[0].size() == 3);
  CHECK(two[1].size() == 3);

  // Union-find oracle on random sparse graphs.
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 30;
    std::uniform_int_distribution<int> node(0, n - 1);
    std::set<std::pair<int, int>> es;
    for (int k = 0; k < 20; ++k) {
      int a = node(gen), b = node(gen);
      if (a != b) es.emplace(std::min(a, b), std::max(a, b));
    }
    std::vector<GraphEdge> edges;
    std::vector<std::pair<int, int>> pairs(es.begin(), es.end());
    for (auto [a, b] : pairs) edges.push_back({a, b, 0.5});
    const auto got = connected_components(AffinityGraph(n, edges));
    const auto want = oracle::components(n, pairs);
    REQUIRE(got.size() == want.size());
    for (std::size_t c = 0; c < got.size(); ++c) CHECK(std::vector<int>(got[c].begin(), got[c].end()) == want[c]);
  }
}

TEST_CASE("graph file round trip and validation") {
  fixture::TempDir dir;
  const CsrMatrix m = random_rows(25, 10, 4, 9);
  const AffinityGraph g = build_knn_graph(m, {.k = 3});
  save_graph(g, dir / "g.txt", "corpus=abc graph=def");
  CHECK(load_graph(dir / "g.txt") == g);
  fixture::write_file(dir / "bad.txt", "3 1\n0 1 1.5\n");
  CHECK_THROWS_AS(load_graph(dir / "bad.txt"), DataError);
  fixture::write_file(dir / "bad2.txt", "3 2\n0 1 0.5\n");
  CHECK_THROWS_AS(load_graph(dir / "bad2.txt"), DataError);
  CHECK_THROWS(AffinityGraph(3, {{1, 0, 0.5}}));
  CHECK_THROWS(AffinityGraph(3, {{0, 1, 0.5}, {0, 1, 0.4}}));
}

TEST_CASE("toy corpus graph file is byte-identical to the oracle's") {
  fixture::TempDir dir;
  const CsrMatrix m = rows_of(6, {{{0, 1.0}, {1, 0.5}},
                                  {{0, 0.8}, {1, 0.6}, {2, 0.1}},
                                  {{2, 1.0}, {3, 1.0}},
                                  {{3, 0.7}, {4, 0.2}},
                                  {{4, 1.0}, {5, 0.3}}});
  save_graph(build_knn_graph(m, {.k = 2}), dir / "got.txt");
  save_graph(AffinityGraph(5, oracle::brute_force_knn(m, 2)), dir / "want.txt");
  const std::string golden = fixture::read_file(std::filesystem::path(SNUH_TEST_DATA_DIR) / "toy_graph_k2.txt");
  CHECK(fixture::read_file(dir / "got.txt") == golden);
  CHECK(fixture::read_file(dir / "want.txt") == golden);
}

TEST_CASE("parallel and serial knn agree exactly") {
  const CsrMatrix m = random_rows(200, 50, 6, 3).l2_normalized();
  CHECK(kernels::knn_by_dot(m, 5) == kernels::serial::knn_by_dot(m, 5));
}
