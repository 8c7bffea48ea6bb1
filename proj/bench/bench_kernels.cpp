// Parallel kernels against their serial references.
#include <benchmark/benchmark.h>

#include <map>
#include <random>
#include <vector>

#include "snuh/kernels.hpp"

using namespace snuh;

namespace {

CsrMatrix random_rows(int n, int cols, int nnz) {
  std::mt19937_64 gen(1);
  std::uniform_int_distribution<int> term(0, cols - 1);
  CsrMatrix m(cols);
  for (int r = 0; r < n; ++r) {
    std::map<int, double> e;
    while (static_cast<int>(e.size()) < nnz) e[term(gen)] = 1.0 + static_cast<double>(gen() % 3);
    std::vector<std::int32_t> idx;
    std::vector<double> val;
    for (auto [i, v] : e) {
      idx.push_back(i);
      val.push_back(v);
    }
    m.push_row(idx, val);
  }
  return m.l2_normalized();
}

template <auto Fn>
void knn(benchmark::State& state) {
  const CsrMatrix m = random_rows(static_cast<int>(state.range(0)), 5000, 40);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(m, 10));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <auto Fn>
void softmax(benchmark::State& state) {
  const std::size_t rows = 64, cols = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 gen(2);
  std::normal_distribution<double> n;
  std::vector<double> base(rows * cols), block(rows * cols), log_norm(rows);
  for (double& x : base) x = n(gen);
  for (auto _ : state) {
    block = base;
    Fn(block, cols, log_norm);
    benchmark::ClobberMemory();
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(rows * cols * sizeof(double)));
}

template <auto Fn>
void adam(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  std::vector<double> p(len, 0.1), g(len, 0.01), m(len, 0.0), v(len, 0.0);
  const kernels::AdamCoefficients c{.correction1 = 0.1, .correction2 = 0.001};
  for (auto _ : state) {
    Fn(p, g, m, v, c);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <auto Fn>
void hamming(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t words = 1;
  std::mt19937_64 gen(3);
  std::vector<std::uint64_t> db(n * words), q(words);
  for (auto& w : db) w = gen();
  q[0] = gen();
  std::vector<std::uint32_t> out(n);
  for (auto _ : state) {
    Fn(q, db, words, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(knn<kernels::knn_by_dot>)->Name("knn/parallel")->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(knn<kernels::serial::knn_by_dot>)->Name("knn/serial")->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(softmax<kernels::softmax_rows>)->Name("softmax/parallel")->Arg(10000);
BENCHMARK(softmax<kernels::serial::softmax_rows>)->Name("softmax/serial")->Arg(10000);
BENCHMARK(adam<kernels::adam_update>)->Name("adam/parallel")->Arg(1 << 20);
BENCHMARK(adam<kernels::serial::adam_update>)->Name("adam/serial")->Arg(1 << 20);
BENCHMARK(hamming<kernels::hamming_distances>)->Name("hamming/parallel")->Arg(1 << 16);
BENCHMARK(hamming<kernels::serial::hamming_distances>)->Name("hamming/serial")->Arg(1 << 16);

BENCHMARK_MAIN();
