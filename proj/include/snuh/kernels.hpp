#pragma once

// Data-parallel inner loops. Every kernel has a plain single-threaded
// counterpart in snuh::kernels::serial that the tests and the benchmark
// compare against; both produce bit-identical results.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "snuh/corpus.hpp"

namespace snuh::kernels {

int max_threads();

struct Neighbor {
  std::int32_t index = 0;
  double similarity = 0.0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

// For every row, the k rows with the largest dot product (self excluded),
// ordered by descending similarity then ascending index. Rows without any
// shared term have similarity exactly 0 and compete on index alone.
// Expects L2-normalized rows when used as cosine similarity.
std::vector<std::vector<Neighbor>> knn_by_dot(const CsrMatrix& rows, int k);

// Overwrites each row of a row-major [rows x cols] block with its softmax and
// stores the row's log-sum-exp. Uses max subtraction.
void softmax_rows(std::span<double> block, std::size_t cols, std::span<double> log_norm);

struct AdamCoefficients {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Bias corrections 1 - beta^t for the current step t.
  double correction1 = 1.0;
  double correction2 = 1.0;
};

// In-place Adam update that descends along grad.
void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 const AdamCoefficients& c);

// Hamming distance from one packed code to each of n packed codes.
void hamming_distances(std::span<const std::uint64_t> query, std::span<const std::uint64_t> database,
                       std::size_t words_per_code, std::span<std::uint32_t> out);

namespace serial {

std::vector<std::vector<Neighbor>> knn_by_dot(const CsrMatrix& rows, int k);
void softmax_rows(std::span<double> block, std::size_t cols, std::span<double> log_norm);
void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 const AdamCoefficients& c);
void hamming_distances(std::span<const std::uint64_t> query, std::span<const std::uint64_t> database,
                       std::size_t words_per_code, std::span<std::uint32_t> out);

}  // namespace serial

}  // namespace snuh::kernels
