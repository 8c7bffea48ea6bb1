#include "snuh/kernels.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include <omp.h>

#include "snuh/errors.hpp"

namespace snuh::kernels {

namespace {

bool ranks_before(const Neighbor& a, const Neighbor& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.index < b.index;
}

// Shared by both KNN routes: picks the top k from the nonzero candidates plus
// the implicit zero-similarity rows (everything not in `nonzero`, except self).
std::vector<Neighbor> select_top_k(std::vector<Neighbor>& nonzero, std::vector<char>& is_nonzero, std::size_t self,
                                   std::size_t n_rows, std::size_t k) {
  std::sort(nonzero.begin(), nonzero.end(), ranks_before);
  std::vector<Neighbor> out;
  out.reserve(k);
  std::size_t p = 0;
  while (out.size() < k && p < nonzero.size() && nonzero[p].similarity > 0.0) out.push_back(nonzero[p++]);
  for (std::size_t j = 0; out.size() < k && j < n_rows; ++j)
    if (j != self && !is_nonzero[j]) out.push_back({static_cast<std::int32_t>(j), 0.0});
  while (out.size() < k && p < nonzero.size()) out.push_back(nonzero[p++]);
  for (const Neighbor& nb : nonzero) is_nonzero[static_cast<std::size_t>(nb.index)] = 0;
  return out;
}

struct Postings {
  std::vector<std::int64_t> start;
  std::vector<std::int32_t> row;
  std::vector<double> value;
};

// Column-major copy of the matrix: for each term, the rows containing it in
// ascending row order.
Postings invert(const CsrMatrix& m) {
  Postings p;
  const auto n_cols = static_cast<std::size_t>(m.n_cols());
  p.start.assign(n_cols + 1, 0);
  for (std::int32_t c : m.indices()) ++p.start[static_cast<std::size_t>(c) + 1];
  for (std::size_t c = 0; c < n_cols; ++c) p.start[c + 1] += p.start[c];
  p.row.resize(m.nnz());
  p.value.resize(m.nnz());
  std::vector<std::int64_t> fill(p.start.begin(), p.start.end() - 1);
  for (std::size_t r = 0; r < m.n_rows(); ++r) {
    const SparseRow row = m.row(r);
    for (std::size_t k = 0; k < row.nnz(); ++k) {
      const auto pos = static_cast<std::size_t>(fill[static_cast<std::size_t>(row.indices[k])]++);
      p.row[pos] = static_cast<std::int32_t>(r);
      p.value[pos] = row.values[k];
    }
  }
  return p;
}

void check_k(const CsrMatrix& rows, int k) {
  if (k <= 0) throw ConfigError("knn: k must be positive");
  if (static_cast<std::size_t>(k) >= rows.n_rows()) throw ConfigError("knn: k must be smaller than the number of rows");
}

}  // namespace

int max_threads() { return omp_get_max_threads(); }

std::vector<std::vector<Neighbor>> knn_by_dot(const CsrMatrix& rows, int k) {
  check_k(rows, k);
  const std::size_t n = rows.n_rows();
  const Postings postings = invert(rows);
  std::vector<std::vector<Neighbor>> result(n);

#pragma omp parallel
  {
    std::vector<double> score(n, 0.0);
    std::vector<char> touched(n, 0);
    std::vector<std::int32_t> touched_rows;
    std::vector<Neighbor> candidates;

#pragma omp for schedule(dynamic, 64)
    for (std::int64_t q = 0; q < static_cast<std::int64_t>(n); ++q) {
      const auto self = static_cast<std::size_t>(q);
      const SparseRow query = rows.row(self);
      touched_rows.clear();
      // Terms in ascending order, so each score accumulates in the same order
      // as a merge-based sparse dot product.
      for (std::size_t t = 0; t < query.nnz(); ++t) {
        const auto term = static_cast<std::size_t>(query.indices[t]);
        const double qv = query.values[t];
        for (auto p = postings.start[term]; p < postings.start[term + 1]; ++p) {
          const auto j = static_cast<std::size_t>(postings.row[static_cast<std::size_t>(p)]);
          if (j == self) continue;
          if (!touched[j]) {
            touched[j] = 1;
            touched_rows.push_back(static_cast<std::int32_t>(j));
          }
          score[j] += qv * postings.value[static_cast<std::size_t>(p)];
        }
      }
      candidates.clear();
      for (std::int32_t j : touched_rows) {
        const auto uj = static_cast<std::size_t>(j);
        if (score[uj] != 0.0) candidates.push_back({j, score[uj]});
        else touched[uj] = 0;
        score[uj] = 0.0;
      }
      // select_top_k clears the flags of the nonzero candidates it received.
      result[self] = select_top_k(candidates, touched, self, n, static_cast<std::size_t>(k));
    }
  }
  return result;
}

void softmax_rows(std::span<double> block, std::size_t cols, std::span<double> log_norm) {
  const std::size_t n_rows = log_norm.size();
  if (block.size() != n_rows * cols) throw ShapeError("softmax_rows: block size mismatch");
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < static_cast<std::int64_t>(n_rows); ++r) {
    double* row = block.data() + static_cast<std::size_t>(r) * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    const double inv = 1.0 / sum;
    for (std::size_t c = 0; c < cols; ++c) row[c] *= inv;
    log_norm[static_cast<std::size_t>(r)] = mx + std::log(sum);
  }
}

void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 const AdamCoefficients& c) {
  const auto n = static_cast<std::int64_t>(param.size());
  double* p = param.data();
  const double* g = grad.data();
  double* mm = m.data();
  double* vv = v.data();
  const double b1 = c.beta1, b2 = c.beta2, lr = c.learning_rate, eps = c.epsilon;
  const double inv_c1 = 1.0 / c.correction1, inv_c2 = 1.0 / c.correction2;
#pragma omp parallel for simd schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    mm[i] = b1 * mm[i] + (1.0 - b1) * g[i];
    vv[i] = b2 * vv[i] + (1.0 - b2) * g[i] * g[i];
    p[i] -= lr * (mm[i] * inv_c1) / (std::sqrt(vv[i] * inv_c2) + eps);
  }
}

void hamming_distances(std::span<const std::uint64_t> query, std::span<const std::uint64_t> database,
                       std::size_t words_per_code, std::span<std::uint32_t> out) {
  const auto n = static_cast<std::int64_t>(out.size());
  if (database.size() != out.size() * words_per_code || query.size() != words_per_code)
    throw ShapeError("hamming_distances: size mismatch");
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const std::uint64_t* code = database.data() + static_cast<std::size_t>(i) * words_per_code;
    std::uint32_t d = 0;
    for (std::size_t w = 0; w < words_per_code; ++w) d += static_cast<std::uint32_t>(std::popcount(code[w] ^ query[w]));
    out[static_cast<std::size_t>(i)] = d;
  }
}

namespace serial {

std::vector<std::vector<Neighbor>> knn_by_dot(const CsrMatrix& rows, int k) {
  check_k(rows, k);
  const std::size_t n = rows.n_rows();
  std::vector<std::vector<Neighbor>> result(n);
  std::vector<char> is_nonzero(n, 0);
  std::vector<Neighbor> candidates;
  for (std::size_t i = 0; i < n; ++i) {
    candidates.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double s = dot(rows.row(i), rows.row(j));
      if (s != 0.0) {
        candidates.push_back({static_cast<std::int32_t>(j), s});
        is_nonzero[j] = 1;
      }
    }
    result[i] = select_top_k(candidates, is_nonzero, i, n, static_cast<std::size_t>(k));
  }
  return result;
}

void softmax_rows(std::span<double> block, std::size_t cols, std::span<double> log_norm) {
  if (block.size() != log_norm.size() * cols) throw ShapeError("softmax_rows: block size mismatch");
  for (std::size_t r = 0; r < log_norm.size(); ++r) {
    double* row = block.data() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    const double inv = 1.0 / sum;
    for (std::size_t c = 0; c < cols; ++c) row[c] *= inv;
    log_norm[r] = mx + std::log(sum);
  }
}

void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 const AdamCoefficients& c) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
    param[i] -= c.learning_rate * (m[i] * (1.0 / c.correction1)) / (std::sqrt(v[i] * (1.0 / c.correction2)) + c.epsilon);
  }
}

void hamming_distances(std::span<const std::uint64_t> query, std::span<const std::uint64_t> database,
                       std::size_t words_per_code, std::span<std::uint32_t> out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t d = 0;
    for (std::size_t w = 0; w < words_per_code; ++w)
      d += static_cast<std::uint32_t>(std::popcount(database[i * words_per_code + w] ^ query[w]));
    out[i] = d;
  }
}

}  // namespace serial

}  // namespace snuh::kernels
