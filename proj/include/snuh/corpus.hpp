#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace snuh {

// Borrowed view of one sparse row. Indices are strictly increasing.
struct SparseRow {
  std::span<const std::int32_t> indices;
  std::span<const double> values;

  std::size_t nnz() const { return indices.size(); }
  double sum() const;
  double squared_norm() const;
};

double dot(const SparseRow& a, const SparseRow& b);
double cosine(const SparseRow& a, const SparseRow& b);

// Compressed sparse row matrix: documents x vocabulary.
class CsrMatrix {
 public:
  CsrMatrix() = default;
  explicit CsrMatrix(std::int32_t n_cols) : n_cols_(n_cols), row_ptr_{0} {}

  // Appends a row; entries must be sorted by index and unique.
  void push_row(std::span<const std::int32_t> indices, std::span<const double> values);

  std::size_t n_rows() const { return row_ptr_.empty() ? 0 : row_ptr_.size() - 1; }
  std::int32_t n_cols() const { return n_cols_; }
  std::size_t nnz() const { return values_.size(); }

  SparseRow row(std::size_t r) const {
    const auto b = static_cast<std::size_t>(row_ptr_[r]);
    const auto e = static_cast<std::size_t>(row_ptr_[r + 1]);
    return {std::span(indices_).subspan(b, e - b), std::span(values_).subspan(b, e - b)};
  }

  CsrMatrix select_rows(std::span<const std::size_t> rows) const;
  // Same sparsity, each row scaled to unit L2 norm (all-zero rows stay zero).
  CsrMatrix l2_normalized() const;

  std::span<double> mutable_values() { return values_; }
  const std::vector<std::int64_t>& row_ptr() const { return row_ptr_; }
  const std::vector<std::int32_t>& indices() const { return indices_; }
  const std::vector<double>& values() const { return values_; }

  friend bool operator==(const CsrMatrix&, const CsrMatrix&) = default;

 private:
  std::int32_t n_cols_ = 0;
  std::vector<std::int64_t> row_ptr_{0};
  std::vector<std::int32_t> indices_;
  std::vector<double> values_;
};

struct Vocabulary {
  std::vector<std::string> terms;

  std::size_t size() const { return terms.size(); }
  static Vocabulary numbered(std::size_t size);

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;
};

enum class SplitCell : std::uint8_t { train, val, test };

const char* to_string(SplitCell cell);

// Immutable once loaded. Rows keep file order; labels are indices into
// label_names and each document's label list is sorted and unique.
struct Corpus {
  Vocabulary vocabulary;
  std::vector<std::int64_t> doc_ids;
  std::vector<std::vector<std::int32_t>> labels;
  std::vector<std::string> label_names;
  CsrMatrix weights;
  std::vector<SplitCell> split;

  std::size_t n_docs() const { return doc_ids.size(); }
  std::size_t vocab_size() const { return vocabulary.size(); }
  std::vector<std::size_t> rows_in(SplitCell cell) const;
  std::vector<std::vector<std::int32_t>> labels_of(std::span<const std::size_t> rows) const;

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

struct CorpusStats {
  std::size_t n_docs = 0;
  std::size_t vocab_size = 0;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::size_t n_test = 0;
  std::size_t nnz = 0;
};

CorpusStats stats(const Corpus& corpus);

// File set for the bow-text format. Header and split live next to the main
// file unless given explicitly; the vocabulary file is optional.
struct CorpusPaths {
  std::filesystem::path bow;
  std::filesystem::path header;
  std::filesystem::path split;
  std::filesystem::path vocab;

  static CorpusPaths beside(const std::filesystem::path& bow);
};

struct LoadOptions {
  // Processed (TFIDF) corpora may legitimately contain all-zero rows.
  bool allow_empty_documents = false;
};

// Parses bow-text. A missing split file puts every document in train (logged).
Corpus load_corpus(const CorpusPaths& paths, const LoadOptions& options = {});
inline Corpus load_corpus(const std::filesystem::path& bow, const LoadOptions& options = {}) {
  return load_corpus(CorpusPaths::beside(bow), options);
}

// Writes all four files; weights are printed with 17 significant digits so a
// reload is bit-identical.
void save_corpus(const Corpus& corpus, const CorpusPaths& paths);
inline void save_corpus(const Corpus& corpus, const std::filesystem::path& bow) {
  save_corpus(corpus, CorpusPaths::beside(bow));
}

struct TfidfResult {
  Corpus corpus;
  // Rows whose weights all became zero (every term had df = N).
  std::vector<std::int64_t> zero_doc_ids;
};

// weight(t, d) = tf(t, d) * ln(N / df(t)) with raw counts as tf. Terms with
// df = N become explicit zeros and are removed from the sparsity pattern.
TfidfResult tfidf_transform(const Corpus& counts);

}  // namespace snuh
