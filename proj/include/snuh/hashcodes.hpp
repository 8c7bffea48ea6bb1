#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "snuh/corpus.hpp"
#include "snuh/model.hpp"

namespace snuh {

// Row-packed binary codes: bit n of document r lives in word n / 64 of that
// document's code, at position n % 64.
class HashCodes {
 public:
  HashCodes() = default;
  HashCodes(int code_length, std::vector<std::int64_t> doc_ids);

  // bits is row-major n_docs x code_length with entries 0 or 1.
  static HashCodes pack(int code_length, std::span<const std::uint8_t> bits, std::vector<std::int64_t> doc_ids);
  std::vector<std::uint8_t> unpack() const;

  std::size_t n_docs() const { return doc_ids_.size(); }
  int code_length() const { return code_length_; }
  std::size_t words_per_code() const { return words_; }
  const std::vector<std::int64_t>& doc_ids() const { return doc_ids_; }
  const std::vector<std::uint64_t>& words() const { return bits_; }

  std::span<const std::uint64_t> code(std::size_t r) const { return std::span(bits_).subspan(r * words_, words_); }
  bool bit(std::size_t r, int n) const;
  void set_bit(std::size_t r, int n, bool value);

  friend bool operator==(const HashCodes&, const HashCodes&) = default;

 private:
  int code_length_ = 0;
  std::size_t words_ = 0;
  std::vector<std::uint64_t> bits_;
  std::vector<std::int64_t> doc_ids_;
};

// bit n = 1 iff the posterior mean mu_n > 0.5 (mu_n == 0.5 maps to 0).
HashCodes binarize(const ModelParams& params, const CsrMatrix& rows, std::vector<std::int64_t> doc_ids);

std::uint32_t hamming_distance(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b);

// Database row indices of the k nearest codes by Hamming distance, ties
// broken by ascending doc_id.
std::vector<std::size_t> hamming_topk_rows(std::span<const std::uint64_t> query, const HashCodes& database,
                                           std::size_t k);
// Same ranking, reported as doc_ids.
std::vector<std::int64_t> hamming_topk(std::span<const std::uint64_t> query, const HashCodes& database, std::size_t k);

struct RetrievalResult {
  std::vector<double> precisions;  // one per evaluated query
  std::vector<std::size_t> query_rows;
  std::vector<std::size_t> excluded_rows;  // queries without labels
  double mean = 0.0;
  std::size_t k = 0;
};

// A retrieved document is relevant when it shares at least one label with
// the query. Unlabeled queries are skipped with a warning.
RetrievalResult precision_at_k(const HashCodes& queries, std::span<const std::vector<std::int32_t>> query_labels,
                               const HashCodes& database, std::span<const std::vector<std::int32_t>> database_labels,
                               std::size_t k);

namespace serial {
RetrievalResult precision_at_k(const HashCodes& queries, std::span<const std::vector<std::int32_t>> query_labels,
                               const HashCodes& database, std::span<const std::vector<std::int32_t>> database_labels,
                               std::size_t k);
}

// Text format: optional '#' lines, "n_docs d", then "doc_id hex" where hex
// spells ceil(d/8) bytes, byte 0 first, bit 0 = least significant bit of byte 0.
void save_codes(const HashCodes& codes, const std::filesystem::path& path, const std::string& lineage = {});
HashCodes load_codes(const std::filesystem::path& path);

}  // namespace snuh
