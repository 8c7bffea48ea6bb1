#include "snuh/hashcodes.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "snuh/errors.hpp"
#include "snuh/kernels.hpp"

namespace snuh {

HashCodes::HashCodes(int code_length, std::vector<std::int64_t> doc_ids)
    : code_length_(code_length),
      words_((static_cast<std::size_t>(code_length) + 63) / 64),
      bits_(doc_ids.size() * words_, 0),
      doc_ids_(std::move(doc_ids)) {
  if (code_length <= 0) throw ConfigError("code length must be positive");
}

HashCodes HashCodes::pack(int code_length, std::span<const std::uint8_t> bits, std::vector<std::int64_t> doc_ids) {
  HashCodes codes(code_length, std::move(doc_ids));
  if (bits.size() != codes.n_docs() * static_cast<std::size_t>(code_length)) throw ShapeError("pack: bit count");
  for (std::size_t r = 0; r < codes.n_docs(); ++r)
    for (int n = 0; n < code_length; ++n)
      if (bits[r * static_cast<std::size_t>(code_length) + static_cast<std::size_t>(n)]) codes.set_bit(r, n, true);
  return codes;
}

std::vector<std::uint8_t> HashCodes::unpack() const {
  std::vector<std::uint8_t> out(n_docs() * static_cast<std::size_t>(code_length_));
  for (std::size_t r = 0; r < n_docs(); ++r)
    for (int n = 0; n < code_length_; ++n) out[r * static_cast<std::size_t>(code_length_) + static_cast<std::size_t>(n)] = bit(r, n);
  return out;
}

bool HashCodes::bit(std::size_t r, int n) const {
  return (bits_[r * words_ + static_cast<std::size_t>(n) / 64] >> (n % 64)) & 1U;
}

void HashCodes::set_bit(std::size_t r, int n, bool value) {
  std::uint64_t& w = bits_[r * words_ + static_cast<std::size_t>(n) / 64];
  const std::uint64_t mask = std::uint64_t{1} << (n % 64);
  w = value ? (w | mask) : (w & ~mask);
}

HashCodes binarize(const ModelParams& params, const CsrMatrix& rows, std::vector<std::int64_t> doc_ids) {
  if (doc_ids.size() != rows.n_rows()) throw ShapeError("binarize: doc_ids do not match rows");
  HashCodes codes(params.config.latent_dim, std::move(doc_ids));
  const auto n = static_cast<std::int64_t>(rows.n_rows());
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < n; ++r) {
    const gauss::SingletonPosterior q = encode(params, rows.row(static_cast<std::size_t>(r)));
    for (int k = 0; k < params.config.latent_dim; ++k)
      if (q.mu[k] > 0.5) codes.set_bit(static_cast<std::size_t>(r), k, true);
  }
  return codes;
}

std::uint32_t hamming_distance(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  if (a.size() != b.size()) throw ShapeError("hamming_distance: code lengths differ");
  std::uint32_t d = 0;
  for (std::size_t w = 0; w < a.size(); ++w) d += static_cast<std::uint32_t>(std::popcount(a[w] ^ b[w]));
  return d;
}

namespace {

// Top-k selection from precomputed distances: bucket by distance, take every
// bucket below the cut, then the smallest doc_ids from the cut bucket.
std::vector<std::size_t> select_nearest(std::span<const std::uint32_t> dist, std::span<const std::int64_t> doc_ids,
                                        int code_length, std::size_t k) {
  std::vector<std::size_t> histogram(static_cast<std::size_t>(code_length) + 1, 0);
  for (std::uint32_t x : dist) ++histogram[x];
  std::size_t cut = 0, below = 0;
  while (below + histogram[cut] < k) below += histogram[cut++];

  std::vector<std::size_t> chosen;
  std::vector<std::size_t> boundary;
  chosen.reserve(k);
  for (std::size_t r = 0; r < dist.size(); ++r) {
    if (dist[r] < cut) chosen.push_back(r);
    else if (dist[r] == cut) boundary.push_back(r);
  }
  const std::size_t need = k - chosen.size();
  auto by_id = [&](std::size_t a, std::size_t b) { return doc_ids[a] < doc_ids[b]; };
  std::partial_sort(boundary.begin(), boundary.begin() + static_cast<std::ptrdiff_t>(need), boundary.end(), by_id);
  chosen.insert(chosen.end(), boundary.begin(), boundary.begin() + static_cast<std::ptrdiff_t>(need));
  std::sort(chosen.begin(), chosen.end(), [&](std::size_t a, std::size_t b) {
    return dist[a] != dist[b] ? dist[a] < dist[b] : doc_ids[a] < doc_ids[b];
  });
  return chosen;
}

void check_k(const HashCodes& database, std::size_t k) {
  if (k == 0) throw ConfigError("retrieval K must be positive");
  if (k > database.n_docs())
    throw ConfigError("retrieval K=" + std::to_string(k) + " exceeds database size " +
                      std::to_string(database.n_docs()));
}

bool shares_label(const std::vector<std::int32_t>& a, const std::vector<std::int32_t>& b) {
  std::size_t p = 0, q = 0;
  while (p < a.size() && q < b.size()) {
    if (a[p] == b[q]) return true;
    if (a[p] < b[q]) ++p;
    else ++q;
  }
  return false;
}

template <typename Distances>
RetrievalResult evaluate(const HashCodes& queries, std::span<const std::vector<std::int32_t>> query_labels,
                         const HashCodes& database, std::span<const std::vector<std::int32_t>> database_labels,
                         std::size_t k, bool parallel, Distances&& distances) {
  if (queries.code_length() != database.code_length()) throw ShapeError("precision_at_k: code lengths differ");
  if (query_labels.size() != queries.n_docs() || database_labels.size() != database.n_docs())
    throw ShapeError("precision_at_k: label lists do not match codes");
  check_k(database, k);

  RetrievalResult result;
  result.k = k;
  for (std::size_t q = 0; q < queries.n_docs(); ++q)
    (query_labels[q].empty() ? result.excluded_rows : result.query_rows).push_back(q);
  if (!result.excluded_rows.empty())
    spdlog::warn("precision_at_k: {} unlabeled quer{} excluded", result.excluded_rows.size(),
                 result.excluded_rows.size() == 1 ? "y" : "ies");
  result.precisions.assign(result.query_rows.size(), 0.0);

  const auto n = static_cast<std::int64_t>(result.query_rows.size());
#pragma omp parallel if (parallel)
  {
    std::vector<std::uint32_t> dist(database.n_docs());
#pragma omp for schedule(dynamic, 16)
    for (std::int64_t t = 0; t < n; ++t) {
      const std::size_t q = result.query_rows[static_cast<std::size_t>(t)];
      distances(queries.code(q), database.words(), database.words_per_code(), std::span(dist));
      const auto top = select_nearest(dist, database.doc_ids(), database.code_length(), k);
      std::size_t hits = 0;
      for (std::size_t r : top) hits += shares_label(query_labels[q], database_labels[r]);
      result.precisions[static_cast<std::size_t>(t)] = static_cast<double>(hits) / static_cast<double>(k);
    }
  }
  // Fixed summation order regardless of thread count.
  double sum = 0.0;
  for (double p : result.precisions) sum += p;
  result.mean = result.precisions.empty() ? 0.0 : sum / static_cast<double>(result.precisions.size());
  return result;
}

}  // namespace

std::vector<std::size_t> hamming_topk_rows(std::span<const std::uint64_t> query, const HashCodes& database,
                                           std::size_t k) {
  check_k(database, k);
  if (query.size() != database.words_per_code()) throw ShapeError("hamming_topk: code lengths differ");
  std::vector<std::uint32_t> dist(database.n_docs());
  kernels::hamming_distances(query, database.words(), database.words_per_code(), dist);
  return select_nearest(dist, database.doc_ids(), database.code_length(), k);
}

std::vector<std::int64_t> hamming_topk(std::span<const std::uint64_t> query, const HashCodes& database, std::size_t k) {
  std::vector<std::int64_t> out;
  for (std::size_t r : hamming_topk_rows(query, database, k)) out.push_back(database.doc_ids()[r]);
  return out;
}

RetrievalResult precision_at_k(const HashCodes& queries, std::span<const std::vector<std::int32_t>> query_labels,
                               const HashCodes& database, std::span<const std::vector<std::int32_t>> database_labels,
                               std::size_t k) {
  return evaluate(queries, query_labels, database, database_labels, k, true,
                  [](auto q, auto db, std::size_t w, std::span<std::uint32_t> out) {
                    kernels::serial::hamming_distances(q, db, w, out);
                  });
}

namespace serial {

RetrievalResult precision_at_k(const HashCodes& queries, std::span<const std::vector<std::int32_t>> query_labels,
                               const HashCodes& database, std::span<const std::vector<std::int32_t>> database_labels,
                               std::size_t k) {
  return evaluate(queries, query_labels, database, database_labels, k, false,
                  [](auto q, auto db, std::size_t w, std::span<std::uint32_t> out) {
                    kernels::serial::hamming_distances(q, db, w, out);
                  });
}

}  // namespace serial

void save_codes(const HashCodes& codes, const std::filesystem::path& path, const std::string& lineage) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  if (!lineage.empty()) out << "# lineage " << lineage << '\n';
  out << codes.n_docs() << ' ' << codes.code_length() << '\n';
  const std::size_t n_bytes = (static_cast<std::size_t>(codes.code_length()) + 7) / 8;
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex(2 * n_bytes, '0');
  for (std::size_t r = 0; r < codes.n_docs(); ++r) {
    const auto code = codes.code(r);
    for (std::size_t byte = 0; byte < n_bytes; ++byte) {
      const auto v = static_cast<unsigned>((code[byte / 8] >> (8 * (byte % 8))) & 0xffU);
      hex[2 * byte] = kHex[v >> 4];
      hex[2 * byte + 1] = kHex[v & 0xf];
    }
    out << codes.doc_ids()[r] << ' ' << hex << '\n';
  }
}

HashCodes load_codes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  std::size_t n_docs = 0;
  int d = 0;
  bool have_header = false;
  std::vector<std::int64_t> ids;
  std::vector<std::string> hexes;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.front() == '#') continue;
    std::istringstream fields(line);
    if (!have_header) {
      if (!(fields >> n_docs >> d) || d <= 0) throw ParseError(path.string(), lineno, "expected 'n_docs d'");
      have_header = true;
      continue;
    }
    std::int64_t id = 0;
    std::string hex;
    if (!(fields >> id >> hex)) throw ParseError(path.string(), lineno, "expected 'doc_id hex'");
    if (hex.size() != 2 * ((static_cast<std::size_t>(d) + 7) / 8))
      throw ParseError(path.string(), lineno, "hex code has wrong length");
    ids.push_back(id);
    hexes.push_back(std::move(hex));
  }
  if (!have_header) throw DataError(path.string() + ": missing header");
  if (ids.size() != n_docs) throw DataError(path.string() + ": document count does not match header");
  HashCodes codes(d, std::move(ids));
  auto nibble = [&](char c) -> unsigned {
    if (c >= '0' && c <= '9') return static_cast<unsigned>(c - '0');
    if (c >= 'a' && c <= 'f') return static_cast<unsigned>(c - 'a' + 10);
    if (c >= 'A' && c <= 'F') return static_cast<unsigned>(c - 'A' + 10);
    throw DataError(path.string() + ": invalid hex digit");
  };
  for (std::size_t r = 0; r < codes.n_docs(); ++r) {
    const std::string& hex = hexes[r];
    for (std::size_t byte = 0; 2 * byte < hex.size(); ++byte) {
      const unsigned v = (nibble(hex[2 * byte]) << 4) | nibble(hex[2 * byte + 1]);
      for (int b = 0; b < 8; ++b) {
        const int n = static_cast<int>(8 * byte) + b;
        if ((v >> b) & 1U) {
          if (n >= d) throw DataError(path.string() + ": padding bits must be zero");
          codes.set_bit(r, n, true);
        }
      }
    }
  }
  return codes;
}

}  // namespace snuh
