#include "snuh/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string_view>
#include <unordered_map>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "snuh/errors.hpp"

namespace snuh {

namespace {

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_on(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

std::vector<std::string_view> split_whitespace(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

constexpr std::string_view kLabelsTag = "# labels ";

bool is_skippable(std::string_view line) {
  line = trim(line);
  return line.empty() || line.front() == '#';
}

struct Header {
  std::size_t vocab_size = 0;
  std::size_t n_docs = 0;
};

Header read_header(const std::filesystem::path& path) {
  auto in = open_input(path);
  Header h;
  bool have_v = false, have_n = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (is_skippable(line)) continue;
    const auto fields = split_whitespace(trim(line));
    std::size_t value = 0;
    if (fields.size() != 2 || !parse_number(fields[1], value))
      throw ParseError(path.string(), lineno, "expected '<key> <value>'");
    if (fields[0] == "vocab_size") {
      h.vocab_size = value;
      have_v = true;
    } else if (fields[0] == "num_docs") {
      h.n_docs = value;
      have_n = true;
    } else {
      throw ParseError(path.string(), lineno, "unknown header key '" + std::string(fields[0]) + "'");
    }
  }
  if (!have_v || !have_n) throw DataError(path.string() + ": header must declare vocab_size and num_docs");
  if (h.vocab_size == 0) throw DataError(path.string() + ": vocab_size must be positive");
  return h;
}

}  // namespace

double SparseRow::sum() const { return std::accumulate(values.begin(), values.end(), 0.0); }

double SparseRow::squared_norm() const {
  double s = 0.0;
  for (double v : values) s += v * v;
  return s;
}

double dot(const SparseRow& a, const SparseRow& b) {
  double s = 0.0;
  std::size_t p = 0, q = 0;
  while (p < a.nnz() && q < b.nnz()) {
    if (a.indices[p] < b.indices[q]) {
      ++p;
    } else if (a.indices[p] > b.indices[q]) {
      ++q;
    } else {
      s += a.values[p++] * b.values[q++];
    }
  }
  return s;
}

double cosine(const SparseRow& a, const SparseRow& b) {
  const double na = a.squared_norm();
  const double nb = b.squared_norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (std::sqrt(na) * std::sqrt(nb));
}

void CsrMatrix::push_row(std::span<const std::int32_t> indices, std::span<const double> values) {
  if (indices.size() != values.size()) throw ShapeError("push_row: indices/values length mismatch");
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] < 0 || indices[k] >= n_cols_) throw BoundsError("push_row: column index out of range");
    if (k > 0 && indices[k] <= indices[k - 1]) throw DataError("push_row: indices must be strictly increasing");
  }
  indices_.insert(indices_.end(), indices.begin(), indices.end());
  values_.insert(values_.end(), values.begin(), values.end());
  row_ptr_.push_back(static_cast<std::int64_t>(values_.size()));
}

CsrMatrix CsrMatrix::select_rows(std::span<const std::size_t> rows) const {
  CsrMatrix out(n_cols_);
  for (std::size_t r : rows) {
    const SparseRow src = row(r);
    out.push_row(src.indices, src.values);
  }
  return out;
}

CsrMatrix CsrMatrix::l2_normalized() const {
  CsrMatrix out = *this;
  for (std::size_t r = 0; r < n_rows(); ++r) {
    const double norm = std::sqrt(row(r).squared_norm());
    if (norm == 0.0) continue;
    for (auto k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) out.values_[static_cast<std::size_t>(k)] /= norm;
  }
  return out;
}

Vocabulary Vocabulary::numbered(std::size_t size) {
  Vocabulary v;
  v.terms.reserve(size);
  for (std::size_t i = 0; i < size; ++i) v.terms.push_back(std::to_string(i));
  return v;
}

const char* to_string(SplitCell cell) {
  switch (cell) {
    case SplitCell::train: return "train";
    case SplitCell::val: return "val";
    case SplitCell::test: return "test";
  }
  return "?";
}

std::vector<std::size_t> Corpus::rows_in(SplitCell cell) const {
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < split.size(); ++r)
    if (split[r] == cell) rows.push_back(r);
  return rows;
}

std::vector<std::vector<std::int32_t>> Corpus::labels_of(std::span<const std::size_t> rows) const {
  std::vector<std::vector<std::int32_t>> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(labels[r]);
  return out;
}

CorpusStats stats(const Corpus& corpus) {
  CorpusStats s;
  s.n_docs = corpus.n_docs();
  s.vocab_size = corpus.vocab_size();
  s.nnz = corpus.weights.nnz();
  for (SplitCell c : corpus.split) {
    if (c == SplitCell::train) ++s.n_train;
    else if (c == SplitCell::val) ++s.n_val;
    else ++s.n_test;
  }
  return s;
}

CorpusPaths CorpusPaths::beside(const std::filesystem::path& bow) {
  CorpusPaths p;
  p.bow = bow;
  p.header = bow.string() + ".header";
  p.split = bow.string() + ".split";
  p.vocab = bow.string() + ".vocab";
  return p;
}

Corpus load_corpus(const CorpusPaths& paths, const LoadOptions& options) {
  const Header header = read_header(paths.header);
  if (header.vocab_size > static_cast<std::size_t>(INT32_MAX)) throw DataError("vocab_size too large");

  Corpus corpus;
  corpus.weights = CsrMatrix(static_cast<std::int32_t>(header.vocab_size));

  if (!paths.vocab.empty() && std::filesystem::exists(paths.vocab)) {
    auto in = open_input(paths.vocab);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      corpus.vocabulary.terms.push_back(line);
    }
    if (corpus.vocabulary.size() != header.vocab_size)
      throw DataError(paths.vocab.string() + ": " + std::to_string(corpus.vocabulary.size()) +
                      " terms but header declares " + std::to_string(header.vocab_size));
    std::unordered_set<std::string> seen;
    for (const auto& t : corpus.vocabulary.terms)
      if (!seen.insert(t).second) throw ValidationError(paths.vocab.string() + ": duplicate term '" + t + "'");
  } else {
    corpus.vocabulary = Vocabulary::numbered(header.vocab_size);
  }

  std::unordered_map<std::string, std::int32_t> label_index;
  std::unordered_map<std::int64_t, std::size_t> row_of_doc;
  std::vector<std::pair<std::int32_t, double>> entries;
  std::vector<std::int32_t> idx_buf;
  std::vector<double> val_buf;

  auto in = open_input(paths.bow);
  const std::string fname = paths.bow.string();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // Optional label table written by save_corpus; fixes label numbering.
    if (line.starts_with(kLabelsTag) && corpus.doc_ids.empty() && corpus.label_names.empty()) {
      for (std::string_view lab : split_on(trim(std::string_view(line).substr(kLabelsTag.size())), ',')) {
        lab = trim(lab);
        if (lab.empty()) continue;
        if (label_index.emplace(std::string(lab), static_cast<std::int32_t>(corpus.label_names.size())).second)
          corpus.label_names.emplace_back(lab);
      }
      continue;
    }
    if (is_skippable(line)) continue;
    const auto parts = split_on(line, '|');
    if (parts.size() != 3) throw ParseError(fname, lineno, "expected '<doc_id> | <idx>:<weight> ... | <labels>'");

    std::int64_t doc_id = 0;
    if (!parse_number(parts[0], doc_id)) throw ParseError(fname, lineno, "bad doc_id");
    if (!row_of_doc.emplace(doc_id, corpus.doc_ids.size()).second)
      throw ValidationError(fname + ":" + std::to_string(lineno) + ": duplicate doc_id " + std::to_string(doc_id));

    entries.clear();
    for (std::string_view tok : split_whitespace(parts[1])) {
      const auto colon = tok.find(':');
      std::int64_t idx = 0;
      double w = 0.0;
      if (colon == std::string_view::npos || !parse_number(tok.substr(0, colon), idx) ||
          !parse_number(tok.substr(colon + 1), w))
        throw ParseError(fname, lineno, "bad term entry '" + std::string(tok) + "'");
      if (idx < 0 || static_cast<std::size_t>(idx) >= header.vocab_size)
        throw BoundsError("doc " + std::to_string(doc_id) + ": term index " + std::to_string(idx) +
                          " out of range for |V|=" + std::to_string(header.vocab_size) + " (line " +
                          std::to_string(lineno) + ")");
      if (!std::isfinite(w) || w < 0.0)
        throw ValidationError("doc " + std::to_string(doc_id) + ": weight must be finite and >= 0");
      if (w != 0.0) entries.emplace_back(static_cast<std::int32_t>(idx), w);
    }
    if (entries.empty() && !options.allow_empty_documents) throw ValidationError("doc " + std::to_string(doc_id) + ": empty document");
    std::sort(entries.begin(), entries.end());
    for (std::size_t k = 1; k < entries.size(); ++k)
      if (entries[k].first == entries[k - 1].first)
        throw ParseError(fname, lineno, "term index " + std::to_string(entries[k].first) + " repeated");

    idx_buf.clear();
    val_buf.clear();
    for (const auto& [i, w] : entries) {
      idx_buf.push_back(i);
      val_buf.push_back(w);
    }
    corpus.weights.push_row(idx_buf, val_buf);

    std::vector<std::int32_t> doc_labels;
    const auto label_field = trim(parts[2]);
    if (!label_field.empty()) {
      for (std::string_view lab : split_on(label_field, ',')) {
        lab = trim(lab);
        if (lab.empty()) throw ParseError(fname, lineno, "empty label");
        auto [it, inserted] =
            label_index.emplace(std::string(lab), static_cast<std::int32_t>(corpus.label_names.size()));
        if (inserted) corpus.label_names.emplace_back(lab);
        doc_labels.push_back(it->second);
      }
      std::sort(doc_labels.begin(), doc_labels.end());
      doc_labels.erase(std::unique(doc_labels.begin(), doc_labels.end()), doc_labels.end());
    }
    corpus.labels.push_back(std::move(doc_labels));
    corpus.doc_ids.push_back(doc_id);
  }

  if (corpus.n_docs() != header.n_docs)
    throw ValidationError(fname + ": " + std::to_string(corpus.n_docs()) + " documents but header declares " +
                          std::to_string(header.n_docs));

  if (!paths.split.empty() && std::filesystem::exists(paths.split)) {
    constexpr auto unset = static_cast<SplitCell>(0xff);
    corpus.split.assign(corpus.n_docs(), unset);
    auto sin = open_input(paths.split);
    const std::string sname = paths.split.string();
    lineno = 0;
    while (std::getline(sin, line)) {
      ++lineno;
      if (is_skippable(line)) continue;
      const auto fields = split_whitespace(trim(line));
      std::int64_t doc_id = 0;
      if (fields.size() != 2 || !parse_number(fields[0], doc_id))
        throw ParseError(sname, lineno, "expected '<doc_id> <train|val|test>'");
      SplitCell cell;
      if (fields[1] == "train") cell = SplitCell::train;
      else if (fields[1] == "val") cell = SplitCell::val;
      else if (fields[1] == "test") cell = SplitCell::test;
      else throw ParseError(sname, lineno, "unknown split '" + std::string(fields[1]) + "'");
      const auto it = row_of_doc.find(doc_id);
      if (it == row_of_doc.end()) throw ValidationError(sname + ": unknown doc_id " + std::to_string(doc_id));
      if (corpus.split[it->second] != unset)
        throw ValidationError(sname + ": doc_id " + std::to_string(doc_id) + " assigned twice");
      corpus.split[it->second] = cell;
    }
    for (std::size_t r = 0; r < corpus.n_docs(); ++r)
      if (corpus.split[r] == unset)
        throw ValidationError(sname + ": doc_id " + std::to_string(corpus.doc_ids[r]) + " has no split");
  } else {
    spdlog::warn("no split file for {}; all documents assigned to train", fname);
    corpus.split.assign(corpus.n_docs(), SplitCell::train);
  }

  std::set<std::int32_t> train_labels;
  for (std::size_t r = 0; r < corpus.n_docs(); ++r)
    if (corpus.split[r] == SplitCell::train) train_labels.insert(corpus.labels[r].begin(), corpus.labels[r].end());
  std::set<std::int32_t> unseen;
  for (std::size_t r = 0; r < corpus.n_docs(); ++r)
    if (corpus.split[r] == SplitCell::test)
      for (auto l : corpus.labels[r])
        if (!train_labels.contains(l)) unseen.insert(l);
  if (!unseen.empty())
    spdlog::warn("{} label(s) occur in test but not in train (e.g. '{}')", unseen.size(),
                 corpus.label_names[static_cast<std::size_t>(*unseen.begin())]);

  const CorpusStats s = stats(corpus);
  spdlog::info("loaded {}: N={} |V|={} train/val/test={}/{}/{}", fname, s.n_docs, s.vocab_size, s.n_train, s.n_val,
               s.n_test);
  return corpus;
}

void save_corpus(const Corpus& corpus, const CorpusPaths& paths) {
  {
    std::ofstream out(paths.header);
    if (!out) throw DataError("cannot write " + paths.header.string());
    out << "vocab_size " << corpus.vocab_size() << "\nnum_docs " << corpus.n_docs() << "\n";
  }
  {
    std::ofstream out(paths.bow);
    if (!out) throw DataError("cannot write " + paths.bow.string());
    char buf[64];
    if (!corpus.label_names.empty()) {
      out << kLabelsTag;
      for (std::size_t k = 0; k < corpus.label_names.size(); ++k) out << (k ? "," : "") << corpus.label_names[k];
      out << '\n';
    }
    for (std::size_t r = 0; r < corpus.n_docs(); ++r) {
      out << corpus.doc_ids[r] << " |";
      const SparseRow row = corpus.weights.row(r);
      for (std::size_t k = 0; k < row.nnz(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g", row.values[k]);
        out << ' ' << row.indices[k] << ':' << buf;
      }
      out << " |";
      for (std::size_t k = 0; k < corpus.labels[r].size(); ++k)
        out << (k ? "," : " ") << corpus.label_names[static_cast<std::size_t>(corpus.labels[r][k])];
      out << '\n';
    }
  }
  {
    std::ofstream out(paths.split);
    if (!out) throw DataError("cannot write " + paths.split.string());
    for (std::size_t r = 0; r < corpus.n_docs(); ++r) out << corpus.doc_ids[r] << ' ' << to_string(corpus.split[r]) << '\n';
  }
  if (!paths.vocab.empty()) {
    std::ofstream out(paths.vocab);
    if (!out) throw DataError("cannot write " + paths.vocab.string());
    for (const auto& t : corpus.vocabulary.terms) out << t << '\n';
  }
}

TfidfResult tfidf_transform(const Corpus& counts) {
  const std::size_t n = counts.n_docs();
  if (n == 0) throw ValidationError("tfidf_transform: empty corpus");

  std::vector<std::size_t> df(counts.vocab_size(), 0);
  for (std::int32_t idx : counts.weights.indices()) ++df[static_cast<std::size_t>(idx)];

  std::vector<double> idf(df.size(), 0.0);
  for (std::size_t t = 0; t < df.size(); ++t)
    if (df[t] > 0) idf[t] = std::log(static_cast<double>(n) / static_cast<double>(df[t]));

  TfidfResult result;
  Corpus& out = result.corpus;
  out.vocabulary = counts.vocabulary;
  out.doc_ids = counts.doc_ids;
  out.labels = counts.labels;
  out.label_names = counts.label_names;
  out.split = counts.split;
  out.weights = CsrMatrix(counts.weights.n_cols());

  std::vector<std::int32_t> idx_buf;
  std::vector<double> val_buf;
  for (std::size_t r = 0; r < n; ++r) {
    const SparseRow row = counts.weights.row(r);
    idx_buf.clear();
    val_buf.clear();
    for (std::size_t k = 0; k < row.nnz(); ++k) {
      const double w = row.values[k] * idf[static_cast<std::size_t>(row.indices[k])];
      if (w == 0.0) continue;
      idx_buf.push_back(row.indices[k]);
      val_buf.push_back(w);
    }
    if (idx_buf.empty()) result.zero_doc_ids.push_back(counts.doc_ids[r]);
    out.weights.push_row(idx_buf, val_buf);
  }
  if (!result.zero_doc_ids.empty())
    spdlog::warn("tfidf: {} document(s) have all-zero weights (first doc_id {})", result.zero_doc_ids.size(),
                 result.zero_doc_ids.front());
  return result;
}

}  // namespace snuh
