#include "snuh/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "snuh/errors.hpp"
#include "snuh/lineage.hpp"

namespace snuh {

namespace fs = std::filesystem;
using nlohmann::json;

Ablation parse_ablation(const std::string& name) {
  if (name == "full") return Ablation::full;
  if (name == "prior") return Ablation::prior;
  if (name == "ind") return Ablation::ind;
  throw ConfigError("unknown ablation '" + name + "' (expected full, prior or ind)");
}

const char* to_string(Ablation ablation) {
  switch (ablation) {
    case Ablation::full: return "full";
    case Ablation::prior: return "prior";
    case Ablation::ind: return "ind";
  }
  return "?";
}

namespace {

void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> known) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
      throw ConfigError("unknown config key " + (where.empty() ? key : where + "." + key));
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key " + where + "." + key + " has the wrong type");
  }
}

bool on_grid(double x, double lo, double hi, double step) {
  if (x < lo - 1e-12 || x > hi + 1e-12) return false;
  const double r = (x - lo) / step;
  return std::abs(r - std::round(r)) < 1e-9;
}

template <typename T>
bool one_of(T x, std::initializer_list<T> values) {
  return std::find(values.begin(), values.end(), x) != values.end();
}

std::string hex_of(std::initializer_list<std::string> parts) {
  ContentHash h;
  for (const auto& p : parts) h.update(p).update("\n");
  return h.hex();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return {};
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool lineage_matches(const fs::path& artifact, const Lineage& expected) {
  const auto found = read_lineage(artifact);
  return found && parse_lineage(*found) == expected;
}

std::string describe(const std::optional<std::string>& lineage) { return lineage ? *lineage : "(none)"; }

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& doc) {
  PipelineConfig c;
  reject_unknown(doc, "", {"corpus", "affinity", "forest", "model", "train", "eval", "output_dir", "allow_out_of_grid",
                           "ablation"});
  if (doc.contains("corpus")) {
    const json& s = doc["corpus"];
    reject_unknown(s, "corpus", {"path", "format", "tfidf", "name"});
    std::string path;
    read(s, "path", path, "corpus");
    c.corpus.path = path;
    read(s, "format", c.corpus.format, "corpus");
    read(s, "tfidf", c.corpus.tfidf, "corpus");
    read(s, "name", c.corpus.name, "corpus");
  }
  if (doc.contains("affinity")) {
    const json& s = doc["affinity"];
    reject_unknown(s, "affinity", {"k", "metric", "bandwidth"});
    read(s, "k", c.affinity.k, "affinity");
    std::string metric = to_string(c.affinity.metric);
    read(s, "metric", metric, "affinity");
    c.affinity.metric = parse_metric(metric);
    read(s, "bandwidth", c.affinity.bandwidth, "affinity");
  }
  if (doc.contains("forest")) {
    const json& s = doc["forest"];
    reject_unknown(s, "forest", {"M", "alpha", "seed"});
    read(s, "M", c.forest.m_trees, "forest");
    read(s, "alpha", c.forest.alpha, "forest");
    read(s, "seed", c.forest.seed, "forest");
  }
  if (doc.contains("model")) {
    const json& s = doc["model"];
    reject_unknown(s, "model", {"d", "tau_sig"});
    read(s, "d", c.model.latent_dim, "model");
    read(s, "tau_sig", c.model.sigmoid_temperature, "model");
  }
  if (doc.contains("train")) {
    const json& s = doc["train"];
    reject_unknown(s, "train", {"b", "lr", "beta", "lambda", "epochs", "seed", "patience"});
    read(s, "b", c.train.batch_size, "train");
    read(s, "lr", c.train.learning_rate, "train");
    read(s, "beta", c.train.kl_weight, "train");
    read(s, "lambda", c.train.lambda, "train");
    read(s, "epochs", c.train.epochs, "train");
    read(s, "seed", c.train.seed, "train");
    read(s, "patience", c.train.patience, "train");
  }
  if (doc.contains("eval")) {
    const json& s = doc["eval"];
    reject_unknown(s, "eval", {"K"});
    read(s, "K", c.eval_k, "eval");
  }
  std::string out = c.output_dir.string();
  read(doc, "output_dir", out, "");
  c.output_dir = out;
  read(doc, "allow_out_of_grid", c.allow_out_of_grid, "");
  std::string ablation = to_string(c.ablation);
  read(doc, "ablation", ablation, "");
  c.ablation = parse_ablation(ablation);
  c.train.eval_k = c.eval_k;
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(doc);
}

json PipelineConfig::to_json() const {
  return {
      {"corpus", {{"path", corpus.path.string()}, {"format", corpus.format}, {"tfidf", corpus.tfidf},
                  {"name", corpus.name}}},
      {"affinity", {{"k", affinity.k}, {"metric", to_string(affinity.metric)}, {"bandwidth", affinity.bandwidth}}},
      {"forest", {{"M", forest.m_trees}, {"alpha", forest.alpha}, {"seed", forest.seed}}},
      {"model", {{"d", model.latent_dim}, {"tau_sig", model.sigmoid_temperature}}},
      {"train", {{"b", train.batch_size}, {"lr", train.learning_rate}, {"beta", train.kl_weight},
                 {"lambda", train.lambda}, {"epochs", train.epochs}, {"seed", train.seed},
                 {"patience", train.patience}}},
      {"eval", {{"K", eval_k}}},
      {"output_dir", output_dir.string()},
      {"allow_out_of_grid", allow_out_of_grid},
      {"ablation", to_string(ablation)},
  };
}

std::vector<std::string> PipelineConfig::out_of_grid() const {
  std::vector<std::string> bad;
  auto flag = [&](bool ok, const std::string& what) {
    if (!ok) bad.push_back(what);
  };
  flag(one_of(model.latent_dim, {16, 32, 64, 128}), "model.d=" + std::to_string(model.latent_dim) + " not in {16,32,64,128}");
  flag(one_of(train.batch_size, {32, 64, 128}), "train.b=" + std::to_string(train.batch_size) + " not in {32,64,128}");
  flag(on_grid(train.learning_rate, 0.0005, 0.0005, 1) || on_grid(train.learning_rate, 0.001, 0.001, 1) ||
           on_grid(train.learning_rate, 0.003, 0.003, 1),
       "train.lr not in {0.0005,0.001,0.003}");
  flag(on_grid(train.kl_weight, 0.01, 0.1, 0.01), "train.beta not in {0.01,...,0.1}");
  flag(on_grid(train.lambda, 0.99, 0.99, 1), "train.lambda differs from 0.99");
  flag(on_grid(model.sigmoid_temperature, 0.1, 1.0, 0.1), "model.tau_sig not in {0.1,...,1}");
  flag(forest.m_trees >= 1 && forest.m_trees <= 20, "forest.M not in 1..20");
  flag(affinity.k >= 1 && affinity.k <= 20, "affinity.k not in 1..20");
  flag(on_grid(forest.alpha, 0.1, 1.0, 0.1), "forest.alpha not in {0.1,...,1}");
  flag(affinity.metric == AffinityMetric::cosine, "affinity.metric is not cosine");
  return bad;
}

void PipelineConfig::validate() const {
  if (corpus.path.empty()) throw ConfigError("corpus.path is required");
  if (corpus.format != "bow") throw ConfigError("corpus.format '" + corpus.format + "' is not supported (bow)");
  if (affinity.k <= 0) throw ConfigError("affinity.k must be positive");
  if (affinity.metric == AffinityMetric::gaussian_kernel && !(affinity.bandwidth > 0.0))
    throw ConfigError("affinity.bandwidth must be positive");
  forest.validate();
  if (model.latent_dim <= 0) throw ConfigError("model.d must be positive");
  if (!(model.sigmoid_temperature > 0.0)) throw ConfigError("model.tau_sig must be positive");
  train.validate();
  if (eval_k == 0) throw ConfigError("eval.K must be positive");
  if (!allow_out_of_grid) {
    const auto bad = out_of_grid();
    if (!bad.empty()) {
      std::string msg = "out-of-grid settings (pass --allow-out-of-grid to accept):";
      for (const auto& b : bad) msg += "\n  " + b;
      throw ConfigError(msg);
    }
  }
}

Lineage parse_lineage(const std::string& text) {
  Lineage out;
  std::istringstream in(text);
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos || eq == 0) throw DataError("malformed lineage token '" + token + "'");
    out[token.substr(0, eq)] = token.substr(eq + 1);
  }
  return out;
}

std::string format_lineage(const Lineage& lineage) {
  std::string out;
  for (const auto& [stage, hex] : lineage) {
    if (!out.empty()) out += ' ';
    out += stage + "=" + hex;
  }
  return out;
}

ArtifactPaths ArtifactPaths::under(const fs::path& dir) {
  ArtifactPaths p;
  p.corpus_bow = dir / "corpus" / "corpus.bow";
  p.corpus_lineage = dir / "corpus" / "lineage.txt";
  p.graph = dir / "graph.txt";
  p.forest = dir / "forest.txt";
  p.checkpoint = dir / "model.ckpt";
  p.training_log = dir / "train.log";
  p.codes_train = dir / "codes_train.txt";
  p.codes_val = dir / "codes_val.txt";
  p.codes_test = dir / "codes_test.txt";
  p.report = dir / "report.txt";
  return p;
}

PrecisionSummary summarize(std::vector<double> v) {
  PrecisionSummary s;
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  s.min = v.front();
  s.p25 = q(0.25);
  s.median = q(0.5);
  s.p75 = q(0.75);
  s.max = v.back();
  return s;
}

std::string EvalReport::format() const {
  char buf[512];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-16s %4s %9s\n%-16s %4d %9.4f\n", "dataset", "d", "precision", dataset.c_str(),
                code_length, precision);
  out += buf;
  std::snprintf(buf, sizeof buf, "\nprecision@%zu over %zu queries (%zu unlabeled excluded)\n", k, n_queries,
                n_excluded);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-8s %8s %8s %8s %8s\n%-8.4f %8.4f %8.4f %8.4f %8.4f\n", "min", "p25", "median", "p75",
                "max", distribution.min, distribution.p25, distribution.median, distribution.p75, distribution.max);
  out += buf;
  return out;
}

Pipeline::Pipeline(PipelineConfig config) : config_(std::move(config)), paths_(ArtifactPaths::under(config_.output_dir)) {
  config_.validate();
  config_.train.eval_k = config_.eval_k;
  if (config_.corpus.name.empty()) config_.corpus.name = config_.corpus.path.stem().string();
  config_.train.freeze_correlation = config_.ablation == Ablation::prior;
  fs::create_directories(paths_.corpus_bow.parent_path());
}

Lineage Pipeline::corpus_lineage() const {
  const CorpusPaths src = CorpusPaths::beside(config_.corpus.path);
  if (!fs::exists(src.bow)) throw DataError("corpus file " + src.bow.string() + " does not exist");
  ContentHash h;
  h.update_file(src.bow);
  for (const fs::path& side : {src.header, src.split, src.vocab}) {
    h.update("|");
    if (fs::exists(side)) h.update_file(side);
  }
  h.update(config_.corpus.tfidf ? "|tfidf" : "|raw");
  return {{"corpus", h.hex()}};
}

StageResult Pipeline::ingest() {
  Lineage lineage = corpus_lineage();
  StageResult r{paths_.corpus_bow, lineage, false};
  if (fs::exists(paths_.corpus_bow) && read_text(paths_.corpus_lineage) == format_lineage(lineage) + "\n") {
    r.cached = true;
    spdlog::info("ingest: cache hit ({})", paths_.corpus_bow.string());
    return r;
  }
  Corpus raw = load_corpus(config_.corpus.path);
  Corpus processed = config_.corpus.tfidf ? tfidf_transform(raw).corpus : std::move(raw);
  save_corpus(processed, paths_.corpus_bow);
  write_text(paths_.corpus_lineage, format_lineage(lineage) + "\n");
  corpus_.reset();
  return r;
}

const Corpus& Pipeline::corpus() {
  if (!corpus_) {
    // Always read back from disk so cached and fresh runs see identical data.
    ingest();
    corpus_ = load_corpus(paths_.corpus_bow, LoadOptions{.allow_empty_documents = true});
  }
  return *corpus_;
}

Lineage Pipeline::graph_lineage() {
  Lineage l = corpus_lineage();
  const auto& a = config_.affinity;
  char bw[32];
  std::snprintf(bw, sizeof bw, "%.17g", a.bandwidth);
  l["graph"] = hex_of({l["corpus"], std::to_string(a.k), to_string(a.metric), bw});
  return l;
}

Lineage Pipeline::forest_lineage() {
  Lineage l = graph_lineage();
  const auto& f = config_.forest;
  char alpha[32];
  std::snprintf(alpha, sizeof alpha, "%.17g", f.alpha);
  l["forest"] = hex_of({l["graph"], std::to_string(f.m_trees), alpha, std::to_string(f.seed)});
  return l;
}

namespace {

std::string model_hex(const Lineage& upstream, const PipelineConfig& c) {
  json settings = {{"model", c.to_json()["model"]}, {"train", c.to_json()["train"]},
                   {"K", c.eval_k},                 {"ablation", to_string(c.ablation)}};
  return hex_of({format_lineage(upstream), settings.dump()});
}

}  // namespace

Lineage Pipeline::model_lineage() {
  Lineage l = config_.ablation == Ablation::ind ? corpus_lineage() : forest_lineage();
  l["model"] = model_hex(l, config_);
  return l;
}

StageResult Pipeline::build_graph() {
  const Lineage lineage = graph_lineage();
  StageResult r{paths_.graph, lineage, false};
  if (lineage_matches(paths_.graph, lineage)) {
    r.cached = true;
    spdlog::info("build-graph: cache hit ({})", paths_.graph.string());
    return r;
  }
  const Corpus& c = corpus();
  const auto rows = c.rows_in(SplitCell::train);
  const CsrMatrix features = c.weights.select_rows(rows);
  config_.affinity.validate(features.n_rows());
  const AffinityGraph graph = build_knn_graph(features, config_.affinity);
  save_graph(graph, paths_.graph, format_lineage(lineage));
  return r;
}

StageResult Pipeline::gen_trees() {
  const Lineage lineage = forest_lineage();
  StageResult r{paths_.forest, lineage, false};
  if (lineage_matches(paths_.forest, lineage)) {
    r.cached = true;
    spdlog::info("gen-trees: cache hit ({})", paths_.forest.string());
    return r;
  }
  build_graph();
  const AffinityGraph graph = load_graph(paths_.graph);
  const Corpus& c = corpus();
  const CsrMatrix features = c.weights.select_rows(c.rows_in(SplitCell::train));
  const SpanningForest forest = generate_forest(graph, features, config_.forest);
  save_forest(forest, paths_.forest, format_lineage(lineage));
  return r;
}

TrainOutcome Pipeline::train(const TrainInputs& inputs) {
  const Corpus& c = corpus();
  const Lineage corpus_l = corpus_lineage();
  const auto train_rows = c.rows_in(SplitCell::train);
  const auto val_rows = c.rows_in(SplitCell::val);

  std::vector<TrainingEdge> edges;
  Lineage upstream = corpus_l;
  if (config_.ablation != Ablation::ind) {
    const fs::path graph_path = inputs.graph ? *inputs.graph : build_graph().path;
    const fs::path forest_path = inputs.forest ? *inputs.forest : gen_trees().path;
    const auto graph_text = read_lineage(graph_path);
    const auto forest_text = read_lineage(forest_path);
    const Lineage gl = graph_text ? parse_lineage(*graph_text) : Lineage{};
    const Lineage fl = forest_text ? parse_lineage(*forest_text) : Lineage{};
    if (!gl.contains("graph") || gl.at("corpus") != corpus_l.at("corpus"))
      throw DataError("refusing to train: graph " + graph_path.string() + " has lineage " + describe(graph_text) +
                      " but the corpus is " + format_lineage(corpus_l));
    if (!fl.contains("forest") || fl.at("graph") != gl.at("graph") || fl.at("corpus") != gl.at("corpus"))
      throw DataError("refusing to train: forest " + forest_path.string() + " has lineage " + describe(forest_text) +
                      " which was not generated from graph " + describe(graph_text));
    const AffinityGraph graph = load_graph(graph_path);
    if (graph.n_nodes() != train_rows.size())
      throw DataError("graph has " + std::to_string(graph.n_nodes()) + " nodes but the corpus has " +
                      std::to_string(train_rows.size()) + " training documents");
    edges = training_edges(load_forest(forest_path).edges, graph);
    upstream = fl;
  }
  Lineage lineage = upstream;
  lineage["model"] = model_hex(upstream, config_);

  TrainOutcome outcome;
  outcome.checkpoint = {paths_.checkpoint, lineage, false};
  const fs::path summary_path = paths_.checkpoint.string() + ".json";
  std::string found;
  if (fs::exists(paths_.checkpoint) && fs::exists(summary_path)) {
    load_checkpoint(paths_.checkpoint, &found);
    if (found == format_lineage(lineage)) {
      const json summary = json::parse(read_text(summary_path));
      outcome.checkpoint.cached = true;
      outcome.best_epoch = summary.at("best_epoch").get<int>();
      outcome.best_val_precision = summary.at("best_val_precision").get<double>();
      spdlog::info("train: cache hit ({})", paths_.checkpoint.string());
      return outcome;
    }
  }

  const CsrMatrix features = c.weights.select_rows(train_rows);
  std::optional<ValidationData> validation;
  if (!val_rows.empty()) {
    ValidationData v;
    v.features = c.weights.select_rows(val_rows);
    for (std::size_t r : val_rows) v.doc_ids.push_back(c.doc_ids[r]);
    v.labels = c.labels_of(val_rows);
    for (std::size_t r : train_rows) v.train_doc_ids.push_back(c.doc_ids[r]);
    v.train_labels = c.labels_of(train_rows);
    validation = std::move(v);
  } else {
    spdlog::warn("no validation split; the last epoch is kept");
  }

  ModelConfig model = config_.model;
  model.vocab_size = static_cast<int>(c.vocab_size());
  spdlog::info("train: N={} edges={} d={} ablation={}", train_rows.size(), edges.size(), model.latent_dim,
               to_string(config_.ablation));
  Trainer trainer(features, std::move(edges), initial_params(model, config_.train), config_.train,
                  std::move(validation));
  const TrainResult result = trainer.train();

  save_checkpoint(result.params, paths_.checkpoint, format_lineage(lineage));
  write_training_log(result.log, paths_.training_log);
  outcome.best_epoch = result.best_epoch;
  outcome.diverged = result.diverged;
  for (const EpochLog& e : result.log)
    if (e.epoch == result.best_epoch) outcome.best_val_precision = e.val_precision;
  if (result.diverged) {
    fs::remove(summary_path);
    throw DivergenceError("training diverged; best checkpoint so far saved to " + paths_.checkpoint.string());
  }
  write_text(summary_path, json{{"best_epoch", outcome.best_epoch},
                                {"best_val_precision", outcome.best_val_precision},
                                {"epochs_run", result.log.size()}}
                               .dump(2) +
                               "\n");
  return outcome;
}

std::vector<StageResult> Pipeline::encode() {
  if (!fs::exists(paths_.checkpoint)) train();
  std::string lineage_text;
  const ModelParams params = load_checkpoint(paths_.checkpoint, &lineage_text);
  const Lineage lineage = parse_lineage(lineage_text);
  const Corpus& c = corpus();
  if (params.config.vocab_size != static_cast<int>(c.vocab_size()))
    throw ShapeError("checkpoint vocabulary size " + std::to_string(params.config.vocab_size) +
                     " differs from the corpus (" + std::to_string(c.vocab_size()) + ")");
  std::vector<StageResult> out;
  const std::pair<SplitCell, fs::path> targets[] = {
      {SplitCell::train, paths_.codes_train}, {SplitCell::val, paths_.codes_val}, {SplitCell::test, paths_.codes_test}};
  for (const auto& [cell, path] : targets) {
    StageResult r{path, lineage, false};
    if (lineage_matches(path, lineage)) {
      r.cached = true;
    } else {
      const auto rows = c.rows_in(cell);
      std::vector<std::int64_t> ids;
      for (std::size_t row : rows) ids.push_back(c.doc_ids[row]);
      save_codes(binarize(params, c.weights.select_rows(rows), std::move(ids)), path, lineage_text);
    }
    out.push_back(r);
  }
  return out;
}

EvalReport Pipeline::eval(const EvalInputs& inputs) {
  const fs::path ckpt = inputs.checkpoint ? *inputs.checkpoint : paths_.checkpoint;
  const fs::path queries_path = inputs.queries ? *inputs.queries : paths_.codes_test;
  const fs::path db_path = inputs.database ? *inputs.database : paths_.codes_train;
  const bool defaults = !inputs.checkpoint && !inputs.queries && !inputs.database;
  if (defaults && (!fs::exists(ckpt) || !fs::exists(queries_path) || !fs::exists(db_path))) encode();
  if (!fs::exists(ckpt)) throw DataError("checkpoint " + ckpt.string() + " does not exist");

  std::string ckpt_lineage;
  const ModelParams params = load_checkpoint(ckpt, &ckpt_lineage);
  const HashCodes queries = load_codes(queries_path);
  const HashCodes database = load_codes(db_path);
  const auto ql = read_lineage(queries_path);
  const auto dl = read_lineage(db_path);
  if (!ql || !dl || *ql != ckpt_lineage || *dl != ckpt_lineage)
    throw DataError("refusing to evaluate mixed lineages:\n  checkpoint " + ckpt_lineage + "\n  queries    " +
                    describe(ql) + "\n  database   " + describe(dl) + "\nrerun encode");
  if (queries.code_length() != params.config.latent_dim || database.code_length() != params.config.latent_dim)
    throw ShapeError("code length mismatch: checkpoint d=" + std::to_string(params.config.latent_dim) +
                     ", queries " + std::to_string(queries.code_length()) + ", database " +
                     std::to_string(database.code_length()));
  if (queries.n_docs() == 0) throw DataError("no query documents in " + queries_path.string());

  const Corpus& c = corpus();
  std::unordered_map<std::int64_t, std::size_t> row_of;
  for (std::size_t r = 0; r < c.n_docs(); ++r) row_of.emplace(c.doc_ids[r], r);
  auto labels_for = [&](const HashCodes& codes) {
    std::vector<std::vector<std::int32_t>> out;
    out.reserve(codes.n_docs());
    for (std::int64_t id : codes.doc_ids()) {
      const auto it = row_of.find(id);
      if (it == row_of.end()) throw DataError("doc_id " + std::to_string(id) + " is not in the corpus");
      out.push_back(c.labels[it->second]);
    }
    return out;
  };
  const auto qlabels = labels_for(queries);
  const auto dlabels = labels_for(database);
  const RetrievalResult result = precision_at_k(queries, qlabels, database, dlabels, config_.eval_k);

  EvalReport report;
  report.dataset = config_.corpus.name;
  report.code_length = params.config.latent_dim;
  report.k = result.k;
  report.precision = result.mean;
  report.n_queries = result.precisions.size();
  report.n_excluded = result.excluded_rows.size();
  report.distribution = summarize(result.precisions);
  write_text(paths_.report, report.format());
  return report;
}

void set_dotted(json& doc, const std::string& key, const json& value) {
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("malformed config key '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

json default_sweep_grid() {
  return {{"train.b", {32, 64, 128}}, {"train.lr", {0.0005, 0.001, 0.003}}};
}

SweepResult run_sweep(const PipelineConfig& base, const json& grid) {
  if (!grid.is_object() || grid.empty()) throw ConfigError("sweep grid must be a non-empty object of value lists");
  std::vector<std::pair<std::string, std::vector<json>>> axes;
  for (const auto& [key, values] : grid.items()) {
    if (!values.is_array() || values.empty()) throw ConfigError("sweep values for " + key + " must be a non-empty list");
    axes.emplace_back(key, std::vector<json>(values.begin(), values.end()));
  }
  std::size_t total = 1;
  for (const auto& a : axes) total *= a.second.size();

  SweepResult result;
  std::vector<json> docs;
  const fs::path root = base.output_dir;
  fs::create_directories(root);
  for (std::size_t index = 0; index < total; ++index) {
    SweepRun run;
    run.index = index;
    json doc = base.to_json();
    std::size_t rest = index;
    for (auto it = axes.rbegin(); it != axes.rend(); ++it) {
      const json& v = it->second[rest % it->second.size()];
      rest /= it->second.size();
      run.overrides[it->first] = v;
      set_dotted(doc, it->first, v);
    }
    char dir[32];
    std::snprintf(dir, sizeof dir, "run_%03zu", index);
    doc["output_dir"] = (root / "sweep" / dir).string();
    const PipelineConfig cfg = PipelineConfig::from_json(doc);
    spdlog::info("sweep {}/{}: {}", index + 1, total, run.overrides.dump());
    try {
      Pipeline p(cfg);
      const TrainOutcome t = p.train();
      run.val_precision = t.best_val_precision;
      run.best_epoch = t.best_epoch;
    } catch (const DivergenceError& e) {
      spdlog::warn("sweep run {} diverged: {}", index, e.what());
      run.diverged = true;
      run.val_precision = -std::numeric_limits<double>::infinity();
    }
    result.runs.push_back(run);
    docs.push_back(std::move(doc));
  }

  for (std::size_t i = 1; i < result.runs.size(); ++i)
    if (result.runs[i].val_precision > result.runs[result.best].val_precision) result.best = i;
  if (result.runs[result.best].diverged) throw DivergenceError("every sweep run diverged");

  std::ofstream tsv(root / "sweep.tsv");
  tsv << "run";
  for (const auto& a : axes) tsv << '\t' << a.first;
  tsv << "\tval_precision\tbest_epoch\tdiverged\n";
  for (const SweepRun& r : result.runs) {
    tsv << r.index;
    for (const auto& a : axes) tsv << '\t' << r.overrides[a.first].dump();
    char v[32];
    std::snprintf(v, sizeof v, "%.6f", r.val_precision);
    tsv << '\t' << v << '\t' << r.best_epoch << '\t' << (r.diverged ? 1 : 0) << '\n';
  }
  write_text(root / "best_config.json", docs[result.best].dump(2) + "\n");

  Pipeline best(PipelineConfig::from_json(docs[result.best]));
  result.test_report = best.eval();
  write_text(root / "report.txt", result.test_report.format());
  return result;
}

}  // namespace snuh
