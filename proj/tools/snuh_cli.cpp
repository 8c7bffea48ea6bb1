// Command-line driver for the hashing pipeline.
//
//   snuh <subcommand> [--config cfg.json] [overrides...]
//
// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric divergence.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <omp.h>
#include <spdlog/spdlog.h>

#include "snuh/errors.hpp"
#include "snuh/pipeline.hpp"

namespace {

using nlohmann::json;

struct Overrides {
  std::optional<std::string> corpus, name, output_dir, metric, ablation;
  std::optional<bool> tfidf;
  std::optional<int> k, m_trees, d, b, epochs, patience;
  std::optional<double> bandwidth, alpha, tau_sig, lr, beta, lambda;
  std::optional<std::uint64_t> forest_seed, seed;
  std::optional<std::size_t> eval_k;
  bool allow_out_of_grid = false;

  void apply(json& doc) const {
    auto put = [&](const char* key, const auto& v) {
      if (v) snuh::set_dotted(doc, key, *v);
    };
    put("corpus.path", corpus);
    put("corpus.name", name);
    put("corpus.tfidf", tfidf);
    put("output_dir", output_dir);
    put("affinity.k", k);
    put("affinity.metric", metric);
    put("affinity.bandwidth", bandwidth);
    put("forest.M", m_trees);
    put("forest.alpha", alpha);
    put("forest.seed", forest_seed);
    put("model.d", d);
    put("model.tau_sig", tau_sig);
    put("train.b", b);
    put("train.lr", lr);
    put("train.beta", beta);
    put("train.lambda", lambda);
    put("train.epochs", epochs);
    put("train.seed", seed);
    put("train.patience", patience);
    put("eval.K", eval_k);
    put("ablation", ablation);
    if (allow_out_of_grid) doc["allow_out_of_grid"] = true;
  }
};

void print_stage(const char* what, const snuh::StageResult& r) {
  std::printf("%s: %s%s\n  lineage %s\n", what, r.path.string().c_str(), r.cached ? " (cached)" : "",
              snuh::format_lineage(r.lineage).c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic hashing with a tree-approximated graph prior"};
  app.require_subcommand(1);

  std::string config_path, log_level = "info";
  int threads = 0;
  Overrides o;
  auto global = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "JSON config file");
    sub->add_option("--corpus", o.corpus, "bow corpus file (sidecars beside it)");
    sub->add_option("--name", o.name, "dataset name in reports");
    sub->add_option("--tfidf", o.tfidf, "apply TFIDF weighting at ingest");
    sub->add_option("-o,--output-dir", o.output_dir, "artifact directory");
    sub->add_option("-k,--k", o.k, "neighbors per document");
    sub->add_option("--metric", o.metric, "cosine | gaussian-kernel");
    sub->add_option("--bandwidth", o.bandwidth, "gaussian kernel bandwidth");
    sub->add_option("-M,--trees", o.m_trees, "number of spanning trees");
    sub->add_option("--alpha", o.alpha, "tree sampling temperature");
    sub->add_option("--forest-seed", o.forest_seed, "tree sampling seed");
    sub->add_option("-d,--bits", o.d, "code length");
    sub->add_option("--tau-sig", o.tau_sig, "sigmoid temperature of the posterior mean");
    sub->add_option("-b,--batch-size", o.b, "minibatch size");
    sub->add_option("--lr", o.lr, "learning rate");
    sub->add_option("--beta", o.beta, "KL weight");
    sub->add_option("--lambda", o.lambda, "prior correlation strength");
    sub->add_option("--epochs", o.epochs, "training epochs");
    sub->add_option("--seed", o.seed, "training seed");
    sub->add_option("--patience", o.patience, "early-stopping patience (0 disables)");
    sub->add_option("-K,--eval-k", o.eval_k, "retrieval depth for precision@K");
    sub->add_option("--ablation", o.ablation, "full | prior | ind");
    sub->add_flag("--allow-out-of-grid", o.allow_out_of_grid, "accept settings outside the experiment grids");
    sub->add_option("--log-level", log_level, "trace|debug|info|warn|error|off");
    sub->add_option("--threads", threads, "OpenMP threads (0 = default)");
  };

  auto* ingest = app.add_subcommand("ingest", "load and TFIDF-weight the corpus");
  auto* build_graph = app.add_subcommand("build-graph", "KNN affinity graph over the training documents");
  auto* gen_trees = app.add_subcommand("gen-trees", "sample spanning trees from the graph");
  auto* train = app.add_subcommand("train", "train the model, keeping the best validation checkpoint");
  auto* encode = app.add_subcommand("encode", "write hash codes for every split");
  auto* eval = app.add_subcommand("eval", "precision@K of test queries against the training codes");
  auto* sweep = app.add_subcommand("sweep", "grid search selected on validation precision");
  for (auto* sub : {ingest, build_graph, gen_trees, train, encode, eval, sweep}) global(sub);

  snuh::TrainInputs train_inputs;
  std::string graph_in, forest_in;
  train->add_option("--graph", graph_in, "use this graph file instead of the cached one");
  train->add_option("--forest", forest_in, "use this forest file instead of the cached one");
  std::string ckpt_in, queries_in, db_in;
  eval->add_option("--checkpoint", ckpt_in, "checkpoint to evaluate");
  eval->add_option("--queries", queries_in, "query codes file");
  eval->add_option("--database", db_in, "database codes file");
  std::string grid_path;
  sweep->add_option("--grid", grid_path, "JSON object of dotted keys to value lists");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  spdlog::set_level(spdlog::level::from_str(log_level));
  spdlog::set_pattern("[%l] %v");
  if (threads > 0) omp_set_num_threads(threads);

  try {
    json doc = json::object();
    if (!config_path.empty()) doc = snuh::PipelineConfig::load(config_path).to_json();
    o.apply(doc);
    const snuh::PipelineConfig config = snuh::PipelineConfig::from_json(doc);

    if (sweep->parsed()) {
      json grid = snuh::default_sweep_grid();
      if (!grid_path.empty()) {
        std::ifstream in(grid_path);
        if (!in) throw snuh::ConfigError("cannot open grid " + grid_path);
        try {
          grid = json::parse(in);
        } catch (const json::parse_error& e) {
          throw snuh::ConfigError(grid_path + ": " + e.what());
        }
      }
      const snuh::SweepResult r = snuh::run_sweep(config, grid);
      std::printf("best run %zu: %s (val precision %.4f)\n\n%s", r.best, r.runs[r.best].overrides.dump().c_str(),
                  r.runs[r.best].val_precision, r.test_report.format().c_str());
      return 0;
    }

    snuh::Pipeline pipeline(config);
    if (ingest->parsed()) {
      print_stage("corpus", pipeline.ingest());
      const snuh::CorpusStats s = snuh::stats(pipeline.corpus());
      std::printf("  N=%zu |V|=%zu train/val/test=%zu/%zu/%zu nnz=%zu\n", s.n_docs, s.vocab_size, s.n_train, s.n_val,
                  s.n_test, s.nnz);
    } else if (build_graph->parsed()) {
      print_stage("graph", pipeline.build_graph());
    } else if (gen_trees->parsed()) {
      print_stage("forest", pipeline.gen_trees());
    } else if (train->parsed()) {
      if (!graph_in.empty()) train_inputs.graph = graph_in;
      if (!forest_in.empty()) train_inputs.forest = forest_in;
      const snuh::TrainOutcome t = pipeline.train(train_inputs);
      print_stage("checkpoint", t.checkpoint);
      std::printf("  best epoch %d, validation precision@%zu %.4f\n", t.best_epoch, config.eval_k,
                  t.best_val_precision);
    } else if (encode->parsed()) {
      for (const auto& r : pipeline.encode()) print_stage("codes", r);
    } else if (eval->parsed()) {
      snuh::EvalInputs in;
      if (!ckpt_in.empty()) in.checkpoint = ckpt_in;
      if (!queries_in.empty()) in.queries = queries_in;
      if (!db_in.empty()) in.database = db_in;
      std::fputs(pipeline.eval(in).format().c_str(), stdout);
    }
  } catch (const snuh::ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return 2;
  } catch (const snuh::DivergenceError& e) {
    spdlog::error("diverged: {}", e.what());
    return 4;
  } catch (const snuh::DomainError& e) {
    spdlog::error("numeric: {}", e.what());
    return 4;
  } catch (const snuh::DataError& e) {
    spdlog::error("data: {}", e.what());
    return 3;
  } catch (const snuh::ShapeError& e) {
    spdlog::error("data: {}", e.what());
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    spdlog::error("data: {}", e.what());
    return 3;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
