#include <doctest.h>

#include <filesystem>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "snuh/errors.hpp"
#include "snuh/pipeline.hpp"

using namespace snuh;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json base_config(const fixture::TempDir& dir) {
  return {
      {"corpus", {{"path", (dir / "data" / "toy.bow").string()}}},
      {"affinity", {{"k", 5}}},
      {"forest", {{"M", 3}, {"alpha", 0.5}, {"seed", 1}}},
      {"model", {{"d", 16}}},
      {"train", {{"b", 32}, {"lr", 0.003}, {"beta", 0.05}, {"epochs", 2}, {"seed", 4}}},
      {"eval", {{"K", 10}}},
      {"output_dir", (dir / "out").string()},
  };
}

void write_toy_corpus(const fixture::TempDir& dir, int n_docs = 100) {
  fs::create_directories(dir / "data");
  save_corpus(oracle::two_cluster_corpus(n_docs, 40, 7), dir / "data" / "toy.bow");
}

}  // namespace

TEST_CASE("config documents") {
  fixture::TempDir dir;
  const json doc = base_config(dir);
  const PipelineConfig c = PipelineConfig::from_json(doc);
  CHECK(c.affinity.k == 5);
  CHECK(c.forest.m_trees == 3);
  CHECK(c.train.learning_rate == 0.003);
  CHECK(c.eval_k == 10);
  CHECK(c.train.lambda == 0.99);
  CHECK(PipelineConfig::from_json(c.to_json()).to_json() == c.to_json());

  json typo = doc;
  typo["train"]["learnrate"] = 0.1;
  CHECK_THROWS_AS(PipelineConfig::from_json(typo), ConfigError);
  json wrong_type = doc;
  wrong_type["affinity"]["k"] = "five";
  CHECK_THROWS_AS(PipelineConfig::from_json(wrong_type), ConfigError);

  SUBCASE("grid checks") {
    json off = doc;
    set_dotted(off, "model.d", 12);
    CHECK_THROWS_AS(PipelineConfig::from_json(off).validate(), ConfigError);
    set_dotted(off, "allow_out_of_grid", true);
    CHECK_NOTHROW(PipelineConfig::from_json(off).validate());
    json lam = doc;
    set_dotted(lam, "train.lambda", 0.5);
    CHECK(PipelineConfig::from_json(lam).out_of_grid().size() == 1);
    json beta = doc;
    set_dotted(beta, "train.beta", 0.2);
    CHECK_FALSE(PipelineConfig::from_json(beta).out_of_grid().empty());
    json fine = doc;
    set_dotted(fine, "train.beta", 0.07);
    set_dotted(fine, "model.tau_sig", 0.3);
    CHECK(PipelineConfig::from_json(fine).out_of_grid().empty());
  }
  SUBCASE("ablation names") {
    CHECK(parse_ablation("prior") == Ablation::prior);
    CHECK(std::string(to_string(Ablation::ind)) == "ind");
    CHECK_THROWS_AS(parse_ablation("none"), ConfigError);
  }
  SUBCASE("file loading") {
    fixture::write_file(dir / "c.json", doc.dump());
    CHECK(PipelineConfig::load(dir / "c.json").affinity.k == 5);
    fixture::write_file(dir / "broken.json", "{ not json");
    CHECK_THROWS_AS(PipelineConfig::load(dir / "broken.json"), ConfigError);
  }
}

TEST_CASE("lineage strings") {
  const Lineage l{{"corpus", "ab12"}, {"graph", "cd34"}};
  CHECK(format_lineage(l) == "corpus=ab12 graph=cd34");
  CHECK(parse_lineage("corpus=ab12 graph=cd34") == l);
  CHECK_THROWS_AS(parse_lineage("corpus"), DataError);
}

TEST_CASE("precision summary") {
  const PrecisionSummary s = summarize({0.0, 1.0, 0.5, 0.25, 0.75});
  CHECK(s.min == 0.0);
  CHECK(s.p25 == 0.25);
  CHECK(s.median == 0.5);
  CHECK(s.p75 == 0.75);
  CHECK(s.max == 1.0);
  const PrecisionSummary two = summarize({0.0, 1.0});
  CHECK(two.median == 0.5);
  CHECK(two.p25 == 0.25);
}

TEST_CASE("report format") {
  EvalReport r{"toy", 16, 10, 0.8125, 20, 1, {0.5, 0.7, 0.8, 0.9, 1.0}};
  const std::string text = r.format();
  CHECK(text.find("toy") != std::string::npos);
  CHECK(text.find("0.8125") != std::string::npos);
  CHECK(text.find("precision@10 over 20 queries (1 unlabeled excluded)") != std::string::npos);
  CHECK(text.find("median") != std::string::npos);
}

TEST_CASE("stages cache on lineage and rebuild on change") {
  fixture::TempDir dir;
  write_toy_corpus(dir);
  const json doc = base_config(dir);
  {
    Pipeline p(PipelineConfig::from_json(doc));
    CHECK_FALSE(p.ingest().cached);
    CHECK_FALSE(p.build_graph().cached);
    CHECK_FALSE(p.gen_trees().cached);
    const TrainOutcome t = p.train();
    CHECK_FALSE(t.checkpoint.cached);
    CHECK(t.checkpoint.lineage.contains("forest"));
    const EvalReport r = p.eval();
    CHECK(r.code_length == 16);
    CHECK(r.n_queries == 10);
    CHECK(r.precision >= 0.0);
    CHECK(r.precision <= 1.0);
    CHECK(fs::exists(p.paths().report));
  }
  {
    Pipeline p(PipelineConfig::from_json(doc));
    CHECK(p.ingest().cached);
    CHECK(p.build_graph().cached);
    CHECK(p.gen_trees().cached);
    CHECK(p.train().checkpoint.cached);
    for (const StageResult& s : p.encode()) CHECK(s.cached);
  }
  {
    json k3 = doc;
    set_dotted(k3, "affinity.k", 3);
    Pipeline p(PipelineConfig::from_json(k3));
    CHECK(p.ingest().cached);
    CHECK_FALSE(p.build_graph().cached);
    CHECK_FALSE(p.gen_trees().cached);
    CHECK_FALSE(p.train().checkpoint.cached);
  }
}

TEST_CASE("lineage refusals") {
  fixture::TempDir dir;
  write_toy_corpus(dir);
  const json doc = base_config(dir);
  Pipeline p(PipelineConfig::from_json(doc));
  p.gen_trees();

  // A forest from a different graph is refused.
  json other = doc;
  set_dotted(other, "affinity.k", 4);
  set_dotted(other, "output_dir", (dir / "other").string());
  Pipeline q(PipelineConfig::from_json(other));
  const StageResult foreign = q.gen_trees();
  try {
    p.train({.graph = p.paths().graph, .forest = foreign.path});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("refusing to train") != std::string::npos);
  }

  // Codes from another model are refused at evaluation.
  p.encode();
  q.encode();
  CHECK_THROWS_AS(p.eval({.checkpoint = p.paths().checkpoint, .queries = q.paths().codes_test,
                          .database = p.paths().codes_train}),
                  DataError);
  CHECK_NOTHROW(p.eval({.checkpoint = p.paths().checkpoint, .queries = p.paths().codes_test,
                        .database = p.paths().codes_train}));
}

TEST_CASE("ablations") {
  fixture::TempDir dir;
  write_toy_corpus(dir);
  json prior = base_config(dir);
  set_dotted(prior, "ablation", "prior");
  set_dotted(prior, "output_dir", (dir / "prior").string());
  Pipeline pp(PipelineConfig::from_json(prior));
  pp.train();
  const ModelParams m = load_checkpoint(pp.paths().checkpoint);
  CHECK(m.corr_w.isZero(0.0));
  CHECK(m.corr_b.isZero(0.0));

  json ind = base_config(dir);
  set_dotted(ind, "ablation", "ind");
  set_dotted(ind, "output_dir", (dir / "ind").string());
  Pipeline pi(PipelineConfig::from_json(ind));
  const TrainOutcome t = pi.train();
  CHECK_FALSE(t.checkpoint.lineage.contains("graph"));
  CHECK_FALSE(fs::exists(pi.paths().graph));
  CHECK(pi.eval().code_length == 16);
}

TEST_CASE("missing inputs") {
  fixture::TempDir dir;
  json doc = base_config(dir);
  Pipeline p(PipelineConfig::from_json(doc));
  CHECK_THROWS_AS(p.ingest(), DataError);
  set_dotted(doc, "corpus.path", "");
  CHECK_THROWS_AS(Pipeline(PipelineConfig::from_json(doc)), ConfigError);
}

TEST_CASE("small sweep") {
  fixture::TempDir dir;
  write_toy_corpus(dir);
  const PipelineConfig base = PipelineConfig::from_json(base_config(dir));
  const json grid = {{"train.lr", {0.001, 0.003}}, {"model.d", {16, 32}}};
  const SweepResult r = run_sweep(base, grid);
  REQUIRE(r.runs.size() == 4);
  for (const SweepRun& run : r.runs) {
    CHECK_FALSE(run.diverged);
    CHECK(r.runs[r.best].val_precision >= run.val_precision);
  }
  CHECK(fs::exists(dir / "out" / "sweep.tsv"));
  CHECK(fs::exists(dir / "out" / "best_config.json"));
  CHECK(fs::exists(dir / "out" / "report.txt"));
  const std::string tsv = fixture::read_file(dir / "out" / "sweep.tsv");
  CHECK(tsv.rfind("run\tmodel.d\ttrain.lr\tval_precision", 0) == 0);
  CHECK_THROWS_AS(run_sweep(base, json::object()), ConfigError);
  CHECK(default_sweep_grid().size() == 2);
}
