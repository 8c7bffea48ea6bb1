#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "snuh/corpus.hpp"
#include "snuh/forest.hpp"
#include "snuh/graph.hpp"
#include "snuh/hashcodes.hpp"
#include "snuh/model.hpp"
#include "snuh/trainer.hpp"

namespace snuh {

enum class Ablation { full, prior, ind };
Ablation parse_ablation(const std::string& name);
const char* to_string(Ablation ablation);

struct CorpusSource {
  std::filesystem::path path;  // the .bow file; sidecars sit beside it
  std::string format = "bow";
  bool tfidf = true;
  std::string name;  // dataset label in reports; defaults to the file stem
};

struct PipelineConfig {
  CorpusSource corpus;
  AffinityConfig affinity;
  TreeGenConfig forest;
  ModelConfig model;  // vocab_size comes from the corpus
  TrainConfig train;
  std::size_t eval_k = 100;
  std::filesystem::path output_dir = "snuh_out";
  bool allow_out_of_grid = false;
  Ablation ablation = Ablation::full;

  // Unknown keys are rejected so typos do not silently fall back to defaults.
  static PipelineConfig from_json(const nlohmann::json& doc);
  static PipelineConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  // Range checks, then the experiment grids unless allow_out_of_grid.
  void validate() const;
  std::vector<std::string> out_of_grid() const;
};

// Lineage strings are space-separated "stage=hex" pairs, one per upstream
// stage, so any two artifacts can be checked for a shared history.
using Lineage = std::map<std::string, std::string>;
Lineage parse_lineage(const std::string& text);
std::string format_lineage(const Lineage& lineage);

struct ArtifactPaths {
  std::filesystem::path corpus_bow;  // processed corpus
  std::filesystem::path corpus_lineage;
  std::filesystem::path graph;
  std::filesystem::path forest;
  std::filesystem::path checkpoint;
  std::filesystem::path training_log;
  std::filesystem::path codes_train;
  std::filesystem::path codes_val;
  std::filesystem::path codes_test;
  std::filesystem::path report;

  static ArtifactPaths under(const std::filesystem::path& output_dir);
};

struct StageResult {
  std::filesystem::path path;
  Lineage lineage;
  bool cached = false;
};

struct PrecisionSummary {
  double min = 0.0, p25 = 0.0, median = 0.0, p75 = 0.0, max = 0.0;
};
PrecisionSummary summarize(std::vector<double> values);

struct EvalReport {
  std::string dataset;
  int code_length = 0;
  std::size_t k = 0;
  double precision = 0.0;
  std::size_t n_queries = 0;
  std::size_t n_excluded = 0;
  PrecisionSummary distribution;

  std::string format() const;
};

struct TrainOutcome {
  StageResult checkpoint;
  int best_epoch = 0;
  double best_val_precision = 0.0;
  bool diverged = false;
};

// Explicit artifact inputs for train; their lineages must agree with the
// corpus and with each other.
struct TrainInputs {
  std::optional<std::filesystem::path> graph;
  std::optional<std::filesystem::path> forest;
};

struct EvalInputs {
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> queries;
  std::optional<std::filesystem::path> database;
};

// Every stage builds missing or stale upstream artifacts on demand and
// skips work when its own artifact already carries the expected lineage.
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config);

  const PipelineConfig& config() const { return config_; }
  const ArtifactPaths& paths() const { return paths_; }

  StageResult ingest();
  StageResult build_graph();
  StageResult gen_trees();
  TrainOutcome train(const TrainInputs& inputs = {});
  std::vector<StageResult> encode();
  EvalReport eval(const EvalInputs& inputs = {});

  // Expected lineages for the current config.
  Lineage corpus_lineage() const;
  Lineage graph_lineage();
  Lineage forest_lineage();
  Lineage model_lineage();

  const Corpus& corpus();

 private:
  PipelineConfig config_;
  ArtifactPaths paths_;
  std::optional<Corpus> corpus_;
};

// One row of the sweep table.
struct SweepRun {
  std::size_t index = 0;
  nlohmann::json overrides;
  double val_precision = 0.0;
  int best_epoch = 0;
  bool diverged = false;
};

struct SweepResult {
  std::vector<SweepRun> runs;
  std::size_t best = 0;
  EvalReport test_report;
};

// Cartesian product over `grid` (dotted config keys -> value lists, e.g.
// "train.b": [32, 64]). Each point trains in its own directory; the best
// validation precision is evaluated on the test split. Writes sweep.tsv and
// best_config.json under the base output directory.
SweepResult run_sweep(const PipelineConfig& base, const nlohmann::json& grid);
nlohmann::json default_sweep_grid();

// Sets a dotted key ("train.lr") in a config document.
void set_dotted(nlohmann::json& doc, const std::string& key, const nlohmann::json& value);

}  // namespace snuh
