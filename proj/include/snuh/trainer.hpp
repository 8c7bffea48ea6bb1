#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "snuh/corpus.hpp"
#include "snuh/forest.hpp"
#include "snuh/graph.hpp"
#include "snuh/kernels.hpp"
#include "snuh/model.hpp"
#include "snuh/rng.hpp"

namespace snuh {

struct TrainConfig {
  int batch_size = 64;
  double learning_rate = 1e-3;
  // beta: weight on both the singleton KL and the edge-correction term.
  double kl_weight = 0.05;
  double lambda = 0.99;
  int epochs = 50;
  std::uint64_t seed = 0;
  // Early stopping on validation precision; 0 disables it.
  int patience = 10;
  std::size_t eval_k = 100;
  // Hold the correlated encoder at zero so gamma = 0 (prior-only correlations).
  bool freeze_correlation = false;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const;
};

// A forest edge joined with its graph affinity.
struct TrainingEdge {
  std::int32_t i = 0;
  std::int32_t j = 0;
  double weight = 0.0;    // w_ij, fraction of trees containing the edge
  double affinity = 0.0;  // a_ij

  friend bool operator==(const TrainingEdge&, const TrainingEdge&) = default;
};

// Throws DataError when a forest edge is absent from the graph.
std::vector<TrainingEdge> training_edges(std::span<const ForestEdge> forest, const AffinityGraph& graph);

// Per-document scale: the estimator targets the full multi-tree bound divided
// by the number of training documents N,
//   recon      = mean over sampled nodes of E[log p(x|z)]
//   singleton  = mean over sampled nodes of KL(q_i || N(0, I))
//   edge_term  = |E| / (b_e N) * sum over sampled edges of w_ij * correction_ij
//   total      = recon - beta * (singleton + edge_term).
struct MinibatchObjective {
  double recon = 0.0;
  double singleton_kl = 0.0;
  double edge_term = 0.0;
  double total = 0.0;
};

struct MinibatchSample {
  std::vector<std::size_t> nodes;  // training-row indices
  std::vector<std::size_t> edges;  // indices into the training edge list
  Eigen::MatrixXd noise;           // d x nodes.size(), standard normal
};

struct ObjectiveSettings {
  double kl_weight = 0.05;
  double lambda = 0.99;
  bool freeze_correlation = false;
};

// Reconstruction from one reparameterized draw minus beta * KL.
double node_loss(const ModelParams& params, const SparseRow& x, const Eigen::VectorXd& noise, double kl_weight);
// beta * (KL(q_ij || p_ij) - KL(q_i || p_i) - KL(q_j || p_j)) with tau = lambda * a_ij.
double edge_loss(const ModelParams& params, const SparseRow& x_i, const SparseRow& x_j, double affinity, double lambda,
                 double kl_weight);

// Fills `tape` (when given) so that backward() yields d total / d params.
MinibatchObjective minibatch_objective(const ModelParams& params, const CsrMatrix& features,
                                       std::span<const TrainingEdge> edges, const MinibatchSample& sample,
                                       const ObjectiveSettings& settings, Tape* tape = nullptr);

struct AdamState {
  ModelParams m;
  ModelParams v;
  std::int64_t step = 0;

  static AdamState zeros_like(const ModelParams& params);
};

struct AdamSettings {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// One bias-corrected Adam step descending along `grads`.
void adam_step(ModelParams& params, const ModelGradients& grads, AdamState& state, const AdamSettings& settings);

struct EpochLog {
  int epoch = 0;
  double recon = 0.0;
  double kl_node = 0.0;
  double kl_edge = 0.0;
  double total = 0.0;
  double val_precision = 0.0;  // NaN without a validation set
  double seconds = 0.0;
};

// Validation queries are retrieved against the training documents.
struct ValidationData {
  CsrMatrix features;
  std::vector<std::int64_t> doc_ids;
  std::vector<std::vector<std::int32_t>> labels;
  std::vector<std::int64_t> train_doc_ids;
  std::vector<std::vector<std::int32_t>> train_labels;
};

struct TrainResult {
  ModelParams params;  // best validation epoch, or the last one without validation
  std::vector<EpochLog> log;
  int best_epoch = 0;
  bool diverged = false;
};

class Trainer {
 public:
  // `features` holds the training documents; edge endpoints index its rows.
  Trainer(const CsrMatrix& features, std::vector<TrainingEdge> edges, ModelParams initial, TrainConfig config,
          std::optional<ValidationData> validation = std::nullopt);

  // Runs one pass over the shuffled training rows. Throws DivergenceError on
  // a non-finite objective or gradient.
  EpochLog run_epoch();
  double validation_precision() const;

  // Full loop with early stopping; a divergence ends training and returns
  // the best parameters seen so far with diverged = true.
  TrainResult train();

  const ModelParams& params() const { return params_; }

 private:
  MinibatchSample draw_sample(std::span<const std::size_t> nodes);

  const CsrMatrix& features_;
  std::vector<TrainingEdge> edges_;
  ModelParams params_;
  TrainConfig config_;
  std::optional<ValidationData> validation_;
  AdamState adam_;
  Rng rng_;
  int epoch_ = 0;
};

// Parameters for a fresh run; the correlated encoder starts at zero when frozen.
ModelParams initial_params(const ModelConfig& model, const TrainConfig& train);

// One tab-separated line per epoch: epoch, recon, kl_node, kl_edge, total,
// val_precision, seconds.
void write_training_log(std::span<const EpochLog> log, const std::filesystem::path& path);
std::string format_log_line(const EpochLog& entry, bool with_seconds = true);

}  // namespace snuh
