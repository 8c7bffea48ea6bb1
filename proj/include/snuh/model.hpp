#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "snuh/corpus.hpp"
#include "snuh/gauss.hpp"
#include "snuh/rng.hpp"

namespace snuh {

struct ModelConfig {
  int latent_dim = 32;
  int vocab_size = 0;
  // Slope control for the posterior mean: mu = sigmoid(activation / temperature).
  double sigmoid_temperature = 1.0;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Variational encoder (two affine maps |V| -> d), correlated encoder (affine
// 2|V| -> d applied to a concatenated document pair) and softmax decoder with
// embedding dec_e (d x |V|) and bias dec_b. Weight matrices are stored d x fan_in
// so one input term selects one column.
struct ModelParams {
  ModelConfig config;
  Eigen::MatrixXd enc_mu_w;
  Eigen::VectorXd enc_mu_b;
  Eigen::MatrixXd enc_sigma_w;
  Eigen::VectorXd enc_sigma_b;
  Eigen::MatrixXd corr_w;  // columns [0, |V|) see the first document, [|V|, 2|V|) the second
  Eigen::VectorXd corr_b;
  Eigen::MatrixXd dec_e;
  Eigen::VectorXd dec_b;

  static ModelParams zeros(const ModelConfig& config);
  // Weights uniform in +-1/sqrt(fan_in), biases zero.
  static ModelParams initialize(const ModelConfig& config, Rng& rng);

  struct Block {
    const char* name;
    std::span<double> values;
  };
  std::vector<Block> blocks();
  std::size_t n_parameters() const;
  void set_zero();
  bool all_finite() const;

  friend bool operator==(const ModelParams& a, const ModelParams& b);
};

// Gradients share the parameter layout.
using ModelGradients = ModelParams;

inline double sigmoid(double a) {
  if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

inline double softplus(double a) { return std::max(a, 0.0) + std::log1p(std::exp(-std::abs(a))); }

// Bounded correlation map: (1 - margin) * (2 * sigmoid(a) - 1).
inline double correlation_map(double a) { return (1.0 - gauss::kCorrelationMargin) * (2.0 * sigmoid(a) - 1.0); }

// b + W[:, offset + t] * x_t summed over the row's terms.
Eigen::VectorXd affine(const Eigen::MatrixXd& w, const Eigen::VectorXd& b, const SparseRow& x,
                       Eigen::Index column_offset = 0);

struct EncoderActivations {
  Eigen::VectorXd mu_pre;  // before the temperature and the sigmoid
  Eigen::VectorXd sigma_pre;
};

EncoderActivations encoder_activations(const ModelParams& params, const SparseRow& x);
gauss::SingletonPosterior encode(const ModelParams& params, const SparseRow& x);

struct PairActivations {
  Eigen::VectorXd forward;  // corr applied to (x_i, x_j)
  Eigen::VectorXd reverse;  // corr applied to (x_j, x_i)
};

PairActivations pair_activations(const ModelParams& params, const SparseRow& x_i, const SparseRow& x_j);
// Order-irrelevant: encode_pair(x_i, x_j) == encode_pair(x_j, x_i) exactly.
Eigen::VectorXd encode_pair(const ModelParams& params, const SparseRow& x_i, const SparseRow& x_j);

// sum_w x_w * log softmax(E^T z + b)_w, stabilized by max subtraction.
double decode_logprob(const ModelParams& params, const Eigen::VectorXd& z, const SparseRow& x);

// Forward record of one minibatch: everything backward() needs. Documents are
// columns. The coefficients are the derivatives of the scalar objective with
// respect to each recorded term, so backward() returns the gradient of
//   sum_c recon_scale * recon_c - kl_scale * kl_c
//   + sum_e edge_coefficient_e * edge_correction_e.
struct NodeTape {
  std::vector<std::size_t> rows;
  Eigen::MatrixXd mu_pre, mu, sigma_pre, sigma, noise, z;  // d x b
  Eigen::MatrixXd probs;                                   // |V| x b softmax
  double recon_scale = 0.0;
  double kl_scale = 0.0;
};

struct EdgeTape {
  std::vector<std::size_t> rows_i, rows_j;
  Eigen::MatrixXd mu_pre_i, mu_i, sigma_pre_i, sigma_i;  // d x e
  Eigen::MatrixXd mu_pre_j, mu_j, sigma_pre_j, sigma_j;
  Eigen::MatrixXd corr_forward, corr_reverse, gamma;
  std::vector<double> tau;
  std::vector<double> coefficient;
};

struct Tape {
  const CsrMatrix* features = nullptr;
  NodeTape nodes;
  EdgeTape edges;
  // Correlated encoder excluded from differentiation (gamma held at its value).
  bool freeze_correlation = false;
};

// Batch forward of the node terms: reparameterized reconstruction and
// singleton KL for each listed row. noise is d x rows.size().
void forward_nodes(const ModelParams& params, const CsrMatrix& features, std::span<const std::size_t> rows,
                   const Eigen::MatrixXd& noise, NodeTape& tape, Eigen::VectorXd& recon, Eigen::VectorXd& kl);

struct EdgeInput {
  std::size_t row_i = 0;
  std::size_t row_j = 0;
  double tau = 0.0;
};

// Batch forward of the edge-correction terms (closed form, no sampling).
void forward_edges(const ModelParams& params, const CsrMatrix& features, std::span<const EdgeInput> edges,
                   EdgeTape& tape, Eigen::VectorXd& correction);

// Exact gradient of the taped objective. Throws DivergenceError naming the
// first parameter block with a non-finite entry.
ModelGradients backward(const ModelParams& params, const Tape& tape);

// Binary checkpoint: magic, config, lineage string and every parameter block
// with its shape; doubles are stored verbatim.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path, const std::string& lineage = {});
ModelParams load_checkpoint(const std::filesystem::path& path, std::string* lineage = nullptr);

}  // namespace snuh
