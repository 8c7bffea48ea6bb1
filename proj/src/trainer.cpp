#include "snuh/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include <spdlog/spdlog.h>

#include "snuh/errors.hpp"
#include "snuh/hashcodes.hpp"

namespace snuh {

void TrainConfig::validate() const {
  if (batch_size <= 0) throw ConfigError("train.b must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(kl_weight >= 0.0)) throw ConfigError("train.beta must be >= 0");
  if (!(lambda >= 0.0 && lambda < 1.0)) throw ConfigError("train.lambda must lie in [0, 1)");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (patience < 0) throw ConfigError("train.patience must be >= 0");
  if (eval_k == 0) throw ConfigError("eval K must be positive");
}

std::vector<TrainingEdge> training_edges(std::span<const ForestEdge> forest, const AffinityGraph& graph) {
  std::vector<TrainingEdge> out;
  out.reserve(forest.size());
  for (const ForestEdge& e : forest) {
    if (e.i < 0 || e.j < 0 || static_cast<std::size_t>(e.j) >= graph.n_nodes())
      throw DataError("forest edge outside the graph");
    const double a = graph.weight(e.i, e.j);
    if (a == 0.0)
      throw DataError("forest edge (" + std::to_string(e.i) + "," + std::to_string(e.j) + ") is not a graph edge");
    out.push_back({e.i, e.j, e.weight, a});
  }
  return out;
}

double node_loss(const ModelParams& params, const SparseRow& x, const Eigen::VectorXd& noise, double kl_weight) {
  const gauss::SingletonPosterior q = encode(params, x);
  const Eigen::VectorXd z = q.mu.array() + q.sigma.array() * noise.array();
  return decode_logprob(params, z, x) - kl_weight * gauss::kl_singleton(q);
}

double edge_loss(const ModelParams& params, const SparseRow& x_i, const SparseRow& x_j, double affinity, double lambda,
                 double kl_weight) {
  gauss::PairwisePosterior q{encode(params, x_i), encode(params, x_j), encode_pair(params, x_i, x_j)};
  return kl_weight * gauss::edge_correction(q, gauss::EdgePrior::from_affinity(lambda, affinity));
}

MinibatchObjective minibatch_objective(const ModelParams& params, const CsrMatrix& features,
                                       std::span<const TrainingEdge> edges, const MinibatchSample& sample,
                                       const ObjectiveSettings& settings, Tape* tape) {
  Tape local;
  Tape& t = tape ? *tape : local;
  t.features = &features;
  t.freeze_correlation = settings.freeze_correlation;
  const double n_docs = static_cast<double>(features.n_rows());

  MinibatchObjective obj;
  Eigen::VectorXd recon, kl;
  forward_nodes(params, features, sample.nodes, sample.noise, t.nodes, recon, kl);
  const double b = static_cast<double>(sample.nodes.size());
  if (b > 0) {
    obj.recon = recon.sum() / b;
    obj.singleton_kl = kl.sum() / b;
    t.nodes.recon_scale = 1.0 / b;
    t.nodes.kl_scale = settings.kl_weight / b;
  }

  if (!edges.empty() && !sample.edges.empty()) {
    std::vector<EdgeInput> inputs;
    inputs.reserve(sample.edges.size());
    for (std::size_t e : sample.edges) {
      const TrainingEdge& te = edges[e];
      inputs.push_back({static_cast<std::size_t>(te.i), static_cast<std::size_t>(te.j),
                        gauss::EdgePrior::from_affinity(settings.lambda, te.affinity).tau});
    }
    Eigen::VectorXd correction;
    forward_edges(params, features, inputs, t.edges, correction);
    const double scale = static_cast<double>(edges.size()) / (static_cast<double>(sample.edges.size()) * n_docs);
    double weighted = 0.0;
    for (std::size_t k = 0; k < sample.edges.size(); ++k) {
      const double w = edges[sample.edges[k]].weight;
      weighted += w * correction[static_cast<Eigen::Index>(k)];
      t.edges.coefficient[k] = -settings.kl_weight * scale * w;
    }
    obj.edge_term = scale * weighted;
  } else {
    t.edges = EdgeTape{};
  }
  obj.total = obj.recon - settings.kl_weight * (obj.singleton_kl + obj.edge_term);
  return obj;
}

AdamState AdamState::zeros_like(const ModelParams& params) {
  return {ModelParams::zeros(params.config), ModelParams::zeros(params.config), 0};
}

void adam_step(ModelParams& params, const ModelGradients& grads, AdamState& state, const AdamSettings& settings) {
  ++state.step;
  kernels::AdamCoefficients c;
  c.learning_rate = settings.learning_rate;
  c.beta1 = settings.beta1;
  c.beta2 = settings.beta2;
  c.epsilon = settings.epsilon;
  c.correction1 = 1.0 - std::pow(settings.beta1, static_cast<double>(state.step));
  c.correction2 = 1.0 - std::pow(settings.beta2, static_cast<double>(state.step));
  auto p = params.blocks();
  auto g = const_cast<ModelGradients&>(grads).blocks();
  auto m = state.m.blocks();
  auto v = state.v.blocks();
  for (std::size_t k = 0; k < p.size(); ++k) kernels::adam_update(p[k].values, g[k].values, m[k].values, v[k].values, c);
}

ModelParams initial_params(const ModelConfig& model, const TrainConfig& train) {
  Rng rng(train.seed ^ 0x9e3779b97f4a7c15ULL);
  ModelParams p = ModelParams::initialize(model, rng);
  if (train.freeze_correlation) {
    p.corr_w.setZero();
    p.corr_b.setZero();
  }
  return p;
}

Trainer::Trainer(const CsrMatrix& features, std::vector<TrainingEdge> edges, ModelParams initial, TrainConfig config,
                 std::optional<ValidationData> validation)
    : features_(features),
      edges_(std::move(edges)),
      params_(std::move(initial)),
      config_(config),
      validation_(std::move(validation)),
      adam_(AdamState::zeros_like(params_)),
      rng_(config.seed) {
  config_.validate();
  if (features_.n_rows() == 0) throw ValidationError("trainer: no training documents");
  if (features_.n_cols() != params_.config.vocab_size) throw ShapeError("trainer: feature width differs from |V|");
  for (const TrainingEdge& e : edges_)
    if (e.i < 0 || e.j < 0 || static_cast<std::size_t>(std::max(e.i, e.j)) >= features_.n_rows())
      throw ShapeError("trainer: edge endpoint beyond the training rows");
}

MinibatchSample Trainer::draw_sample(std::span<const std::size_t> nodes) {
  MinibatchSample s;
  s.nodes.assign(nodes.begin(), nodes.end());
  if (!edges_.empty()) {
    s.edges.resize(static_cast<std::size_t>(config_.batch_size));
    for (auto& e : s.edges) e = static_cast<std::size_t>(rng_.uniform_index(edges_.size()));
  }
  s.noise.resize(params_.config.latent_dim, static_cast<Eigen::Index>(nodes.size()));
  for (Eigen::Index k = 0; k < s.noise.size(); ++k) s.noise.data()[k] = rng_.normal();
  return s;
}

EpochLog Trainer::run_epoch() {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = features_.n_rows();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng_.uniform_index(i)]);

  const ObjectiveSettings settings{config_.kl_weight, config_.lambda, config_.freeze_correlation};
  const AdamSettings adam{config_.learning_rate, config_.adam_beta1, config_.adam_beta2, config_.adam_epsilon};
  const auto b = static_cast<std::size_t>(config_.batch_size);

  EpochLog log;
  log.epoch = ++epoch_;
  std::size_t steps = 0;
  Tape tape;
  for (std::size_t begin = 0; begin < n; begin += b) {
    const std::size_t end = std::min(n, begin + b);
    const MinibatchSample sample = draw_sample(std::span(order).subspan(begin, end - begin));
    const MinibatchObjective obj = minibatch_objective(params_, features_, edges_, sample, settings, &tape);
    if (!std::isfinite(obj.total))
      throw DivergenceError("non-finite objective at epoch " + std::to_string(epoch_) + ", step " +
                            std::to_string(steps + 1));
    ModelGradients grads = backward(params_, tape);
    // Adam descends, the objective is maximized.
    for (auto& block : grads.blocks())
      for (double& g : block.values) g = -g;
    adam_step(params_, grads, adam_, adam);
    log.recon += obj.recon;
    log.kl_node += obj.singleton_kl;
    log.kl_edge += obj.edge_term;
    log.total += obj.total;
    ++steps;
  }
  if (steps > 0) {
    const auto s = static_cast<double>(steps);
    log.recon /= s;
    log.kl_node /= s;
    log.kl_edge /= s;
    log.total /= s;
  }
  if (!params_.all_finite()) throw DivergenceError("non-finite parameters after epoch " + std::to_string(epoch_));
  log.val_precision = validation_precision();
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return log;
}

double Trainer::validation_precision() const {
  if (!validation_ || validation_->doc_ids.empty()) return std::numeric_limits<double>::quiet_NaN();
  const HashCodes db = binarize(params_, features_, validation_->train_doc_ids);
  const HashCodes queries = binarize(params_, validation_->features, validation_->doc_ids);
  const std::size_t k = std::min(config_.eval_k, db.n_docs());
  return precision_at_k(queries, validation_->labels, db, validation_->train_labels, k).mean;
}

TrainResult Trainer::train() {
  TrainResult result;
  result.params = params_;
  double best = -std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int e = 0; e < config_.epochs; ++e) {
    EpochLog entry;
    try {
      entry = run_epoch();
    } catch (const DivergenceError& err) {
      spdlog::error("training diverged: {}", err.what());
      result.diverged = true;
      break;
    }
    result.log.push_back(entry);
    spdlog::info("epoch {}: total={:.6f} recon={:.6f} kl_node={:.6f} kl_edge={:.6f} val_p={:.4f} ({:.2f}s)",
                 entry.epoch, entry.total, entry.recon, entry.kl_node, entry.kl_edge, entry.val_precision,
                 entry.seconds);
    const bool has_val = !std::isnan(entry.val_precision);
    if (!has_val || entry.val_precision > best) {
      best = has_val ? entry.val_precision : best;
      result.params = params_;
      result.best_epoch = entry.epoch;
      since_best = 0;
    } else if (config_.patience > 0 && ++since_best >= config_.patience) {
      spdlog::info("early stop: no validation improvement for {} epochs", config_.patience);
      break;
    }
  }
  return result;
}

std::string format_log_line(const EpochLog& entry, bool with_seconds) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g", entry.epoch, entry.recon, entry.kl_node,
                entry.kl_edge, entry.total, entry.val_precision);
  std::string line(buf);
  if (with_seconds) {
    std::snprintf(buf, sizeof buf, "\t%.3f", entry.seconds);
    line += buf;
  }
  return line;
}

void write_training_log(std::span<const EpochLog> log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const EpochLog& e : log) out << format_log_line(e) << '\n';
}

}  // namespace snuh
