#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace oracle {

using snuh::CsrMatrix;
using snuh::ModelParams;
using snuh::SparseRow;

namespace {

std::vector<std::vector<double>> dense(const CsrMatrix& m) {
  std::vector<std::vector<double>> out(m.n_rows(), std::vector<double>(static_cast<std::size_t>(m.n_cols()), 0.0));
  for (std::size_t r = 0; r < m.n_rows(); ++r) {
    const SparseRow row = m.row(r);
    for (std::size_t k = 0; k < row.nnz(); ++k) out[r][static_cast<std::size_t>(row.indices[k])] = row.values[k];
  }
  return out;
}

double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

}  // namespace

std::vector<snuh::GraphEdge> brute_force_knn(const CsrMatrix& rows, int k) {
  const auto x = dense(rows);
  const std::size_t n = x.size();
  std::vector<double> norm(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (double v : x[i]) norm[i] += v * v;
    norm[i] = std::sqrt(norm[i]);
  }
  std::map<std::pair<int, int>, double> best;
  for (std::size_t i = 0; i < n; ++i) {
    if (norm[i] == 0.0) continue;
    std::vector<std::pair<double, int>> cand;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || norm[j] == 0.0) continue;
      double s = 0.0;
      for (std::size_t t = 0; t < x[i].size(); ++t) s += (x[i][t] / norm[i]) * (x[j][t] / norm[j]);
      cand.emplace_back(s, static_cast<int>(j));
    }
    std::stable_sort(cand.begin(), cand.end(), [](auto& a, auto& b) { return a.first > b.first; });
    for (int c = 0; c < k && c < static_cast<int>(cand.size()); ++c) {
      const int j = cand[static_cast<std::size_t>(c)].second;
      const double s = std::min(1.0, cand[static_cast<std::size_t>(c)].first);
      if (s <= 0.0) continue;
      auto key = std::make_pair(std::min(static_cast<int>(i), j), std::max(static_cast<int>(i), j));
      best[key] = std::max(best[key], s);
    }
  }
  std::vector<snuh::GraphEdge> out;
  for (const auto& [e, w] : best) out.push_back({e.first, e.second, w});
  return out;
}

std::vector<std::vector<int>> components(int n, const std::vector<std::pair<int, int>>& edges) {
  std::vector<int> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int v) { return parent[v] == v ? v : parent[v] = find(parent[v]); };
  for (auto [a, b] : edges) parent[find(a)] = find(b);
  std::map<int, std::vector<int>> groups;
  for (int v = 0; v < n; ++v) groups[find(v)].push_back(v);
  std::vector<std::vector<int>> out;
  for (auto& [root, members] : groups) out.push_back(members);
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

struct WalkState {
  std::vector<bool> visited;
  std::vector<int> stack;
  std::vector<std::pair<int, int>> edges;
};

void enumerate(const std::vector<std::vector<double>>& sim, const std::vector<std::vector<bool>>& adj, double alpha,
               WalkState s, double p, std::map<std::pair<int, int>, double>& out) {
  const int n = static_cast<int>(sim.size());
  if (s.stack.empty()) {
    std::vector<int> unvisited;
    for (int v = 0; v < n; ++v)
      if (!s.visited[v]) unvisited.push_back(v);
    if (unvisited.empty()) {
      for (auto e : s.edges) out[e] += p;
      return;
    }
    for (int v : unvisited) {
      WalkState next = s;
      next.visited[v] = true;
      next.stack.push_back(v);
      enumerate(sim, adj, alpha, next, p / static_cast<double>(unvisited.size()), out);
    }
    return;
  }
  const int i = s.stack.back();
  std::vector<int> open;
  double total = 0.0;
  for (int j = 0; j < n; ++j)
    if (adj[i][j] && !s.visited[j]) {
      open.push_back(j);
      total += std::exp(sim[i][j] / alpha);
    }
  if (open.empty()) {
    s.stack.pop_back();
    enumerate(sim, adj, alpha, s, p, out);
    return;
  }
  for (int j : open) {
    WalkState next = s;
    next.visited[j] = true;
    next.stack.push_back(j);
    next.edges.emplace_back(std::min(i, j), std::max(i, j));
    enumerate(sim, adj, alpha, next, p * std::exp(sim[i][j] / alpha) / total, out);
  }
}

}  // namespace

std::map<std::pair<int, int>, double> treegen_edge_probabilities(const std::vector<std::vector<double>>& sim,
                                                                const std::vector<std::vector<bool>>& adjacent,
                                                                double alpha) {
  std::map<std::pair<int, int>, double> out;
  WalkState s;
  s.visited.assign(sim.size(), false);
  enumerate(sim, adjacent, alpha, s, 1.0, out);
  return out;
}

DenseEncoding encode(const ModelParams& p, const SparseRow& x) {
  const int d = p.config.latent_dim;
  DenseEncoding q;
  q.mu.resize(static_cast<std::size_t>(d));
  q.sigma.resize(static_cast<std::size_t>(d));
  for (int n = 0; n < d; ++n) {
    double a = p.enc_mu_b[n], s = p.enc_sigma_b[n];
    for (std::size_t k = 0; k < x.nnz(); ++k) {
      a += p.enc_mu_w(n, x.indices[k]) * x.values[k];
      s += p.enc_sigma_w(n, x.indices[k]) * x.values[k];
    }
    q.mu[static_cast<std::size_t>(n)] = sigmoid(a / p.config.sigmoid_temperature);
    q.sigma[static_cast<std::size_t>(n)] = std::log(1.0 + std::exp(s)) + 1e-6;
  }
  return q;
}

std::vector<double> encode_pair(const ModelParams& p, const SparseRow& xi, const SparseRow& xj) {
  const int d = p.config.latent_dim;
  const int v = p.config.vocab_size;
  std::vector<double> gamma(static_cast<std::size_t>(d));
  for (int n = 0; n < d; ++n) {
    double f = p.corr_b[n], r = p.corr_b[n];
    for (std::size_t k = 0; k < xi.nnz(); ++k) {
      f += p.corr_w(n, xi.indices[k]) * xi.values[k];
      r += p.corr_w(n, v + xi.indices[k]) * xi.values[k];
    }
    for (std::size_t k = 0; k < xj.nnz(); ++k) {
      f += p.corr_w(n, v + xj.indices[k]) * xj.values[k];
      r += p.corr_w(n, xj.indices[k]) * xj.values[k];
    }
    const double m = 1.0 - 1e-6;
    gamma[static_cast<std::size_t>(n)] = 0.5 * (m * (2.0 * sigmoid(f) - 1.0) + m * (2.0 * sigmoid(r) - 1.0));
  }
  return gamma;
}

double naive_decode_logprob(const ModelParams& p, const std::vector<double>& z, const SparseRow& x) {
  const int v = p.config.vocab_size;
  std::vector<double> logits(static_cast<std::size_t>(v));
  double total = 0.0;
  for (int w = 0; w < v; ++w) {
    double l = p.dec_b[w];
    for (std::size_t n = 0; n < z.size(); ++n) l += z[n] * p.dec_e(static_cast<Eigen::Index>(n), w);
    logits[static_cast<std::size_t>(w)] = l;
    total += std::exp(l);
  }
  double out = 0.0;
  for (std::size_t k = 0; k < x.nnz(); ++k)
    out += x.values[k] * (logits[static_cast<std::size_t>(x.indices[k])] - std::log(total));
  return out;
}

double kl_singleton(const DenseEncoding& q) {
  double out = 0.0;
  for (std::size_t n = 0; n < q.mu.size(); ++n)
    out += 0.5 * (q.mu[n] * q.mu[n] + q.sigma[n] * q.sigma[n] - 1.0 - std::log(q.sigma[n] * q.sigma[n]));
  return out;
}

double kl_pairwise_matrix(const DenseEncoding& qi, const DenseEncoding& qj, const std::vector<double>& gamma,
                          double tau) {
  double out = 0.0;
  for (std::size_t n = 0; n < gamma.size(); ++n) {
    Eigen::Matrix2d sq, sp;
    const double c = gamma[n] * qi.sigma[n] * qj.sigma[n];
    sq << qi.sigma[n] * qi.sigma[n], c, c, qj.sigma[n] * qj.sigma[n];
    sp << 1.0, tau, tau, 1.0;
    const Eigen::Vector2d m(qi.mu[n], qj.mu[n]);
    const Eigen::Matrix2d pinv = sp.inverse();
    out += 0.5 * ((pinv * sq).trace() + m.dot(pinv * m) - 2.0 + std::log(sp.determinant() / sq.determinant()));
  }
  return out;
}

double full_batch_objective(const ModelParams& p, const CsrMatrix& features,
                            const std::vector<snuh::TrainingEdge>& edges, const Eigen::MatrixXd& noise, double beta,
                            double lambda) {
  const std::size_t n = features.n_rows();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const SparseRow x = features.row(i);
    const DenseEncoding q = oracle::encode(p, x);
    std::vector<double> z(q.mu.size());
    for (std::size_t k = 0; k < z.size(); ++k)
      z[k] = q.mu[k] + q.sigma[k] * noise(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i));
    total += naive_decode_logprob(p, z, x) - beta * kl_singleton(q);
  }
  for (const auto& e : edges) {
    const SparseRow xi = features.row(static_cast<std::size_t>(e.i));
    const SparseRow xj = features.row(static_cast<std::size_t>(e.j));
    const DenseEncoding qi = oracle::encode(p, xi), qj = oracle::encode(p, xj);
    const double tau = std::clamp(lambda * e.affinity, -(1.0 - 1e-6), 1.0 - 1e-6);
    const double corr = kl_pairwise_matrix(qi, qj, oracle::encode_pair(p, xi, xj), tau) - kl_singleton(qi) - kl_singleton(qj);
    total -= beta * e.weight * corr;
  }
  return total / static_cast<double>(n);
}

snuh::ModelGradients finite_differences(const ModelParams& p, const std::function<double(const ModelParams&)>& f,
                                        double h) {
  ModelParams work = p;
  snuh::ModelGradients g = ModelParams::zeros(p.config);
  auto wb = work.blocks();
  auto gb = g.blocks();
  for (std::size_t b = 0; b < wb.size(); ++b)
    for (std::size_t k = 0; k < wb[b].values.size(); ++k) {
      const double orig = wb[b].values[k];
      wb[b].values[k] = orig + h;
      const double up = f(work);
      wb[b].values[k] = orig - h;
      const double down = f(work);
      wb[b].values[k] = orig;
      gb[b].values[k] = (up - down) / (2.0 * h);
    }
  return g;
}

snuh::Corpus two_cluster_corpus(int n_docs, int vocab, std::uint64_t seed, int words_per_doc) {
  std::mt19937_64 gen(seed);
  snuh::Corpus c;
  c.vocabulary = snuh::Vocabulary::numbered(static_cast<std::size_t>(vocab));
  c.label_names = {"c0", "c1"};
  c.weights = CsrMatrix(vocab);
  const int block = vocab / 2;
  for (int d = 0; d < n_docs; ++d) {
    const int cluster = d % 2;
    std::map<std::int32_t, double> counts;
    std::uniform_int_distribution<int> pick(0, block - 1);
    for (int w = 0; w < words_per_doc; ++w) counts[cluster * block + pick(gen)] += 1.0;
    std::vector<std::int32_t> idx;
    std::vector<double> val;
    for (auto [t, v] : counts) {
      idx.push_back(t);
      val.push_back(v);
    }
    c.weights.push_row(idx, val);
    c.doc_ids.push_back(d);
    c.labels.push_back({cluster});
    const int slot = d % 10;
    c.split.push_back(slot < 7 ? snuh::SplitCell::train : slot < 9 ? snuh::SplitCell::val : snuh::SplitCell::test);
  }
  return c;
}

snuh::Corpus random_corpus(int n_train, int n_val, int n_test, int vocab, int words_per_doc, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  snuh::Corpus c;
  c.vocabulary = snuh::Vocabulary::numbered(static_cast<std::size_t>(vocab));
  for (int l = 0; l < 20; ++l) c.label_names.push_back("topic" + std::to_string(l));
  c.weights = CsrMatrix(vocab);
  const int n = n_train + n_val + n_test;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, 19);
  for (int d = 0; d < n; ++d) {
    const int lab = label(gen);
    std::map<std::int32_t, double> counts;
    for (int w = 0; w < words_per_doc; ++w) {
      // Half the words come from a topic-specific band, half from a shared Zipf-like head.
      int t;
      if (u(gen) < 0.5) {
        const int band = vocab / 20;
        t = lab * band + static_cast<int>(u(gen) * band);
      } else {
        t = static_cast<int>(std::pow(u(gen), 3.0) * vocab);
      }
      counts[std::min(t, vocab - 1)] += 1.0;
    }
    std::vector<std::int32_t> idx;
    std::vector<double> val;
    for (auto [t, v] : counts) {
      idx.push_back(t);
      val.push_back(v);
    }
    c.weights.push_row(idx, val);
    c.doc_ids.push_back(d);
    c.labels.push_back({lab});
    c.split.push_back(d < n_train ? snuh::SplitCell::train
                                  : d < n_train + n_val ? snuh::SplitCell::val : snuh::SplitCell::test);
  }
  return c;
}

}  // namespace oracle
