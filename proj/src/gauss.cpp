#include "snuh/gauss.hpp"

#include <algorithm>
#include <numbers>

namespace snuh::gauss {

namespace {

void check_singleton(const SingletonPosterior& q, const char* who) {
  if (q.mu.size() != q.sigma.size()) throw ShapeError(std::string(who) + ": mu and sigma lengths differ");
  for (Eigen::Index n = 0; n < q.sigma.size(); ++n) {
    if (!(q.sigma[n] > 0.0) || !std::isfinite(q.sigma[n]))
      throw DomainError(std::string(who) + ": sigma must be positive and finite");
    if (!std::isfinite(q.mu[n])) throw DomainError(std::string(who) + ": mu must be finite");
  }
}

void check_pair(const PairwisePosterior& q, EdgePrior prior, const char* who) {
  check_singleton(q.left, who);
  check_singleton(q.right, who);
  if (q.left.mu.size() != q.right.mu.size() || q.gamma.size() != q.left.mu.size())
    throw ShapeError(std::string(who) + ": dimension mismatch");
  for (Eigen::Index n = 0; n < q.gamma.size(); ++n)
    if (!(std::abs(q.gamma[n]) < 1.0)) throw DomainError(std::string(who) + ": |gamma| must be < 1");
  if (!(std::abs(prior.tau) < 1.0)) throw DomainError(std::string(who) + ": |tau| must be < 1");
}

}  // namespace

void PriorConfig::validate() const {
  if (!(lambda >= 0.0 && lambda < 1.0)) throw ConfigError("lambda must lie in [0, 1)");
  if (latent_dim <= 0) throw ConfigError("latent dimension must be positive");
}

EdgePrior EdgePrior::from_affinity(double lambda, double affinity) {
  const double limit = 1.0 - kCorrelationMargin;
  return {std::clamp(lambda * affinity, -limit, limit)};
}

EdgeCorrectionTerm edge_correction_term(double mu_i, double sigma_i, double mu_j, double sigma_j, double gamma,
                                        double tau) {
  const double one_m_tau2 = 1.0 - tau * tau;
  const double one_m_gamma2 = 1.0 - gamma * gamma;
  EdgeCorrectionTerm t;
  t.value = kl_pairwise_term(mu_i, sigma_i, mu_j, sigma_j, gamma, tau) - kl_singleton_term(mu_i, sigma_i) -
            kl_singleton_term(mu_j, sigma_j);
  // The -1/sigma pieces of the pairwise and singleton KLs cancel.
  t.d_mu_i = (mu_i - tau * mu_j) / one_m_tau2 - mu_i;
  t.d_mu_j = (mu_j - tau * mu_i) / one_m_tau2 - mu_j;
  t.d_sigma_i = (sigma_i - tau * gamma * sigma_j) / one_m_tau2 - sigma_i;
  t.d_sigma_j = (sigma_j - tau * gamma * sigma_i) / one_m_tau2 - sigma_j;
  t.d_gamma = gamma / one_m_gamma2 - tau * sigma_i * sigma_j / one_m_tau2;
  return t;
}

double kl_singleton(const SingletonPosterior& q) {
  check_singleton(q, "kl_singleton");
  double s = 0.0;
  for (Eigen::Index n = 0; n < q.mu.size(); ++n) s += kl_singleton_term(q.mu[n], q.sigma[n]);
  return s;
}

double kl_pairwise(const PairwisePosterior& q, EdgePrior prior) {
  check_pair(q, prior, "kl_pairwise");
  double s = 0.0;
  for (Eigen::Index n = 0; n < q.gamma.size(); ++n)
    s += kl_pairwise_term(q.left.mu[n], q.left.sigma[n], q.right.mu[n], q.right.sigma[n], q.gamma[n], prior.tau);
  return s;
}

double edge_correction(const PairwisePosterior& q, EdgePrior prior) {
  return kl_pairwise(q, prior) - kl_singleton(q.left) - kl_singleton(q.right);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> sample_pair(const PairwisePosterior& q, const Eigen::VectorXd& eps1,
                                                        const Eigen::VectorXd& eps2) {
  check_pair(q, EdgePrior{}, "sample_pair");
  if (eps1.size() != q.gamma.size() || eps2.size() != q.gamma.size()) throw ShapeError("sample_pair: noise length");
  const Eigen::ArrayXd g = q.gamma.array();
  Eigen::VectorXd z_i = q.left.mu.array() + q.left.sigma.array() * eps1.array();
  Eigen::VectorXd z_j =
      q.right.mu.array() + q.right.sigma.array() * (g * eps1.array() + (1.0 - g * g).sqrt() * eps2.array());
  return {std::move(z_i), std::move(z_j)};
}

Eigen::MatrixXd tree_prior_precision(std::size_t n_nodes, std::span<const GraphEdge> tree_edges, double lambda,
                                     int latent_dim) {
  const auto d = static_cast<Eigen::Index>(latent_dim);
  const auto n = static_cast<Eigen::Index>(n_nodes);
  Eigen::MatrixXd precision = Eigen::MatrixXd::Identity(n * d, n * d);
  UnionFind cycles(n_nodes);
  for (const GraphEdge& e : tree_edges) {
    if (e.i < 0 || e.j < 0 || e.i >= n || e.j >= n || e.i == e.j) throw ShapeError("tree_prior_precision: bad edge");
    if (!cycles.unite(static_cast<std::size_t>(e.i), static_cast<std::size_t>(e.j)))
      throw DomainError("tree_prior_precision: edges contain a cycle");
    const double tau = lambda * e.weight;
    if (!(std::abs(tau) < 1.0)) throw DomainError("tree_prior_precision: |lambda * a_ij| must be < 1");
    // Pairwise precision minus the two singleton precisions (both I).
    const double inv = 1.0 / (1.0 - tau * tau);
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
    precision.block(e.i * d, e.i * d, d, d) += (inv - 1.0) * eye;
    precision.block(e.j * d, e.j * d, d, d) += (inv - 1.0) * eye;
    precision.block(e.i * d, e.j * d, d, d) += -tau * inv * eye;
    precision.block(e.j * d, e.i * d, d, d) += -tau * inv * eye;
  }
  return precision;
}

double log_density_diagonal(const Eigen::VectorXd& z, const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma) {
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  double s = 0.0;
  for (Eigen::Index n = 0; n < z.size(); ++n) {
    const double u = (z[n] - mu[n]) / sigma[n];
    s += -0.5 * log_2pi - std::log(sigma[n]) - 0.5 * u * u;
  }
  return s;
}

double log_density_pair(const Eigen::VectorXd& z_i, const Eigen::VectorXd& z_j, const Eigen::VectorXd& mu_i,
                        const Eigen::VectorXd& mu_j, const Eigen::VectorXd& sigma_i, const Eigen::VectorXd& sigma_j,
                        const Eigen::VectorXd& rho) {
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  double s = 0.0;
  for (Eigen::Index n = 0; n < z_i.size(); ++n) {
    const double u = (z_i[n] - mu_i[n]) / sigma_i[n];
    const double v = (z_j[n] - mu_j[n]) / sigma_j[n];
    const double r = rho[n];
    const double one_m_r2 = 1.0 - r * r;
    s += -log_2pi - std::log(sigma_i[n]) - std::log(sigma_j[n]) - 0.5 * std::log(one_m_r2) -
         (u * u - 2.0 * r * u * v + v * v) / (2.0 * one_m_r2);
  }
  return s;
}

}  // namespace snuh::gauss
