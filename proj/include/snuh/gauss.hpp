#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "snuh/errors.hpp"
#include "snuh/graph.hpp"

// Gaussian math for the graph-induced prior: one- and two-node marginals of
// N(0, (I + lambda A) (x) I_d), diagonal and pairwise-correlated posteriors, and
// their KL divergences in closed form. Every function here is pure.
namespace snuh::gauss {

inline constexpr double kSigmaFloor = 1e-6;
// Correlations are kept inside (-1 + margin, 1 - margin).
inline constexpr double kCorrelationMargin = 1e-6;

struct PriorConfig {
  double lambda = 0.99;
  int latent_dim = 32;

  void validate() const;
};

struct SingletonPosterior {
  Eigen::VectorXd mu;
  Eigen::VectorXd sigma;  // standard deviations
};

struct PairwisePosterior {
  SingletonPosterior left;
  SingletonPosterior right;
  Eigen::VectorXd gamma;  // per-dimension correlation, |gamma| < 1
};

struct EdgePrior {
  double tau = 0.0;

  // tau = lambda * a, clamped to |tau| <= 1 - kCorrelationMargin.
  static EdgePrior from_affinity(double lambda, double affinity);
};

// Per-dimension closed forms. No argument checking; callers guarantee
// sigma > 0, |gamma| < 1, |tau| < 1.
inline double kl_singleton_term(double mu, double sigma) {
  return 0.5 * (mu * mu + sigma * sigma - 1.0 - 2.0 * std::log(sigma));
}

inline double kl_pairwise_term(double mu_i, double sigma_i, double mu_j, double sigma_j, double gamma, double tau) {
  const double one_m_tau2 = 1.0 - tau * tau;
  const double quad = sigma_i * sigma_i + sigma_j * sigma_j - 2.0 * tau * gamma * sigma_i * sigma_j + mu_i * mu_i +
                      mu_j * mu_j - 2.0 * tau * mu_i * mu_j;
  return 0.5 * (std::log(one_m_tau2) - 2.0 * std::log(sigma_i) - 2.0 * std::log(sigma_j) -
                std::log(1.0 - gamma * gamma) - 2.0 + quad / one_m_tau2);
}

// Value and partial derivatives of
// KL(q_ij || p_ij) - KL(q_i || p_i) - KL(q_j || p_j) for one dimension.
struct EdgeCorrectionTerm {
  double value = 0.0;
  double d_mu_i = 0.0;
  double d_sigma_i = 0.0;
  double d_mu_j = 0.0;
  double d_sigma_j = 0.0;
  double d_gamma = 0.0;
};

EdgeCorrectionTerm edge_correction_term(double mu_i, double sigma_i, double mu_j, double sigma_j, double gamma,
                                        double tau);

// Checked vector forms.
double kl_singleton(const SingletonPosterior& q);
double kl_pairwise(const PairwisePosterior& q, EdgePrior prior);
double edge_correction(const PairwisePosterior& q, EdgePrior prior);

// Reparameterized draw from the pairwise posterior using the lower Cholesky
// factor of its 2x2 per-dimension covariance.
std::pair<Eigen::VectorXd, Eigen::VectorXd> sample_pair(const PairwisePosterior& q, const Eigen::VectorXd& eps1,
                                                        const Eigen::VectorXd& eps2);

// Joint precision matrix (n*d x n*d, node-major blocks) of the tree-structured
// prior built from standard-normal singletons and, on each tree edge, the
// pairwise marginal with correlation lambda * a_ij.
Eigen::MatrixXd tree_prior_precision(std::size_t n_nodes, std::span<const GraphEdge> tree_edges, double lambda,
                                     int latent_dim);

// Log densities used by the Monte-Carlo oracle.
double log_density_diagonal(const Eigen::VectorXd& z, const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma);
// Independent across dimensions; dimension n of (z_i, z_j) is bivariate normal
// with correlation rho(n).
double log_density_pair(const Eigen::VectorXd& z_i, const Eigen::VectorXd& z_j, const Eigen::VectorXd& mu_i,
                        const Eigen::VectorXd& mu_j, const Eigen::VectorXd& sigma_i, const Eigen::VectorXd& sigma_j,
                        const Eigen::VectorXd& rho);

struct McEstimate {
  double estimate = 0.0;
  double standard_error = 0.0;
};

// Monte-Carlo estimate of KL(q || p) = E_q[log q - log p] with the standard
// error of the mean. `sample()` draws from q.
template <typename Sample, typename LogQ, typename LogP>
McEstimate mc_kl_oracle(LogQ&& log_q, LogP&& log_p, Sample&& sample, std::size_t n_samples) {
  if (n_samples < 10000) throw DomainError("mc_kl_oracle: need at least 1e4 samples");
  double mean = 0.0, m2 = 0.0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    const auto draw = sample();
    const double lq = log_q(draw);
    const double lp = log_p(draw);
    const double x = lq - lp;
    if (!std::isfinite(x))
      throw DomainError("mc_kl_oracle: non-finite log-density ratio at draw " + std::to_string(s) +
                        " (log q = " + std::to_string(lq) + ", log p = " + std::to_string(lp) + ")");
    const double delta = x - mean;
    mean += delta / static_cast<double>(s + 1);
    m2 += delta * (x - mean);
  }
  const double var = m2 / static_cast<double>(n_samples - 1);
  return {mean, std::sqrt(var / static_cast<double>(n_samples))};
}

}  // namespace snuh::gauss
