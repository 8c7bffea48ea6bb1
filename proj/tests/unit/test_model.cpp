#include <doctest.h>

#include <cmath>
#include <limits>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "snuh/errors.hpp"
#include "snuh/model.hpp"
#include "snuh/trainer.hpp"

using namespace snuh;

namespace {

CsrMatrix random_features(int n, int vocab, std::uint64_t seed) {
  Rng rng(seed);
  CsrMatrix m(vocab);
  for (int r = 0; r < n; ++r) {
    std::vector<std::int32_t> idx;
    std::vector<double> val;
    for (int t = 0; t < vocab; ++t)
      if (rng.uniform() < 0.5 || (t == vocab - 1 && idx.empty())) {
        idx.push_back(t);
        val.push_back(0.2 + 2.0 * rng.uniform());
      }
    m.push_row(idx, val);
  }
  return m;
}

ModelParams random_params(int d, int vocab, std::uint64_t seed, double tau_sig = 1.0) {
  Rng rng(seed);
  ModelParams p = ModelParams::initialize({.latent_dim = d, .vocab_size = vocab, .sigmoid_temperature = tau_sig}, rng);
  for (auto& b : p.blocks())
    for (double& v : b.values) v += 0.3 * (2.0 * rng.uniform() - 1.0);
  return p;
}

}  // namespace

TEST_CASE("encoder activations") {
  const CsrMatrix x = random_features(5, 10, 1);
  ModelParams p = random_params(4, 10, 2);
  p.enc_mu_w.setZero();
  p.enc_mu_b.setZero();
  for (std::size_t r = 0; r < x.n_rows(); ++r) CHECK(encode(p, x.row(r)).mu == Eigen::VectorXd::Constant(4, 0.5));

  // Temperature to zero: mu approaches the step function of the activation.
  const ModelParams q = random_params(4, 10, 3);
  const Eigen::VectorXd a = encoder_activations(q, x.row(0)).mu_pre;
  ModelParams cold = q;
  cold.config.sigmoid_temperature = 1e-4;
  const Eigen::VectorXd mu = encode(cold, x.row(0)).mu;
  for (Eigen::Index n = 0; n < 4; ++n)
    if (std::abs(a[n]) > 1e-2) CHECK(std::abs(mu[n] - (a[n] > 0 ? 1.0 : 0.0)) < 1e-12);
}

TEST_CASE("encoder matches the straight-line oracle") {
  const CsrMatrix x = random_features(8, 10, 4);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ModelParams p = random_params(4, 10, seed, 0.3 + 0.1 * static_cast<double>(seed));
    for (std::size_t r = 0; r < x.n_rows(); ++r) {
      const auto q = encode(p, x.row(r));
      const auto o = oracle::encode(p, x.row(r));
      for (int n = 0; n < 4; ++n) {
        CHECK(q.mu[n] == doctest::Approx(o.mu[static_cast<std::size_t>(n)]).epsilon(1e-13));
        CHECK(q.sigma[n] == doctest::Approx(o.sigma[static_cast<std::size_t>(n)]).epsilon(1e-13));
        CHECK(q.mu[n] > 0.0);
        CHECK(q.mu[n] < 1.0);
        CHECK(q.sigma[n] > 0.0);
      }
      const auto g = encode_pair(p, x.row(r), x.row((r + 1) % x.n_rows()));
      const auto og = oracle::encode_pair(p, x.row(r), x.row((r + 1) % x.n_rows()));
      for (int n = 0; n < 4; ++n) CHECK(g[n] == doctest::Approx(og[static_cast<std::size_t>(n)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("pair encoder is order-irrelevant bit for bit") {
  const CsrMatrix x = random_features(10, 12, 5);
  const ModelParams p = random_params(8, 12, 6);
  for (std::size_t i = 0; i < x.n_rows(); ++i)
    for (std::size_t j = 0; j < x.n_rows(); ++j) {
      const Eigen::VectorXd a = encode_pair(p, x.row(i), x.row(j));
      const Eigen::VectorXd b = encode_pair(p, x.row(j), x.row(i));
      CHECK(a == b);
      CHECK(a.cwiseAbs().maxCoeff() < 1.0);
    }
  ModelParams z = p;
  z.corr_w.setZero();
  z.corr_b.setZero();
  CHECK(encode_pair(z, x.row(0), x.row(1)) == Eigen::VectorXd::Zero(8));
}

TEST_CASE("decoder log-probability") {
  ModelParams p = ModelParams::zeros({.latent_dim = 3, .vocab_size = 7});
  const CsrMatrix x = random_features(3, 7, 7);
  for (std::size_t r = 0; r < x.n_rows(); ++r)
    CHECK(decode_logprob(p, Eigen::Vector3d(0.3, -1, 2), x.row(r)) ==
          doctest::Approx(-x.row(r).sum() * std::log(7.0)).epsilon(1e-14));

  ModelParams two = ModelParams::zeros({.latent_dim = 1, .vocab_size = 2});
  two.dec_e(0, 0) = 1.0;
  two.dec_e(0, 1) = -1.0;
  CsrMatrix one(2);
  std::vector<std::int32_t> i{0};
  std::vector<double> v{1.0};
  one.push_row(i, v);
  CHECK(decode_logprob(two, Eigen::VectorXd::Constant(1, 1.0), one.row(0)) ==
        doctest::Approx(std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0)))).epsilon(1e-14));

  const ModelParams q = random_params(4, 7, 8);
  const Eigen::Vector4d z(0.5, -0.2, 1.1, 0.0);
  for (std::size_t r = 0; r < x.n_rows(); ++r) {
    const double got = decode_logprob(q, z, x.row(r));
    CHECK(got == doctest::Approx(oracle::naive_decode_logprob(q, {z.data(), z.data() + 4}, x.row(r))).epsilon(1e-12));
    ModelParams shifted = q;
    shifted.dec_b.array() += 37.5;
    CHECK(std::abs(decode_logprob(shifted, z, x.row(r)) - got) < 1e-10);
  }
  // Large logits stay finite where the naive form overflows.
  ModelParams big = q;
  big.dec_b.array() += 800.0;
  CHECK(std::isfinite(decode_logprob(big, z, x.row(0))));
}

TEST_CASE("shape errors") {
  const ModelParams p = random_params(2, 4, 1);
  CsrMatrix wide(6);
  std::vector<std::int32_t> i{5};
  std::vector<double> v{1.0};
  wide.push_row(i, v);
  CHECK_THROWS_AS(encode(p, wide.row(0)), ShapeError);
  CHECK_THROWS_AS(decode_logprob(p, Eigen::VectorXd::Zero(3), wide.row(0)), ShapeError);
  CHECK_THROWS_AS(ModelParams::zeros({.latent_dim = 0, .vocab_size = 3}), ConfigError);
}

TEST_CASE("backward of a zero objective is zero") {
  const CsrMatrix x = random_features(3, 6, 2);
  const ModelParams p = random_params(2, 6, 3);
  const std::vector<TrainingEdge> edges{{0, 1, 0.5, 0.8}};
  MinibatchSample s{{0, 1, 2}, {0}, Eigen::MatrixXd::Constant(2, 3, 0.3)};
  Tape tape;
  minibatch_objective(p, x, edges, s, {.kl_weight = 0.0, .lambda = 0.5}, &tape);
  tape.nodes.recon_scale = 0.0;
  ModelGradients g = backward(p, tape);
  for (auto& b : g.blocks())
    for (double v : b.values) CHECK(v == 0.0);
}

TEST_CASE("backward matches finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const CsrMatrix x = random_features(3, 6, 10 + seed);
    const ModelParams p = random_params(2, 6, 20 + seed, 0.7);
    const std::vector<TrainingEdge> edges{{0, 1, 0.6, 0.9}, {1, 2, 0.4, 0.7}};
    Rng rng(seed);
    MinibatchSample s{{0, 1, 2}, {0, 1}, Eigen::MatrixXd(2, 3)};
    for (Eigen::Index k = 0; k < s.noise.size(); ++k) s.noise.data()[k] = rng.normal();
    const ObjectiveSettings settings{.kl_weight = 0.3, .lambda = 0.9};
    Tape tape;
    minibatch_objective(p, x, edges, s, settings, &tape);
    ModelGradients g = backward(p, tape);
    ModelGradients fd = oracle::finite_differences(
        p, [&](const ModelParams& q) { return minibatch_objective(q, x, edges, s, settings).total; }, 1e-4);
    auto gb = g.blocks();
    auto fb = fd.blocks();
    for (std::size_t b = 0; b < gb.size(); ++b)
      for (std::size_t k = 0; k < gb[b].values.size(); ++k) {
        INFO(gb[b].name << "[" << k << "]");
        const double a = gb[b].values[k], n = fb[b].values[k];
        if (std::abs(n) > 1e-6) CHECK(std::abs(a - n) / std::abs(n) < 1e-4);
        else CHECK(std::abs(a) < 1e-6);
      }
  }
}

TEST_CASE("singleton KL gradient in mu is mu at unit sigma") {
  for (double mu : {-1.0, 0.0, 0.25, 2.0}) {
    const double h = 1e-5;
    const double up = gauss::kl_singleton_term(mu + h, 1.0), down = gauss::kl_singleton_term(mu - h, 1.0);
    CHECK((up - down) / (2 * h) == doctest::Approx(mu).epsilon(1e-8));
  }
}

TEST_CASE("non-finite gradients name the block") {
  const CsrMatrix x = random_features(2, 4, 3);
  ModelParams p = random_params(2, 4, 4);
  MinibatchSample s{{0, 1}, {}, Eigen::MatrixXd::Zero(2, 2)};
  Tape tape;
  minibatch_objective(p, x, {}, s, {}, &tape);
  tape.nodes.probs(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    backward(p, tape);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("parameter block") != std::string::npos);
  }
}

TEST_CASE("checkpoint round trip") {
  fixture::TempDir dir;
  const ModelParams p = random_params(5, 9, 11, 0.4);
  save_checkpoint(p, dir / "m.ckpt", "corpus=1 model=2");
  std::string lineage;
  const ModelParams back = load_checkpoint(dir / "m.ckpt", &lineage);
  CHECK(back == p);
  CHECK(lineage == "corpus=1 model=2");
  fixture::write_file(dir / "bad.ckpt", "NOTACKPT");
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), DataError);
}
