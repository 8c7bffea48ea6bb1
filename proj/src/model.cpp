#include "snuh/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "snuh/errors.hpp"
#include "snuh/kernels.hpp"

namespace snuh {

void ModelConfig::validate() const {
  if (latent_dim <= 0) throw ConfigError("model.d must be positive");
  if (vocab_size <= 0) throw ConfigError("model vocabulary size must be positive");
  if (!(sigmoid_temperature > 0.0)) throw ConfigError("model.tau_sig must be positive");
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
  config.validate();
  const Eigen::Index d = config.latent_dim, v = config.vocab_size;
  ModelParams p;
  p.config = config;
  p.enc_mu_w = Eigen::MatrixXd::Zero(d, v);
  p.enc_mu_b = Eigen::VectorXd::Zero(d);
  p.enc_sigma_w = Eigen::MatrixXd::Zero(d, v);
  p.enc_sigma_b = Eigen::VectorXd::Zero(d);
  p.corr_w = Eigen::MatrixXd::Zero(d, 2 * v);
  p.corr_b = Eigen::VectorXd::Zero(d);
  p.dec_e = Eigen::MatrixXd::Zero(d, v);
  p.dec_b = Eigen::VectorXd::Zero(v);
  return p;
}

ModelParams ModelParams::initialize(const ModelConfig& config, Rng& rng) {
  ModelParams p = zeros(config);
  auto fill = [&rng](Eigen::MatrixXd& w, double fan_in) {
    const double bound = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = (2.0 * rng.uniform() - 1.0) * bound;
  };
  fill(p.enc_mu_w, config.vocab_size);
  fill(p.enc_sigma_w, config.vocab_size);
  fill(p.corr_w, 2.0 * config.vocab_size);
  fill(p.dec_e, config.latent_dim);
  return p;
}

std::vector<ModelParams::Block> ModelParams::blocks() {
  auto span_of = [](auto& m) { return std::span<double>(m.data(), static_cast<std::size_t>(m.size())); };
  return {{"enc_mu_w", span_of(enc_mu_w)},       {"enc_mu_b", span_of(enc_mu_b)}, {"enc_sigma_w", span_of(enc_sigma_w)},
          {"enc_sigma_b", span_of(enc_sigma_b)}, {"corr_w", span_of(corr_w)},     {"corr_b", span_of(corr_b)},
          {"dec_e", span_of(dec_e)},             {"dec_b", span_of(dec_b)}};
}

std::size_t ModelParams::n_parameters() const {
  return static_cast<std::size_t>(enc_mu_w.size() + enc_mu_b.size() + enc_sigma_w.size() + enc_sigma_b.size() +
                                  corr_w.size() + corr_b.size() + dec_e.size() + dec_b.size());
}

void ModelParams::set_zero() {
  for (auto& b : blocks()) std::fill(b.values.begin(), b.values.end(), 0.0);
}

bool ModelParams::all_finite() const {
  return enc_mu_w.allFinite() && enc_mu_b.allFinite() && enc_sigma_w.allFinite() && enc_sigma_b.allFinite() &&
         corr_w.allFinite() && corr_b.allFinite() && dec_e.allFinite() && dec_b.allFinite();
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  return a.config == b.config && a.enc_mu_w == b.enc_mu_w && a.enc_mu_b == b.enc_mu_b &&
         a.enc_sigma_w == b.enc_sigma_w && a.enc_sigma_b == b.enc_sigma_b && a.corr_w == b.corr_w &&
         a.corr_b == b.corr_b && a.dec_e == b.dec_e && a.dec_b == b.dec_b;
}

namespace {

void check_row(const ModelParams& params, const SparseRow& x) {
  if (x.nnz() > 0 && x.indices.back() >= params.config.vocab_size)
    throw ShapeError("document has term index " + std::to_string(x.indices.back()) + " beyond |V|=" +
                     std::to_string(params.config.vocab_size));
}

// W[:, offset + t] += x_t * g for every term of x.
void scatter(Eigen::MatrixXd& w, const SparseRow& x, const Eigen::Ref<const Eigen::VectorXd>& g,
             Eigen::Index column_offset = 0) {
  for (std::size_t k = 0; k < x.nnz(); ++k) w.col(column_offset + x.indices[k]).noalias() += x.values[k] * g;
}

double correlation_map_slope(double a) {
  const double s = sigmoid(a);
  return (1.0 - gauss::kCorrelationMargin) * 2.0 * s * (1.0 - s);
}

}  // namespace

Eigen::VectorXd affine(const Eigen::MatrixXd& w, const Eigen::VectorXd& b, const SparseRow& x,
                       Eigen::Index column_offset) {
  Eigen::VectorXd out = b;
  for (std::size_t k = 0; k < x.nnz(); ++k) out.noalias() += x.values[k] * w.col(column_offset + x.indices[k]);
  return out;
}

EncoderActivations encoder_activations(const ModelParams& params, const SparseRow& x) {
  check_row(params, x);
  return {affine(params.enc_mu_w, params.enc_mu_b, x), affine(params.enc_sigma_w, params.enc_sigma_b, x)};
}

gauss::SingletonPosterior encode(const ModelParams& params, const SparseRow& x) {
  const EncoderActivations a = encoder_activations(params, x);
  const double temperature = params.config.sigmoid_temperature;
  gauss::SingletonPosterior q;
  q.mu = a.mu_pre.unaryExpr([temperature](double v) { return sigmoid(v / temperature); });
  q.sigma = a.sigma_pre.unaryExpr([](double v) { return softplus(v) + gauss::kSigmaFloor; });
  return q;
}

PairActivations pair_activations(const ModelParams& params, const SparseRow& x_i, const SparseRow& x_j) {
  check_row(params, x_i);
  check_row(params, x_j);
  const Eigen::Index v = params.config.vocab_size;
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(params.config.latent_dim);
  const Eigen::VectorXd left_i = affine(params.corr_w, zero, x_i);
  const Eigen::VectorXd left_j = affine(params.corr_w, zero, x_j);
  const Eigen::VectorXd right_i = affine(params.corr_w, zero, x_i, v);
  const Eigen::VectorXd right_j = affine(params.corr_w, zero, x_j, v);
  // Same association order in both directions keeps the symmetrization exact.
  return {(left_i + right_j) + params.corr_b, (left_j + right_i) + params.corr_b};
}

Eigen::VectorXd encode_pair(const ModelParams& params, const SparseRow& x_i, const SparseRow& x_j) {
  const PairActivations a = pair_activations(params, x_i, x_j);
  Eigen::VectorXd gamma(a.forward.size());
  for (Eigen::Index n = 0; n < gamma.size(); ++n)
    gamma[n] = 0.5 * (correlation_map(a.forward[n]) + correlation_map(a.reverse[n]));
  return gamma;
}

double decode_logprob(const ModelParams& params, const Eigen::VectorXd& z, const SparseRow& x) {
  check_row(params, x);
  if (z.size() != params.config.latent_dim) throw ShapeError("decode_logprob: latent length mismatch");
  Eigen::VectorXd logits = params.dec_e.transpose() * z + params.dec_b;
  double weighted = 0.0;
  for (std::size_t k = 0; k < x.nnz(); ++k) weighted += x.values[k] * logits[x.indices[k]];
  const double mx = logits.maxCoeff();
  const double log_norm = mx + std::log((logits.array() - mx).exp().sum());
  return weighted - x.sum() * log_norm;
}

void forward_nodes(const ModelParams& params, const CsrMatrix& features, std::span<const std::size_t> rows,
                   const Eigen::MatrixXd& noise, NodeTape& tape, Eigen::VectorXd& recon, Eigen::VectorXd& kl) {
  const Eigen::Index d = params.config.latent_dim;
  const Eigen::Index v = params.config.vocab_size;
  const auto b = static_cast<Eigen::Index>(rows.size());
  if (noise.rows() != d || noise.cols() != b) throw ShapeError("forward_nodes: noise must be d x batch");
  const double temperature = params.config.sigmoid_temperature;

  tape.rows.assign(rows.begin(), rows.end());
  tape.mu_pre.resize(d, b);
  tape.sigma_pre.resize(d, b);
  tape.noise = noise;
  for (Eigen::Index c = 0; c < b; ++c) {
    const SparseRow x = features.row(rows[static_cast<std::size_t>(c)]);
    check_row(params, x);
    tape.mu_pre.col(c) = affine(params.enc_mu_w, params.enc_mu_b, x);
    tape.sigma_pre.col(c) = affine(params.enc_sigma_w, params.enc_sigma_b, x);
  }
  tape.mu = tape.mu_pre.unaryExpr([temperature](double a) { return sigmoid(a / temperature); });
  tape.sigma = tape.sigma_pre.unaryExpr([](double a) { return softplus(a) + gauss::kSigmaFloor; });
  tape.z = tape.mu.array() + tape.sigma.array() * noise.array();

  kl.resize(b);
  for (Eigen::Index c = 0; c < b; ++c) {
    double s = 0.0;
    for (Eigen::Index n = 0; n < d; ++n) s += gauss::kl_singleton_term(tape.mu(n, c), tape.sigma(n, c));
    kl[c] = s;
  }

  tape.probs.resize(v, b);
  tape.probs.noalias() = params.dec_e.transpose() * tape.z;
  tape.probs.colwise() += params.dec_b;
  recon.resize(b);
  for (Eigen::Index c = 0; c < b; ++c) {
    const SparseRow x = features.row(rows[static_cast<std::size_t>(c)]);
    double weighted = 0.0;
    for (std::size_t k = 0; k < x.nnz(); ++k) weighted += x.values[k] * tape.probs(x.indices[k], c);
    recon[c] = weighted;
  }
  std::vector<double> log_norm(static_cast<std::size_t>(b));
  kernels::softmax_rows(std::span<double>(tape.probs.data(), static_cast<std::size_t>(tape.probs.size())),
                        static_cast<std::size_t>(v), log_norm);
  for (Eigen::Index c = 0; c < b; ++c)
    recon[c] -= features.row(rows[static_cast<std::size_t>(c)]).sum() * log_norm[static_cast<std::size_t>(c)];
}

void forward_edges(const ModelParams& params, const CsrMatrix& features, std::span<const EdgeInput> edges,
                   EdgeTape& tape, Eigen::VectorXd& correction) {
  const Eigen::Index d = params.config.latent_dim;
  const auto m = static_cast<Eigen::Index>(edges.size());
  const double temperature = params.config.sigmoid_temperature;
  for (Eigen::MatrixXd* mat : {&tape.mu_pre_i, &tape.mu_i, &tape.sigma_pre_i, &tape.sigma_i, &tape.mu_pre_j,
                               &tape.mu_j, &tape.sigma_pre_j, &tape.sigma_j, &tape.corr_forward, &tape.corr_reverse,
                               &tape.gamma})
    mat->resize(d, m);
  tape.rows_i.resize(edges.size());
  tape.rows_j.resize(edges.size());
  tape.tau.resize(edges.size());
  tape.coefficient.assign(edges.size(), 0.0);
  correction.resize(m);

  for (Eigen::Index e = 0; e < m; ++e) {
    const EdgeInput& in = edges[static_cast<std::size_t>(e)];
    if (!(std::abs(in.tau) < 1.0)) throw DomainError("forward_edges: |tau| must be < 1");
    const SparseRow xi = features.row(in.row_i);
    const SparseRow xj = features.row(in.row_j);
    tape.rows_i[static_cast<std::size_t>(e)] = in.row_i;
    tape.rows_j[static_cast<std::size_t>(e)] = in.row_j;
    tape.tau[static_cast<std::size_t>(e)] = in.tau;

    const EncoderActivations ai = encoder_activations(params, xi);
    const EncoderActivations aj = encoder_activations(params, xj);
    const PairActivations pa = pair_activations(params, xi, xj);
    tape.mu_pre_i.col(e) = ai.mu_pre;
    tape.sigma_pre_i.col(e) = ai.sigma_pre;
    tape.mu_pre_j.col(e) = aj.mu_pre;
    tape.sigma_pre_j.col(e) = aj.sigma_pre;
    tape.corr_forward.col(e) = pa.forward;
    tape.corr_reverse.col(e) = pa.reverse;

    double total = 0.0;
    for (Eigen::Index n = 0; n < d; ++n) {
      const double mu_i = sigmoid(ai.mu_pre[n] / temperature);
      const double mu_j = sigmoid(aj.mu_pre[n] / temperature);
      const double sigma_i = softplus(ai.sigma_pre[n]) + gauss::kSigmaFloor;
      const double sigma_j = softplus(aj.sigma_pre[n]) + gauss::kSigmaFloor;
      const double gamma = 0.5 * (correlation_map(pa.forward[n]) + correlation_map(pa.reverse[n]));
      tape.mu_i(n, e) = mu_i;
      tape.mu_j(n, e) = mu_j;
      tape.sigma_i(n, e) = sigma_i;
      tape.sigma_j(n, e) = sigma_j;
      tape.gamma(n, e) = gamma;
      total += gauss::kl_pairwise_term(mu_i, sigma_i, mu_j, sigma_j, gamma, in.tau) -
               gauss::kl_singleton_term(mu_i, sigma_i) - gauss::kl_singleton_term(mu_j, sigma_j);
    }
    correction[e] = total;
  }
}

ModelGradients backward(const ModelParams& params, const Tape& tape) {
  if (tape.features == nullptr) throw ShapeError("backward: tape has no feature matrix");
  const CsrMatrix& features = *tape.features;
  const Eigen::Index d = params.config.latent_dim;
  const double temperature = params.config.sigmoid_temperature;
  ModelGradients grad = ModelParams::zeros(params.config);

  auto push_encoder = [&](const SparseRow& x, const Eigen::VectorXd& g_mu_pre, const Eigen::VectorXd& g_sigma_pre) {
    grad.enc_mu_b += g_mu_pre;
    scatter(grad.enc_mu_w, x, g_mu_pre);
    grad.enc_sigma_b += g_sigma_pre;
    scatter(grad.enc_sigma_w, x, g_sigma_pre);
  };

  const NodeTape& nt = tape.nodes;
  const auto b = static_cast<Eigen::Index>(nt.rows.size());
  if (b > 0) {
    // d recon / d logits = x - |x| * softmax, scaled by the recon coefficient.
    Eigen::VectorXd doc_mass(b);
    for (Eigen::Index c = 0; c < b; ++c) doc_mass[c] = features.row(nt.rows[static_cast<std::size_t>(c)]).sum();
    Eigen::MatrixXd residual = nt.probs * (-nt.recon_scale * doc_mass).asDiagonal();
    for (Eigen::Index c = 0; c < b; ++c) {
      const SparseRow x = features.row(nt.rows[static_cast<std::size_t>(c)]);
      for (std::size_t k = 0; k < x.nnz(); ++k) residual(x.indices[k], c) += nt.recon_scale * x.values[k];
    }
    grad.dec_b = residual.rowwise().sum();
    grad.dec_e.noalias() = nt.z * residual.transpose();
    const Eigen::MatrixXd d_z = params.dec_e * residual;

    const Eigen::ArrayXXd mu = nt.mu.array();
    const Eigen::ArrayXXd sigma = nt.sigma.array();
    const Eigen::ArrayXXd d_mu = d_z.array() - nt.kl_scale * mu;
    const Eigen::ArrayXXd d_sigma = d_z.array() * nt.noise.array() - nt.kl_scale * (sigma - 1.0 / sigma);
    const Eigen::MatrixXd g_mu_pre = (d_mu * mu * (1.0 - mu) / temperature).matrix();
    const Eigen::MatrixXd g_sigma_pre =
        (d_sigma * nt.sigma_pre.array().unaryExpr([](double a) { return sigmoid(a); })).matrix();
    for (Eigen::Index c = 0; c < b; ++c)
      push_encoder(features.row(nt.rows[static_cast<std::size_t>(c)]), g_mu_pre.col(c), g_sigma_pre.col(c));
  }

  const EdgeTape& et = tape.edges;
  const Eigen::Index v = params.config.vocab_size;
  Eigen::VectorXd g_mu_i(d), g_sig_i(d), g_mu_j(d), g_sig_j(d), g_fwd(d), g_rev(d);
  for (std::size_t e = 0; e < et.coefficient.size(); ++e) {
    const double coef = et.coefficient[e];
    if (coef == 0.0) continue;
    const auto ec = static_cast<Eigen::Index>(e);
    for (Eigen::Index n = 0; n < d; ++n) {
      const double mu_i = et.mu_i(n, ec), mu_j = et.mu_j(n, ec);
      const gauss::EdgeCorrectionTerm t = gauss::edge_correction_term(
          mu_i, et.sigma_i(n, ec), mu_j, et.sigma_j(n, ec), et.gamma(n, ec), et.tau[e]);
      g_mu_i[n] = coef * t.d_mu_i * mu_i * (1.0 - mu_i) / temperature;
      g_mu_j[n] = coef * t.d_mu_j * mu_j * (1.0 - mu_j) / temperature;
      g_sig_i[n] = coef * t.d_sigma_i * sigmoid(et.sigma_pre_i(n, ec));
      g_sig_j[n] = coef * t.d_sigma_j * sigmoid(et.sigma_pre_j(n, ec));
      const double d_gamma = coef * t.d_gamma;
      g_fwd[n] = 0.5 * d_gamma * correlation_map_slope(et.corr_forward(n, ec));
      g_rev[n] = 0.5 * d_gamma * correlation_map_slope(et.corr_reverse(n, ec));
    }
    const SparseRow xi = features.row(et.rows_i[e]);
    const SparseRow xj = features.row(et.rows_j[e]);
    push_encoder(xi, g_mu_i, g_sig_i);
    push_encoder(xj, g_mu_j, g_sig_j);
    if (!tape.freeze_correlation) {
      // forward = corr(x_i || x_j), reverse = corr(x_j || x_i).
      grad.corr_b += g_fwd + g_rev;
      scatter(grad.corr_w, xi, g_fwd);
      scatter(grad.corr_w, xj, g_fwd, v);
      scatter(grad.corr_w, xj, g_rev);
      scatter(grad.corr_w, xi, g_rev, v);
    }
  }

  for (const auto& block : grad.blocks())
    for (double g : block.values)
      if (!std::isfinite(g)) throw DivergenceError(std::string("non-finite gradient in parameter block ") + block.name);
  return grad;
}

namespace {

constexpr char kMagic[8] = {'S', 'N', 'U', 'H', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError("checkpoint truncated");
  return v;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path, const std::string& lineage) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  write_pod(out, kVersion);
  write_pod(out, static_cast<std::int32_t>(params.config.latent_dim));
  write_pod(out, static_cast<std::int32_t>(params.config.vocab_size));
  write_pod(out, params.config.sigmoid_temperature);
  write_pod(out, static_cast<std::uint64_t>(lineage.size()));
  out.write(lineage.data(), static_cast<std::streamsize>(lineage.size()));

  auto put = [&out](const char* name, const auto& m) {
    const std::string n(name);
    write_pod(out, static_cast<std::uint32_t>(n.size()));
    out.write(n.data(), static_cast<std::streamsize>(n.size()));
    write_pod(out, static_cast<std::uint64_t>(m.rows()));
    write_pod(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  };
  write_pod(out, std::uint32_t{8});
  put("enc_mu_w", params.enc_mu_w);
  put("enc_mu_b", params.enc_mu_b);
  put("enc_sigma_w", params.enc_sigma_w);
  put("enc_sigma_b", params.enc_sigma_b);
  put("corr_w", params.corr_w);
  put("corr_b", params.corr_b);
  put("dec_e", params.dec_e);
  put("dec_b", params.dec_b);
  if (!out) throw DataError("failed writing " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path, std::string* lineage) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw DataError(path.string() + ": not a checkpoint");
  if (read_pod<std::uint32_t>(in) != kVersion) throw DataError(path.string() + ": unsupported checkpoint version");
  ModelConfig config;
  config.latent_dim = read_pod<std::int32_t>(in);
  config.vocab_size = read_pod<std::int32_t>(in);
  config.sigmoid_temperature = read_pod<double>(in);
  const auto lineage_len = read_pod<std::uint64_t>(in);
  if (lineage_len > 4096) throw DataError(path.string() + ": corrupt lineage field");
  std::string lin(lineage_len, '\0');
  in.read(lin.data(), static_cast<std::streamsize>(lineage_len));
  if (lineage) *lineage = lin;

  ModelParams p = ModelParams::zeros(config);
  const auto n_blocks = read_pod<std::uint32_t>(in);
  auto blocks = p.blocks();
  if (n_blocks != blocks.size()) throw DataError(path.string() + ": unexpected block count");
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes = {
      {p.enc_mu_w.rows(), p.enc_mu_w.cols()}, {p.enc_mu_b.size(), 1}, {p.enc_sigma_w.rows(), p.enc_sigma_w.cols()},
      {p.enc_sigma_b.size(), 1},              {p.corr_w.rows(), p.corr_w.cols()}, {p.corr_b.size(), 1},
      {p.dec_e.rows(), p.dec_e.cols()},       {p.dec_b.size(), 1}};
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const auto name_len = read_pod<std::uint32_t>(in);
    if (name_len > 64) throw DataError(path.string() + ": corrupt block name");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (name != blocks[k].name) throw DataError(path.string() + ": expected block " + blocks[k].name + ", got " + name);
    const auto rows = read_pod<std::uint64_t>(in);
    const auto cols = read_pod<std::uint64_t>(in);
    if (static_cast<Eigen::Index>(rows) != shapes[k].first || static_cast<Eigen::Index>(cols) != shapes[k].second)
      throw DataError(path.string() + ": shape mismatch in block " + name);
    in.read(reinterpret_cast<char*>(blocks[k].values.data()),
            static_cast<std::streamsize>(blocks[k].values.size() * sizeof(double)));
    if (!in) throw DataError(path.string() + ": truncated block " + name);
  }
  return p;
}

}  // namespace snuh
