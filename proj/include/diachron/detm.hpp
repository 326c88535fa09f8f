// Apache License, Version 2.0, refer to LICENSE.txt

// Dynamic embedded topic model, mean-field variant.
//
// Generative story (per window t, topic k, sub-document d in window t_d):
//   alpha[k][0]  ~ N(0, alpha0_variance I)
//   alpha[k][t]  ~ N(alpha[k][t-1], sigma2_alpha I)
//   eta[0]       ~ N(0, eta0_variance I)
//   eta[t]       ~ N(eta[t-1], sigma2_eta I)
//   z_d          ~ N(eta[t_d], theta_prior_variance I),  theta_d = softmax(z_d)
//   w_dn         ~ Cat(sum_k theta_dk beta[k][t_d]),     beta[k][t] = softmax(rho alpha[k][t])
//
// q(alpha) and q(eta) are diagonal Gaussians per (k, t) and per t; q(z_d) is
// produced by a one-hidden-layer tanh encoder over the normalised bag of
// words concatenated with a window one-hot. All parameters live in a single
// flat vector addressed through DetmLayout.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diachron/corpus.hpp"
#include "diachron/embeddings.hpp"
#include "diachron/error.hpp"

namespace diachron {

struct DetmConfig {
  std::size_t topics = 50;
  std::size_t windows = 0;        // T
  std::size_t embedding_dim = 0;  // L; 0 = take from rho
  std::size_t epochs = 1000;
  std::size_t batch_size = 2000;
  double learning_rate = 0.016;
  double sigma2_alpha = 0.005 * 0.005;
  double sigma2_eta = 0.005 * 0.005;
  double alpha0_variance = 1.0;
  double eta0_variance = 1.0;
  double theta_prior_variance = 1.0;  // a2
  std::size_t hidden_size = 128;
  std::uint64_t seed = 1;
  std::size_t patience = 10;
  double lr_decay = 0.5;
  double kl_anneal_fraction = 0.1;
  double init_alpha_scale = 0.1;
  double init_log_variance = -9.0;
  bool train_rho = false;
  std::size_t threads = 1;

  void validate() const {
    if (topics < 2) throw InvalidArgument("detm topics must be at least 2");
    if (windows < 2) throw InvalidArgument("detm windows must be at least 2");
    if (epochs == 0 || batch_size == 0 || hidden_size == 0 || threads == 0) {
      throw InvalidArgument("detm epochs, batch_size, hidden_size and threads must be positive");
    }
    auto positive = [](double v, const char* name) {
      if (!(v > 0) || !std::isfinite(v)) throw InvalidArgument(std::string("detm ") + name + " must be positive");
    };
    positive(learning_rate, "learning_rate");
    positive(sigma2_alpha, "sigma2_alpha");
    positive(sigma2_eta, "sigma2_eta");
    positive(alpha0_variance, "alpha0_variance");
    positive(eta0_variance, "eta0_variance");
    positive(theta_prior_variance, "theta_prior_variance");
    positive(lr_decay, "lr_decay");
    if (kl_anneal_fraction < 0 || kl_anneal_fraction > 1) {
      throw InvalidArgument("detm kl_anneal_fraction must lie in [0, 1]");
    }
  }
};

inline void to_json(nlohmann::json& j, const DetmConfig& c) {
  j = {{"topics", c.topics},
       {"windows", c.windows},
       {"embedding_dim", c.embedding_dim},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"sigma2_alpha", c.sigma2_alpha},
       {"sigma2_eta", c.sigma2_eta},
       {"alpha0_variance", c.alpha0_variance},
       {"eta0_variance", c.eta0_variance},
       {"theta_prior_variance", c.theta_prior_variance},
       {"hidden_size", c.hidden_size},
       {"seed", c.seed},
       {"patience", c.patience},
       {"lr_decay", c.lr_decay},
       {"kl_anneal_fraction", c.kl_anneal_fraction},
       {"init_alpha_scale", c.init_alpha_scale},
       {"init_log_variance", c.init_log_variance},
       {"train_rho", c.train_rho}};
}

// `threads` is deliberately not serialised: it does not change the model.
inline void from_json(const nlohmann::json& j, DetmConfig& c) {
  c.topics = j.value("topics", c.topics);
  c.windows = j.value("windows", c.windows);
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.sigma2_alpha = j.value("sigma2_alpha", c.sigma2_alpha);
  c.sigma2_eta = j.value("sigma2_eta", c.sigma2_eta);
  c.alpha0_variance = j.value("alpha0_variance", c.alpha0_variance);
  c.eta0_variance = j.value("eta0_variance", c.eta0_variance);
  c.theta_prior_variance = j.value("theta_prior_variance", c.theta_prior_variance);
  c.hidden_size = j.value("hidden_size", c.hidden_size);
  c.seed = j.value("seed", c.seed);
  c.patience = j.value("patience", c.patience);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.kl_anneal_fraction = j.value("kl_anneal_fraction", c.kl_anneal_fraction);
  c.init_alpha_scale = j.value("init_alpha_scale", c.init_alpha_scale);
  c.init_log_variance = j.value("init_log_variance", c.init_log_variance);
  c.train_rho = j.value("train_rho", c.train_rho);
}

/// Offsets of each parameter tensor inside the flat parameter vector.
struct DetmLayout {
  std::size_t K = 0, T = 0, L = 0, V = 0, H = 0;
  std::size_t alpha_mean = 0;    // [K][T][L]
  std::size_t alpha_logvar = 0;  // [K][T][L]
  std::size_t eta_mean = 0;      // [T][K]
  std::size_t eta_logvar = 0;    // [T][K]
  std::size_t enc_w1 = 0;        // [H][V + T]
  std::size_t enc_b1 = 0;        // [H]
  std::size_t enc_wmu = 0;       // [K][H]
  std::size_t enc_bmu = 0;       // [K]
  std::size_t enc_wlv = 0;       // [K][H]
  std::size_t enc_blv = 0;       // [K]
  std::size_t rho = 0;           // [V][L]
  std::size_t total = 0;

  DetmLayout() = default;
  DetmLayout(std::size_t k, std::size_t t, std::size_t l, std::size_t v, std::size_t h)
      : K(k), T(t), L(l), V(v), H(h) {
    std::size_t off = 0;
    auto take = [&off](std::size_t n) {
      const std::size_t at = off;
      off += n;
      return at;
    };
    alpha_mean = take(K * T * L);
    alpha_logvar = take(K * T * L);
    eta_mean = take(T * K);
    eta_logvar = take(T * K);
    enc_w1 = take(H * (V + T));
    enc_b1 = take(H);
    enc_wmu = take(K * H);
    enc_bmu = take(K);
    enc_wlv = take(K * H);
    enc_blv = take(K);
    rho = take(V * L);
    total = off;
  }

  std::size_t input_dim() const noexcept { return V + T; }
  std::size_t alpha(std::size_t k, std::size_t t) const noexcept { return (k * T + t) * L; }
  std::size_t eta(std::size_t t) const noexcept { return t * K; }
  /// End of the always-trainable prefix; rho follows it.
  std::size_t trainable_end(bool train_rho) const noexcept { return train_rho ? total : rho; }

  friend bool operator==(const DetmLayout&, const DetmLayout&) = default;
};

struct DetmState {
  DetmConfig config;
  DetmLayout layout;
  std::uint64_t vocabulary_fingerprint = 0;
  std::vector<double> params;

  std::span<const double> segment(std::size_t offset, std::size_t n) const { return {params.data() + offset, n}; }

  std::span<const double> alpha_mean(std::size_t k, std::size_t t) const {
    return segment(layout.alpha_mean + layout.alpha(k, t), layout.L);
  }
  std::span<const double> eta_mean(std::size_t t) const { return segment(layout.eta_mean + layout.eta(t), layout.K); }
  std::span<const double> rho_row(std::size_t v) const { return segment(layout.rho + v * layout.L, layout.L); }

  bool all_finite() const {
    return std::all_of(params.begin(), params.end(), [](double v) { return std::isfinite(v); });
  }
};

/// beta[k][t][v], row-major.
struct TopicWordDist {
  std::size_t K = 0, T = 0, V = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t k, std::size_t t) const { return {values.data() + (k * T + t) * V, V}; }
  double operator()(std::size_t k, std::size_t t, std::size_t v) const { return values[(k * T + t) * V + v]; }
};

struct WordTopicCurve {
  std::string word;
  std::size_t K = 0;
  std::vector<double> phi;            // [T][K]
  std::vector<std::uint64_t> support;  // occurrences of the word per window

  std::size_t windows() const noexcept { return support.size(); }
  bool available(std::size_t t) const { return support.at(t) > 0; }
  std::span<const double> row(std::size_t t) const { return {phi.data() + t * K, K}; }
};

namespace detail {

/// In-place numerically stable softmax.
inline void softmax(std::span<double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  double sum = 0;
  for (double& v : x) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : x) v /= sum;
}

/// row <- softmax(rho * alpha) over the vocabulary.
inline void project_topic(std::span<const double> rho, std::span<const double> alpha, std::size_t V,
                          std::span<double> row) {
  const std::size_t L = alpha.size();
  for (std::size_t v = 0; v < V; ++v) {
    const double* r = rho.data() + v * L;
    double dot = 0;
    for (std::size_t l = 0; l < L; ++l) dot += r[l] * alpha[l];
    row[v] = dot;
  }
  softmax(row);
}

/// beta from an explicit alpha tensor [K][T][L] (means or a sample).
inline TopicWordDist beta_from(const DetmLayout& lay, std::span<const double> rho, std::span<const double> alpha) {
  TopicWordDist b{lay.K, lay.T, lay.V, std::vector<double>(lay.K * lay.T * lay.V)};
  for (std::size_t k = 0; k < lay.K; ++k) {
    for (std::size_t t = 0; t < lay.T; ++t) {
      project_topic(rho, alpha.subspan(lay.alpha(k, t), lay.L), lay.V,
                    std::span<double>(b.values.data() + (k * lay.T + t) * lay.V, lay.V));
    }
  }
  return b;
}

struct EncoderPass {
  std::vector<double> hidden;  // tanh activations
  std::vector<double> mu;
  std::vector<double> logvar;
};

inline void check_subdoc(const DetmLayout& lay, const SubDocument& sd) {
  if (sd.token_count == 0 || sd.counts.empty()) throw InvalidArgument("sub-document '" + sd.doc_id + "' is empty");
  if (sd.window >= lay.T) throw InvalidArgument("sub-document window index out of range");
  for (const auto& wc : sd.counts) {
    if (wc.word >= lay.V) throw InvalidArgument("sub-document word index out of range");
  }
}

inline void encode(const DetmLayout& lay, std::span<const double> p, const SubDocument& sd, EncoderPass& out) {
  const std::size_t H = lay.H, K = lay.K, D = lay.input_dim();
  out.hidden.assign(H, 0.0);
  out.mu.assign(K, 0.0);
  out.logvar.assign(K, 0.0);
  const double inv_n = 1.0 / static_cast<double>(sd.token_count);
  const double* w1 = p.data() + lay.enc_w1;
  for (std::size_t h = 0; h < H; ++h) {
    const double* row = w1 + h * D;
    double a = p[lay.enc_b1 + h] + row[lay.V + sd.window];
    for (const auto& wc : sd.counts) a += row[wc.word] * (wc.count * inv_n);
    out.hidden[h] = std::tanh(a);
  }
  for (std::size_t k = 0; k < K; ++k) {
    const double* wm = p.data() + lay.enc_wmu + k * H;
    const double* wl = p.data() + lay.enc_wlv + k * H;
    double m = p[lay.enc_bmu + k], l = p[lay.enc_blv + k];
    for (std::size_t h = 0; h < H; ++h) {
      m += wm[h] * out.hidden[h];
      l += wl[h] * out.hidden[h];
    }
    out.mu[k] = m;
    out.logvar[k] = l;
  }
}

}  // namespace detail

/// Builds the initial state for `rho` (V x L). The walk starts flat: every
/// window of a topic shares the same small random alpha mean.
inline DetmState init(const EmbeddingMatrix& rho, DetmConfig config) {
  if (config.embedding_dim == 0) config.embedding_dim = rho.dim();
  config.validate();
  if (config.embedding_dim != rho.dim()) {
    throw InvalidArgument("embedding dimension mismatch: config " + std::to_string(config.embedding_dim) +
                          " vs rho " + std::to_string(rho.dim()));
  }
  if (rho.rows() == 0) throw InvalidArgument("rho has no rows");
  if (!rho.all_finite()) throw InvalidArgument("rho contains non-finite values");

  DetmState s;
  s.config = config;
  s.layout = DetmLayout(config.topics, config.windows, rho.dim(), rho.rows(), config.hidden_size);
  Fnv1a fp;
  for (const auto& w : rho.words()) fp.update(w).update(std::string_view("\0", 1));
  s.vocabulary_fingerprint = fp.digest();
  s.params.assign(s.layout.total, 0.0);

  const auto& lay = s.layout;
  auto& p = s.params;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  for (std::size_t k = 0; k < lay.K; ++k) {
    for (std::size_t l = 0; l < lay.L; ++l) {
      const double v = config.init_alpha_scale * normal(rng);
      for (std::size_t t = 0; t < lay.T; ++t) p[lay.alpha_mean + lay.alpha(k, t) + l] = v;
    }
  }
  std::fill_n(p.begin() + static_cast<std::ptrdiff_t>(lay.alpha_logvar), lay.K * lay.T * lay.L,
              config.init_log_variance);
  std::fill_n(p.begin() + static_cast<std::ptrdiff_t>(lay.eta_logvar), lay.T * lay.K, config.init_log_variance);

  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (std::size_t i = 0; i < lay.H * lay.input_dim(); ++i) p[lay.enc_w1 + i] = unit(rng);
  const double out_scale = std::sqrt(6.0 / static_cast<double>(lay.H + lay.K));
  for (std::size_t i = 0; i < lay.K * lay.H; ++i) p[lay.enc_wmu + i] = out_scale * unit(rng);
  for (std::size_t i = 0; i < lay.K * lay.H; ++i) p[lay.enc_wlv + i] = out_scale * unit(rng);

  std::copy(rho.values().begin(), rho.values().end(), p.begin() + static_cast<std::ptrdiff_t>(lay.rho));
  return s;
}

/// Topic-word distributions at the variational means of alpha.
inline TopicWordDist beta(const DetmState& s) {
  const auto& lay = s.layout;
  return detail::beta_from(lay, s.segment(lay.rho, lay.V * lay.L), s.segment(lay.alpha_mean, lay.K * lay.T * lay.L));
}

/// Topic proportions at the encoder mean (no sampling).
inline std::vector<double> infer_theta(const DetmState& s, const SubDocument& sd) {
  detail::check_subdoc(s.layout, sd);
  detail::EncoderPass pass;
  detail::encode(s.layout, s.params, sd, pass);
  detail::softmax(pass.mu);
  return pass.mu;
}

/// theta for every sub-document, row-major [N][K].
inline std::vector<double> infer_all_theta(const DetmState& s, const WindowedCorpus& corpus) {
  const std::size_t K = s.layout.K;
  std::vector<double> out(corpus.subdocs.size() * K);
  for (std::size_t d = 0; d < corpus.subdocs.size(); ++d) {
    const auto theta = infer_theta(s, corpus.subdocs[d]);
    std::copy(theta.begin(), theta.end(), out.begin() + static_cast<std::ptrdiff_t>(d * K));
  }
  return out;
}

/// Token-level responsibility curves for every vocabulary word, given thetas
/// ([N][K], aligned with corpus.subdocs) and beta.
inline std::vector<WordTopicCurve> word_topic_curves(const WindowedCorpus& corpus, std::span<const double> thetas,
                                                     const TopicWordDist& b) {
  const std::size_t K = b.K, T = b.T, V = b.V;
  if (corpus.vocabulary.size() != V) throw InvalidArgument("beta vocabulary size does not match corpus");
  if (thetas.size() != corpus.subdocs.size() * K) throw InvalidArgument("theta matrix does not match corpus");
  if (corpus.window_count() != T) throw InvalidArgument("beta window count does not match corpus");

  std::vector<WordTopicCurve> curves(V);
  for (std::size_t w = 0; w < V; ++w) {
    curves[w].word = corpus.vocabulary.word(w);
    curves[w].K = K;
    curves[w].phi.assign(T * K, 0.0);
    curves[w].support.assign(T, 0);
  }
  std::vector<double> r(K);
  for (std::size_t d = 0; d < corpus.subdocs.size(); ++d) {
    const auto& sd = corpus.subdocs[d];
    const double* theta = thetas.data() + d * K;
    for (const auto& wc : sd.counts) {
      double z = 0;
      for (std::size_t k = 0; k < K; ++k) {
        r[k] = theta[k] * b(k, sd.window, wc.word);
        z += r[k];
      }
      auto& c = curves[wc.word];
      c.support[sd.window] += wc.count;
      if (!(z > 0)) continue;  // every topic assigns zero mass; nothing to distribute
      for (std::size_t k = 0; k < K; ++k) c.phi[sd.window * K + k] += wc.count * r[k] / z;
    }
  }
  for (auto& c : curves) {
    for (std::size_t t = 0; t < T; ++t) {
      double z = 0;
      for (std::size_t k = 0; k < K; ++k) z += c.phi[t * K + k];
      if (c.support[t] == 0 || !(z > 0)) {
        c.support[t] = 0;
        std::fill_n(c.phi.begin() + static_cast<std::ptrdiff_t>(t * K), K, 0.0);
        continue;
      }
      for (std::size_t k = 0; k < K; ++k) c.phi[t * K + k] /= z;
    }
  }
  return curves;
}

inline WordTopicCurve word_topic_curve(const DetmState& s, const WindowedCorpus& corpus, const std::string& word) {
  const std::uint32_t w = corpus.vocabulary.index(word);
  auto curves = word_topic_curves(corpus, infer_all_theta(s, corpus), beta(s));
  return std::move(curves[w]);
}

// ---------------------------------------------------------------------------
// Checkpoint
//
//   "diachron-detm\n", u32 version, u64 config-json length, config json,
//   u64 vocabulary fingerprint, u64 K T L V H, u64 parameter count,
//   parameters as little-endian float64.

inline constexpr std::uint32_t kDetmCheckpointVersion = 1;

namespace detail {

inline void write_u64(std::ostream& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw ParseError("truncated checkpoint", 0);
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace detail

inline void save_checkpoint(const DetmState& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "diachron-detm\n";
  detail::write_u64(out, kDetmCheckpointVersion);
  const std::string cfg = nlohmann::json(s.config).dump();
  detail::write_u64(out, cfg.size());
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  detail::write_u64(out, s.vocabulary_fingerprint);
  for (auto d : {s.layout.K, s.layout.T, s.layout.L, s.layout.V, s.layout.H}) detail::write_u64(out, d);
  detail::write_u64(out, s.params.size());
  for (double v : s.params) detail::write_u64(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw Error("failed writing " + path.string());
}

/// Loads a checkpoint; throws if it was trained against a different vocabulary.
inline DetmState load_checkpoint(const std::filesystem::path& path, const Vocabulary& vocabulary) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string magic;
  std::getline(in, magic);
  if (magic != "diachron-detm") throw ParseError("not a diachron model checkpoint: " + path.string(), 0);
  const auto version = detail::read_u64(in);
  if (version != kDetmCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version), 0);
  }
  std::string cfg(detail::read_u64(in), '\0');
  in.read(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  DetmState s;
  s.config = nlohmann::json::parse(cfg).get<DetmConfig>();
  s.vocabulary_fingerprint = detail::read_u64(in);
  if (s.vocabulary_fingerprint != vocabulary.fingerprint()) {
    throw InvalidArgument("checkpoint " + path.string() + " was trained on a different vocabulary");
  }
  std::size_t dims[5];
  for (auto& d : dims) d = detail::read_u64(in);
  s.layout = DetmLayout(dims[0], dims[1], dims[2], dims[3], dims[4]);
  const auto n = detail::read_u64(in);
  if (n != s.layout.total) throw ParseError("checkpoint parameter count does not match its layout", 0);
  s.params.resize(n);
  for (auto& v : s.params) v = std::bit_cast<double>(detail::read_u64(in));
  return s;
}

}  // namespace diachron
