// Apache License, Version 2.0, refer to LICENSE.txt

// Evidence lower bound of the mean-field DETM and its analytic gradient.
//
// For a minibatch B drawn from N training sub-documents, with s = N / |B| and
// KL weight w:
//
//   objective = s * sum_{d in B} [ sum_v n_dv log(sum_k theta_dk beta[k][t_d][v]) - w KL_theta(d) ]
//               - w (KL_alpha + KL_eta)
//
// theta_d and beta use one reparameterised sample each; the noise is passed in
// explicitly so that the objective is a deterministic function of the
// parameters and can be checked against finite differences.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "diachron/detm.hpp"
#include "diachron/error.hpp"

namespace diachron {

/// KL(N(mu_q, var_q) || N(mu_p, var_p)) for scalars.
inline double kl_gaussian(double mu_q, double var_q, double mu_p, double var_p) {
  const double d = mu_q - mu_p;
  return 0.5 * ((var_q + d * d) / var_p - 1.0 - std::log(var_q / var_p));
}

/// KL of a diagonal Gaussian chain q(x_t) = N(m_t, exp(lv_t)) against the
/// random walk prior N(m_{t-1}, var_step) with N(0, var0) at t = 0. `means`
/// and `logvars` are [T][n]. Accumulates `gscale * dKL` into the gradients.
inline double random_walk_kl(std::span<const double> means, std::span<const double> logvars, std::size_t T,
                             std::size_t n, double var0, double var_step, std::span<double> g_means,
                             std::span<double> g_logvars, double gscale) {
  double kl = 0;
  const bool grad = !g_means.empty();
  for (std::size_t t = 0; t < T; ++t) {
    const double var_p = t == 0 ? var0 : var_step;
    for (std::size_t i = 0; i < n; ++i) {
      const double m = means[t * n + i];
      const double prev = t == 0 ? 0.0 : means[(t - 1) * n + i];
      const double lv = logvars[t * n + i];
      const double var_q = std::exp(lv);
      const double d = m - prev;
      kl += 0.5 * ((var_q + d * d) / var_p - 1.0 - lv + std::log(var_p));
      if (grad) {
        g_means[t * n + i] += gscale * d / var_p;
        if (t > 0) g_means[(t - 1) * n + i] -= gscale * d / var_p;
        g_logvars[t * n + i] += gscale * 0.5 * (var_q / var_p - 1.0);
      }
    }
  }
  return kl;
}

/// Standard-normal draws consumed by one objective evaluation.
struct ElboNoise {
  std::vector<double> alpha;  // [K][T][L]
  std::vector<double> theta;  // [|B|][K]
};

inline ElboNoise draw_noise(const DetmLayout& lay, std::size_t batch_size, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  ElboNoise e{std::vector<double>(lay.K * lay.T * lay.L), std::vector<double>(batch_size * lay.K)};
  for (auto& v : e.alpha) v = normal(rng);
  for (auto& v : e.theta) v = normal(rng);
  return e;
}

inline ElboNoise zero_noise(const DetmLayout& lay, std::size_t batch_size) {
  return {std::vector<double>(lay.K * lay.T * lay.L, 0.0), std::vector<double>(batch_size * lay.K, 0.0)};
}

struct ElboOptions {
  double kl_weight = 1.0;
  std::size_t dataset_size = 0;  // N; 0 means the batch is the whole dataset
  bool with_gradient = true;
  std::size_t threads = 1;
};

struct ElboResult {
  double reconstruction = 0;  // batch sum, unscaled
  double kl_theta = 0;        // batch sum, unscaled
  double kl_alpha = 0;
  double kl_eta = 0;
  double scale = 1;
  double kl_weight = 1;
  std::vector<double> gradient;  // d objective / d params

  /// The annealed quantity whose gradient is returned.
  double objective() const {
    return scale * (reconstruction - kl_weight * kl_theta) - kl_weight * (kl_alpha + kl_eta);
  }
  /// Unweighted ELBO estimate for the full dataset.
  double elbo() const { return scale * (reconstruction - kl_theta) - kl_alpha - kl_eta; }
};

namespace detail {

struct DocAccumulator {
  double reconstruction = 0;
  double kl_theta = 0;
  std::vector<double> grad;  // full parameter size (only encoder / eta parts touched)
  std::vector<double> resp;  // [K][T][V]: sum_d n_dv theta_dk beta_ktv / p_dv
};

inline void accumulate_docs(const DetmState& s, std::span<const SubDocument* const> batch, std::size_t begin,
                            std::size_t end, const TopicWordDist& b, const ElboNoise& noise, double scale,
                            double w, bool with_gradient, DocAccumulator& acc) {
  const auto& lay = s.layout;
  const auto& p = s.params;
  const std::size_t K = lay.K, H = lay.H, D = lay.input_dim(), T = lay.T, V = lay.V;
  const double a2 = s.config.theta_prior_variance;
  const double log_a2 = std::log(a2);

  EncoderPass pass;
  std::vector<double> theta(K), sd_noise(K), g_theta(K), g_mu(K), g_lv(K), g_hidden(H), inv_p;

  for (std::size_t i = begin; i < end; ++i) {
    const SubDocument& sd = *batch[i];
    const std::size_t t = sd.window;
    encode(lay, p, sd, pass);
    for (std::size_t k = 0; k < K; ++k) {
      sd_noise[k] = std::exp(0.5 * pass.logvar[k]);
      theta[k] = pass.mu[k] + sd_noise[k] * noise.theta[i * K + k];
    }
    softmax(theta);

    std::fill(g_theta.begin(), g_theta.end(), 0.0);
    inv_p.resize(sd.counts.size());
    for (std::size_t j = 0; j < sd.counts.size(); ++j) {
      const auto [v, n] = sd.counts[j];
      double pv = 0;
      for (std::size_t k = 0; k < K; ++k) pv += theta[k] * b(k, t, v);
      acc.reconstruction += n * std::log(pv);
      inv_p[j] = n / pv;
      for (std::size_t k = 0; k < K; ++k) g_theta[k] += b(k, t, v) * inv_p[j];
    }

    const double* eta = p.data() + lay.eta_mean + lay.eta(t);
    for (std::size_t k = 0; k < K; ++k) {
      const double d = pass.mu[k] - eta[k];
      acc.kl_theta += 0.5 * ((std::exp(pass.logvar[k]) + d * d) / a2 - 1.0 - pass.logvar[k] + log_a2);
    }
    if (!with_gradient) continue;

    for (std::size_t j = 0; j < sd.counts.size(); ++j) {
      const auto v = sd.counts[j].word;
      for (std::size_t k = 0; k < K; ++k) acc.resp[(k * T + t) * V + v] += theta[k] * b(k, t, v) * inv_p[j];
    }

    double mean_g = 0;
    for (std::size_t k = 0; k < K; ++k) mean_g += theta[k] * g_theta[k];
    auto& g = acc.grad;
    for (std::size_t k = 0; k < K; ++k) {
      const double gz = scale * theta[k] * (g_theta[k] - mean_g);
      const double d = pass.mu[k] - eta[k];
      g_mu[k] = gz - scale * w * d / a2;
      g_lv[k] = gz * 0.5 * sd_noise[k] * noise.theta[i * K + k] - scale * w * 0.5 * (std::exp(pass.logvar[k]) / a2 - 1.0);
      g[lay.eta_mean + lay.eta(t) + k] += scale * w * d / a2;
    }

    std::fill(g_hidden.begin(), g_hidden.end(), 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      double* gwm = g.data() + lay.enc_wmu + k * H;
      double* gwl = g.data() + lay.enc_wlv + k * H;
      const double* wm = p.data() + lay.enc_wmu + k * H;
      const double* wl = p.data() + lay.enc_wlv + k * H;
      for (std::size_t h = 0; h < H; ++h) {
        gwm[h] += g_mu[k] * pass.hidden[h];
        gwl[h] += g_lv[k] * pass.hidden[h];
        g_hidden[h] += wm[h] * g_mu[k] + wl[h] * g_lv[k];
      }
      g[lay.enc_bmu + k] += g_mu[k];
      g[lay.enc_blv + k] += g_lv[k];
    }
    const double inv_n = 1.0 / static_cast<double>(sd.token_count);
    for (std::size_t h = 0; h < H; ++h) {
      const double gpre = g_hidden[h] * (1.0 - pass.hidden[h] * pass.hidden[h]);
      double* gw1 = g.data() + lay.enc_w1 + h * D;
      for (const auto& wc : sd.counts) gw1[wc.word] += gpre * (wc.count * inv_n);
      gw1[V + t] += gpre;
      g[lay.enc_b1 + h] += gpre;
    }
  }
}

inline void require_finite(double v, const char* component) {
  if (!std::isfinite(v)) throw NumericalError(component, "non-finite value in ELBO");
}

}  // namespace detail

/// Evaluates the objective on `batch` at fixed `noise` (see file comment).
inline ElboResult elbo(const DetmState& s, std::span<const SubDocument* const> batch, const ElboNoise& noise,
                       const ElboOptions& opt = {}) {
  const auto& lay = s.layout;
  const std::size_t K = lay.K, T = lay.T, L = lay.L, V = lay.V;
  if (batch.empty()) throw InvalidArgument("ELBO batch is empty");
  if (noise.alpha.size() != K * T * L || noise.theta.size() != batch.size() * K) {
    throw InvalidArgument("ELBO noise does not match layout and batch size");
  }
  for (const auto* sd : batch) detail::check_subdoc(lay, *sd);

  ElboResult r;
  r.kl_weight = opt.kl_weight;
  r.scale = opt.dataset_size == 0 ? 1.0 : static_cast<double>(opt.dataset_size) / static_cast<double>(batch.size());
  const double w = opt.kl_weight;

  // alpha sample and beta for the windows present in the batch.
  std::vector<double> alpha(K * T * L);
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    alpha[i] = s.params[lay.alpha_mean + i] + std::exp(0.5 * s.params[lay.alpha_logvar + i]) * noise.alpha[i];
  }
  std::vector<bool> present(T, false);
  for (const auto* sd : batch) present[sd->window] = true;
  const std::span<const double> rho = s.segment(lay.rho, V * L);
  TopicWordDist b{K, T, V, std::vector<double>(K * T * V, 0.0)};
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t t = 0; t < T; ++t) {
      if (!present[t]) continue;
      detail::project_topic(rho, std::span<const double>(alpha).subspan(lay.alpha(k, t), L), V,
                            std::span<double>(b.values.data() + (k * T + t) * V, V));
    }
  }

  // Per-document terms, split into contiguous chunks reduced in chunk order.
  const std::size_t workers = std::max<std::size_t>(1, std::min(opt.threads, batch.size()));
  std::vector<detail::DocAccumulator> acc(workers);
  for (auto& a : acc) {
    if (opt.with_gradient) {
      a.grad.assign(lay.total, 0.0);
      a.resp.assign(K * T * V, 0.0);
    }
  }
  const std::size_t chunk = (batch.size() + workers - 1) / workers;
  auto run = [&](std::size_t wi) {
    const std::size_t begin = wi * chunk, end = std::min(batch.size(), begin + chunk);
    if (begin < end) detail::accumulate_docs(s, batch, begin, end, b, noise, r.scale, w, opt.with_gradient, acc[wi]);
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t wi = 0; wi < workers; ++wi) pool.emplace_back(run, wi);
    for (auto& th : pool) th.join();
  }
  for (std::size_t wi = 0; wi < workers; ++wi) {
    r.reconstruction += acc[wi].reconstruction;
    r.kl_theta += acc[wi].kl_theta;
  }
  std::vector<double>& g = acc[0].grad;
  std::vector<double>& resp = acc[0].resp;
  for (std::size_t wi = 1; wi < workers && opt.with_gradient; ++wi) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += acc[wi].grad[i];
    for (std::size_t i = 0; i < resp.size(); ++i) resp[i] += acc[wi].resp[i];
  }

  std::span<double> g_alpha_mean, g_alpha_logvar, g_eta_mean, g_eta_logvar;
  if (opt.with_gradient) {
    // d recon / d logit[k][t][v] = resp[v] - beta[v] * sum(resp)
    std::vector<double> g_sample(L);
    const bool train_rho = s.config.train_rho;
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t t = 0; t < T; ++t) {
        if (!present[t]) continue;
        const double* rr = resp.data() + (k * T + t) * V;
        const auto row = b.row(k, t);
        double total = 0;
        for (std::size_t v = 0; v < V; ++v) total += rr[v];
        std::fill(g_sample.begin(), g_sample.end(), 0.0);
        const double* a = alpha.data() + lay.alpha(k, t);
        for (std::size_t v = 0; v < V; ++v) {
          const double c = r.scale * (rr[v] - row[v] * total);
          const double* rv = rho.data() + v * L;
          for (std::size_t l = 0; l < L; ++l) g_sample[l] += c * rv[l];
          if (train_rho) {
            double* gr = g.data() + lay.rho + v * L;
            for (std::size_t l = 0; l < L; ++l) gr[l] += c * a[l];
          }
        }
        const std::size_t off = lay.alpha(k, t);
        for (std::size_t l = 0; l < L; ++l) {
          g[lay.alpha_mean + off + l] += g_sample[l];
          g[lay.alpha_logvar + off + l] +=
              g_sample[l] * 0.5 * std::exp(0.5 * s.params[lay.alpha_logvar + off + l]) * noise.alpha[off + l];
        }
      }
    }
    g_alpha_mean = std::span<double>(g).subspan(lay.alpha_mean, K * T * L);
    g_alpha_logvar = std::span<double>(g).subspan(lay.alpha_logvar, K * T * L);
    g_eta_mean = std::span<double>(g).subspan(lay.eta_mean, T * K);
    g_eta_logvar = std::span<double>(g).subspan(lay.eta_logvar, T * K);
  }

  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t off = k * T * L;
    auto sub = [&](std::span<double> x) { return x.empty() ? x : x.subspan(off, T * L); };
    r.kl_alpha += random_walk_kl(s.segment(lay.alpha_mean + off, T * L), s.segment(lay.alpha_logvar + off, T * L), T,
                                 L, s.config.alpha0_variance, s.config.sigma2_alpha, sub(g_alpha_mean),
                                 sub(g_alpha_logvar), -w);
  }
  r.kl_eta = random_walk_kl(s.segment(lay.eta_mean, T * K), s.segment(lay.eta_logvar, T * K), T, K,
                            s.config.eta0_variance, s.config.sigma2_eta, g_eta_mean, g_eta_logvar, -w);

  detail::require_finite(r.reconstruction, "reconstruction");
  detail::require_finite(r.kl_theta, "kl_theta");
  detail::require_finite(r.kl_alpha, "kl_alpha");
  detail::require_finite(r.kl_eta, "kl_eta");
  if (opt.with_gradient) r.gradient = std::move(g);
  return r;
}

/// exp(-log-likelihood / tokens) over `indices`, at the variational means.
inline double perplexity(const DetmState& s, const WindowedCorpus& corpus, std::span<const std::size_t> indices) {
  if (indices.empty()) throw InvalidArgument("perplexity over an empty set of sub-documents");
  const TopicWordDist b = beta(s);
  const std::size_t K = s.layout.K;
  double ll = 0;
  std::uint64_t tokens = 0;
  for (std::size_t i : indices) {
    const auto& sd = corpus.subdocs.at(i);
    const auto theta = infer_theta(s, sd);
    for (const auto& wc : sd.counts) {
      double pv = 0;
      for (std::size_t k = 0; k < K; ++k) pv += theta[k] * b(k, sd.window, wc.word);
      ll += wc.count * std::log(pv);
    }
    tokens += sd.token_count;
  }
  const double ppl = std::exp(-ll / static_cast<double>(tokens));
  detail::require_finite(ppl, "perplexity");
  return ppl;
}

}  // namespace diachron
