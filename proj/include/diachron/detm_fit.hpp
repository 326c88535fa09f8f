// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "diachron/detm.hpp"
#include "diachron/detm_objective.hpp"

namespace diachron {

/// Adam as gradient *ascent* over the first `size` parameters.
class Adam {
 public:
  explicit Adam(std::size_t size, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(size, 0.0), v_(size, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::span<double> params, std::span<const double> grad, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < m_.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
      params[i] += lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_elbo = 0;  // mean over minibatches of the unweighted full-data ELBO estimate
  double dev_perplexity = 0;
  double learning_rate = 0;  // rate used during the epoch
};

struct FitResult {
  DetmState state;  // best dev-perplexity state
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

/// KL weight during 0-based `epoch`: linear ramp 0 -> 1 over the first
/// ceil(fraction * epochs) epochs.
inline double kl_weight_at(std::size_t epoch, std::size_t epochs, double fraction) {
  const auto ramp = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(epochs)));
  if (ramp == 0) return 1.0;
  return std::min(1.0, static_cast<double>(epoch) / static_cast<double>(ramp));
}

/// Minibatch stochastic variational inference. After every epoch the dev
/// perplexity is measured at the variational means; a non-improving epoch
/// multiplies the learning rate by lr_decay, and more than `patience`
/// consecutive non-improving epochs end training. Returns the best state.
inline FitResult fit(DetmState state, const WindowedCorpus& corpus,
                     const std::function<void(const EpochLog&)>& observer = {}) {
  const auto& cfg = state.config;
  cfg.validate();
  if (corpus.window_count() < 2) throw InvalidArgument("fit needs at least two windows");
  if (corpus.window_count() != state.layout.T) throw InvalidArgument("corpus window count does not match model");
  if (corpus.vocabulary.size() != state.layout.V) throw InvalidArgument("corpus vocabulary does not match model");

  const auto train = corpus.indices(Split::train);
  auto dev = corpus.indices(Split::dev);
  if (train.empty()) throw InvalidArgument("corpus has no training sub-documents");
  if (dev.empty()) dev = train;

  std::mt19937_64 rng(cfg.seed ^ 0xd1b54a32d192ed03ULL);
  Adam adam(state.layout.trainable_end(cfg.train_rho));
  double lr = cfg.learning_rate;

  FitResult result;
  result.state = state;
  double best = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;

  std::vector<std::size_t> order = train;
  std::vector<const SubDocument*> batch;
  ElboOptions opt;
  opt.dataset_size = train.size();
  opt.threads = cfg.threads;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.kl_weight = kl_weight_at(epoch, cfg.epochs, cfg.kl_anneal_fraction);
    std::shuffle(order.begin(), order.end(), rng);
    double elbo_sum = 0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&corpus.subdocs[order[i]]);
      const ElboNoise noise = draw_noise(state.layout, batch.size(), rng);
      ElboResult r;
      try {
        r = elbo(state, batch, noise, opt);
      } catch (const NumericalError& e) {
        throw DivergenceError(epoch + 1, e.what());
      }
      adam.step(state.params, r.gradient, lr);
      elbo_sum += r.elbo();
      ++batches;
    }
    if (!state.all_finite()) throw DivergenceError(epoch + 1, "non-finite model parameters");

    EpochLog entry;
    entry.epoch = epoch + 1;
    entry.train_elbo = elbo_sum / static_cast<double>(batches);
    entry.learning_rate = lr;
    try {
      entry.dev_perplexity = perplexity(state, corpus, dev);
    } catch (const NumericalError& e) {
      throw DivergenceError(epoch + 1, e.what());
    }
    result.log.push_back(entry);
    if (observer) observer(entry);

    if (entry.dev_perplexity < best) {
      best = entry.dev_perplexity;
      result.state = state;
      result.best_epoch = entry.epoch;
      bad_epochs = 0;
    } else {
      lr *= cfg.lr_decay;
      if (++bad_epochs > cfg.patience) {
        result.early_stopped = true;
        break;
      }
    }
  }
  return result;
}

}  // namespace diachron
