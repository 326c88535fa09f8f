// Apache License, Version 2.0, refer to LICENSE.txt

#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "diachron/detm.hpp"
#include "diachron/detm_fit.hpp"
#include "diachron/detm_objective.hpp"
#include "test_util.hpp"

using namespace diachron;
using diachron::testing::TempDir;

namespace {

std::vector<std::string> word_list(std::size_t V) {
  std::vector<std::string> w;
  for (std::size_t v = 0; v < V; ++v) w.push_back("w" + std::to_string(v));
  return w;
}

EmbeddingMatrix random_rho(std::size_t V, std::size_t L, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> values(V * L);
  for (auto& v : values) v = g(rng);
  return EmbeddingMatrix(word_list(V), L, values);
}

// A corpus over w0..w{V-1} with random sub-documents spread across T windows.
WindowedCorpus random_corpus(std::size_t V, std::size_t T, std::size_t n_docs, std::uint64_t seed) {
  WindowedCorpus c;
  c.spec = {0, 10, static_cast<int>(T)};
  std::vector<std::pair<std::string, std::uint64_t>> entries;
  for (const auto& w : word_list(V)) entries.emplace_back(w, 1);
  c.vocabulary = Vocabulary(entries);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint32_t> word(0, static_cast<std::uint32_t>(V - 1));
  std::uniform_int_distribution<std::size_t> len(1, 12);
  for (std::size_t d = 0; d < n_docs; ++d) {
    std::vector<std::uint32_t> toks(len(rng));
    for (auto& t : toks) t = word(rng);
    c.subdocs.push_back(SubDocument::make(d % T, "a" + std::to_string(d % 3), "d" + std::to_string(d), toks,
                                          d % 5 == 4 ? Split::dev : Split::train));
  }
  return c;
}

DetmConfig small_config(std::size_t K, std::size_t T) {
  DetmConfig cfg;
  cfg.topics = K;
  cfg.windows = T;
  cfg.hidden_size = 5;
  cfg.epochs = 20;
  cfg.batch_size = 16;
  return cfg;
}

std::vector<const SubDocument*> batch_of(const WindowedCorpus& c) {
  std::vector<const SubDocument*> b;
  for (const auto& sd : c.subdocs) b.push_back(&sd);
  return b;
}

// Planted corpus: two disjoint word sets; each sub-document uses one set.
struct Planted {
  WindowedCorpus corpus;
  EmbeddingMatrix rho;
};

Planted planted_two_topic(std::size_t words_per_set, std::size_t docs, std::size_t T, std::uint64_t seed) {
  Planted p;
  const std::size_t V = 2 * words_per_set;
  p.corpus = random_corpus(V, T, 0, seed);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(words_per_set - 1));
  for (std::size_t d = 0; d < docs; ++d) {
    const std::uint32_t base = d % 2 ? static_cast<std::uint32_t>(words_per_set) : 0;
    std::vector<std::uint32_t> toks(20);
    for (auto& t : toks) t = base + pick(rng);
    p.corpus.subdocs.push_back(SubDocument::make(d % T, "a", "d" + std::to_string(d), toks,
                                                 d % 10 == 9 ? Split::dev : Split::train));
  }
  // Embeddings that separate the sets along the first axis.
  std::normal_distribution<double> g(0.0, 0.3);
  std::vector<double> values(V * 4);
  for (std::size_t v = 0; v < V; ++v) {
    values[v * 4] = v < words_per_set ? 1.0 : -1.0;
    for (std::size_t l = 1; l < 4; ++l) values[v * 4 + l] = g(rng);
  }
  p.rho = EmbeddingMatrix(word_list(V), 4, values);
  return p;
}

}  // namespace

TEST(KlGaussian, ClosedForms) {
  EXPECT_DOUBLE_EQ(kl_gaussian(0, 1, 0, 1), 0.0);
  EXPECT_DOUBLE_EQ(kl_gaussian(1, 1, 0, 1), 0.5);
  // (var_q + d^2) / var_p - 1 - ln(var_q / var_p), halved: (0.5 + 4) / 2 - 1 - ln(0.25).
  EXPECT_NEAR(kl_gaussian(3, 0.5, 1, 2), 0.5 * (4.5 / 2 - 1 - std::log(0.25)), 1e-15);
}

TEST(KlGaussian, RandomWalkMatchesSumOfScalarTerms) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  const std::size_t T = 4, n = 3;
  std::vector<double> m(T * n), lv(T * n);
  for (auto& x : m) x = g(rng);
  for (auto& x : lv) x = g(rng);
  double expected = 0;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      expected += kl_gaussian(m[t * n + i], std::exp(lv[t * n + i]), t ? m[(t - 1) * n + i] : 0.0, t ? 0.3 : 2.0);
    }
  }
  EXPECT_NEAR(random_walk_kl(m, lv, T, n, 2.0, 0.3, {}, {}, 1.0), expected, 1e-12);
}

TEST(DetmConfig, DefaultsAndValidation) {
  const DetmConfig d;
  EXPECT_EQ(d.topics, 50u);
  EXPECT_EQ(d.epochs, 1000u);
  EXPECT_EQ(d.batch_size, 2000u);
  EXPECT_DOUBLE_EQ(d.learning_rate, 0.016);
  EXPECT_DOUBLE_EQ(d.sigma2_alpha, 0.005 * 0.005);
  EXPECT_DOUBLE_EQ(d.sigma2_eta, 0.005 * 0.005);
  EXPECT_DOUBLE_EQ(d.theta_prior_variance, 1.0);

  auto cfg = small_config(3, 3);
  cfg.sigma2_alpha = 0;
  EXPECT_THROW(init(random_rho(5, 2, 1), cfg), InvalidArgument);
  cfg = small_config(1, 3);
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = small_config(3, 1);
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = small_config(3, 3);
  cfg.embedding_dim = 7;
  EXPECT_THROW(init(random_rho(5, 2, 1), cfg), InvalidArgument);

  const nlohmann::json j = small_config(4, 6);
  const auto back = j.get<DetmConfig>();
  EXPECT_EQ(back.topics, 4u);
  EXPECT_EQ(back.windows, 6u);
  EXPECT_FALSE(j.contains("threads"));
}

TEST(Beta, ShapeAndRowStochastic) {
  auto cfg = small_config(50, 10);
  const auto s = init(random_rho(30, 300, 3, 0.1), cfg);
  const auto b = beta(s);
  EXPECT_EQ(b.K, 50u);
  EXPECT_EQ(b.T, 10u);
  EXPECT_EQ(b.V, 30u);
  for (std::size_t k = 0; k < b.K; ++k) {
    for (std::size_t t = 0; t < b.T; ++t) {
      const auto row = b.row(k, t);
      double sum = 0;
      for (double x : row) {
        EXPECT_GE(x, 0.0);
        sum += x;
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(Beta, ZeroAlphaIsUniform) {
  auto s = init(random_rho(8, 3, 4), small_config(2, 2));
  std::fill_n(s.params.begin() + static_cast<std::ptrdiff_t>(s.layout.alpha_mean), 2 * 2 * 3, 0.0);
  const auto b = beta(s);
  for (double x : b.values) EXPECT_DOUBLE_EQ(x, 1.0 / 8);
}

TEST(Beta, HandComputedSoftmax) {
  const EmbeddingMatrix rho({"a", "b", "c"}, 1, {0.0, std::log(2.0), std::log(4.0)});
  auto s = init(rho, small_config(2, 2));
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t t = 0; t < 2; ++t) s.params[s.layout.alpha_mean + s.layout.alpha(k, t)] = 1.0;
  }
  const auto b = beta(s);
  EXPECT_NEAR(b(1, 1, 0), 1.0 / 7, 1e-15);
  EXPECT_NEAR(b(1, 1, 1), 2.0 / 7, 1e-15);
  EXPECT_NEAR(b(1, 1, 2), 4.0 / 7, 1e-15);
}

TEST(Beta, DominantRowTakesAllMass) {
  auto rho = random_rho(6, 3, 5);
  auto s = init(rho, small_config(2, 2));
  const auto a = s.alpha_mean(0, 0);
  double last = 0;
  for (double scale : {1.0, 10.0, 100.0, 1e4, 1e6}) {
    for (std::size_t l = 0; l < 3; ++l) s.params[s.layout.rho + 2 * 3 + l] = scale * a[l];
    const double p = beta(s)(0, 0, 2);
    EXPECT_GE(p, last);
    last = p;
  }
  EXPECT_GT(last, 0.999);
}

TEST(Init, DeterministicAndFlatWalk) {
  const auto c = random_corpus(20, 3, 12, 6);
  const auto rho = random_rho(20, 4, 6);
  const auto a = init(rho, small_config(3, 3));
  const auto b = init(rho, small_config(3, 3));
  EXPECT_EQ(a.params, b.params);
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t t = 1; t < 3; ++t) {
      const auto x = a.alpha_mean(k, 0), y = a.alpha_mean(k, t);
      EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin()));
    }
  }
  const auto batch = batch_of(c);
  const auto noise = zero_noise(a.layout, batch.size());
  EXPECT_EQ(elbo(a, batch, noise).elbo(), elbo(b, batch, noise).elbo());
}

TEST(Elbo, SingleTopicReconstructionIsLogBeta) {
  // K = 1 is below the configurable minimum but the objective is defined for it.
  const std::size_t V = 6, T = 2, L = 3, H = 4;
  DetmState s;
  s.config = small_config(2, T);
  s.config.topics = 1;
  s.layout = DetmLayout(1, T, L, V, H);
  s.params.assign(s.layout.total, 0.0);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  for (auto& p : s.params) p = 0.5 * g(rng);
  const auto c = random_corpus(V, T, 1, 8);
  const auto batch = batch_of(c);
  const auto r = elbo(s, batch, zero_noise(s.layout, 1), {.kl_weight = 1, .dataset_size = 0, .with_gradient = false});
  const auto b = beta(s);
  double expected = 0;
  for (const auto& wc : c.subdocs[0].counts) expected += wc.count * std::log(b(0, c.subdocs[0].window, wc.word));
  EXPECT_NEAR(r.reconstruction, expected, 1e-12);
  const auto theta = infer_theta(s, c.subdocs[0]);
  ASSERT_EQ(theta.size(), 1u);
  EXPECT_DOUBLE_EQ(theta[0], 1.0);
}

TEST(Elbo, GradientMatchesCentralDifferences) {
  const std::size_t V = 20, K = 3, T = 3, L = 4;
  const auto c = random_corpus(V, T, 9, 10);
  auto cfg = small_config(K, T);
  cfg.train_rho = true;
  cfg.sigma2_alpha = 0.3;
  cfg.sigma2_eta = 0.2;
  cfg.alpha0_variance = 1.5;
  cfg.eta0_variance = 0.8;
  cfg.theta_prior_variance = 0.7;
  auto s = init(random_rho(V, L, 10, 0.5), cfg);
  std::mt19937_64 rng(10);
  std::normal_distribution<double> g;
  // Move every parameter off its initial value so no block sits at a symmetric point.
  for (std::size_t i = 0; i < s.layout.total; ++i) s.params[i] += 0.3 * g(rng);
  for (std::size_t i = 0; i < K * T * L; ++i) s.params[s.layout.alpha_logvar + i] = -1.0 + 0.3 * g(rng);
  for (std::size_t i = 0; i < T * K; ++i) s.params[s.layout.eta_logvar + i] = -1.0 + 0.3 * g(rng);

  const auto batch = batch_of(c);
  const auto noise = draw_noise(s.layout, batch.size(), rng);
  ElboOptions opt;
  opt.kl_weight = 0.7;
  opt.dataset_size = 40;
  const auto analytic = elbo(s, batch, noise, opt).gradient;
  ASSERT_EQ(analytic.size(), s.layout.total);

  opt.with_gradient = false;
  std::vector<double> numeric(s.layout.total);
  const double h = 1e-5;
  for (std::size_t i = 0; i < s.layout.total; ++i) {
    const double x = s.params[i];
    s.params[i] = x + h;
    const double up = elbo(s, batch, noise, opt).objective();
    s.params[i] = x - h;
    const double down = elbo(s, batch, noise, opt).objective();
    s.params[i] = x;
    numeric[i] = (up - down) / (2 * h);
  }

  const auto& lay = s.layout;
  struct Block {
    const char* name;
    std::size_t begin, size;
  };
  const Block blocks[] = {{"alpha_mean", lay.alpha_mean, K * T * L}, {"alpha_logvar", lay.alpha_logvar, K * T * L},
                          {"eta_mean", lay.eta_mean, T * K},         {"eta_logvar", lay.eta_logvar, T * K},
                          {"enc_w1", lay.enc_w1, lay.H * (V + T)},   {"enc_b1", lay.enc_b1, lay.H},
                          {"enc_wmu", lay.enc_wmu, K * lay.H},       {"enc_bmu", lay.enc_bmu, K},
                          {"enc_wlv", lay.enc_wlv, K * lay.H},       {"enc_blv", lay.enc_blv, K},
                          {"rho", lay.rho, V * L}};
  for (const auto& b : blocks) {
    double diff = 0, norm = 0;
    for (std::size_t i = b.begin; i < b.begin + b.size; ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      norm += numeric[i] * numeric[i];
    }
    ASSERT_GT(norm, 0.0) << b.name;
    EXPECT_LT(std::sqrt(diff / norm), 1e-4) << b.name;
  }
}

TEST(Elbo, ThreadedMatchesSerial) {
  const auto c = random_corpus(20, 3, 30, 12);
  auto s = init(random_rho(20, 4, 12), small_config(3, 3));
  std::mt19937_64 rng(12);
  const auto batch = batch_of(c);
  const auto noise = draw_noise(s.layout, batch.size(), rng);
  ElboOptions opt;
  const auto serial = elbo(s, batch, noise, opt);
  opt.threads = 4;
  const auto threaded = elbo(s, batch, noise, opt);
  EXPECT_NEAR(threaded.elbo(), serial.elbo(), 1e-9 * std::abs(serial.elbo()));
  for (std::size_t i = 0; i < serial.gradient.size(); ++i) {
    EXPECT_NEAR(threaded.gradient[i], serial.gradient[i], 1e-9 * (1 + std::abs(serial.gradient[i])));
  }
  // Same thread count twice is bitwise stable.
  EXPECT_EQ(elbo(s, batch, noise, opt).gradient, threaded.gradient);
}

TEST(Elbo, NonFiniteNamesComponent) {
  const auto c = random_corpus(10, 2, 4, 13);
  auto s = init(random_rho(10, 3, 13), small_config(2, 2));
  s.params[s.layout.alpha_mean] = std::numeric_limits<double>::quiet_NaN();
  const auto batch = batch_of(c);
  try {
    elbo(s, batch, zero_noise(s.layout, batch.size()));
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_EQ(e.component(), "reconstruction");
  }
  auto t = init(random_rho(10, 3, 13), small_config(2, 2));
  t.params[t.layout.eta_logvar] = std::numeric_limits<double>::infinity();
  try {
    elbo(t, batch, zero_noise(t.layout, batch.size()));
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_EQ(e.component(), "kl_eta");
  }
  EXPECT_THROW(elbo(t, std::span<const SubDocument* const>{}, zero_noise(t.layout, 0)), InvalidArgument);
}

TEST(InferTheta, SimplexDeterministicAndRejectsEmpty) {
  const auto c = random_corpus(15, 3, 20, 14);
  const auto s = init(random_rho(15, 4, 14), small_config(4, 3));
  for (const auto& sd : c.subdocs) {
    const auto th = infer_theta(s, sd);
    double sum = 0;
    for (double x : th) {
      EXPECT_GE(x, 0.0);
      sum += x;
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
  auto twin = c.subdocs[0];
  twin.doc_id = "twin";
  EXPECT_EQ(infer_theta(s, twin), infer_theta(s, c.subdocs[0]));
  const auto empty = SubDocument::make(0, "a", "e", {});
  EXPECT_THROW(infer_theta(s, empty), InvalidArgument);
}

TEST(WordTopicCurves, HandComputedResponsibilities) {
  WindowedCorpus c = random_corpus(2, 2, 0, 1);
  c.subdocs.push_back(SubDocument::make(0, "a", "d1", {0, 0, 0}));
  c.subdocs.push_back(SubDocument::make(0, "a", "d2", {0}));
  TopicWordDist b{2, 2, 2, std::vector<double>(8, 0.5)};
  // theta (1,0) for d1 and (0,1) for d2 give responsibilities (1,0) and (0,1).
  const std::vector<double> thetas = {1, 0, 0, 1};
  const auto curves = word_topic_curves(c, thetas, b);
  const auto& w0 = curves[0];
  EXPECT_EQ(w0.support[0], 4u);
  EXPECT_DOUBLE_EQ(w0.phi[0], 0.75);
  EXPECT_DOUBLE_EQ(w0.phi[1], 0.25);
  EXPECT_FALSE(w0.available(1));
  EXPECT_FALSE(curves[1].available(0));
}

TEST(WordTopicCurves, ExclusiveTopicAndSymmetry) {
  WindowedCorpus c = random_corpus(2, 2, 0, 1);
  c.subdocs.push_back(SubDocument::make(0, "a", "d1", {0, 1}));
  c.subdocs.push_back(SubDocument::make(1, "a", "d2", {0, 1, 1}));
  // Word 0: only topic 1 generates it in window 0.
  TopicWordDist b{2, 2, 2, std::vector<double>(8, 0.5)};
  b.values[(0 * 2 + 0) * 2 + 0] = 0.0;
  b.values[(0 * 2 + 0) * 2 + 1] = 1.0;
  const std::vector<double> thetas = {0.5, 0.5, 0.5, 0.5};
  const auto curves = word_topic_curves(c, thetas, b);
  EXPECT_DOUBLE_EQ(curves[0].phi[0 * 2 + 1], 1.0);
  EXPECT_DOUBLE_EQ(curves[0].phi[0 * 2 + 0], 0.0);
  EXPECT_DOUBLE_EQ(curves[1].phi[1 * 2 + 0], 0.5);
  EXPECT_DOUBLE_EQ(curves[1].phi[1 * 2 + 1], 0.5);
}

TEST(WordTopicCurves, RowsAreConvexOnRandomModels) {
  const auto c = random_corpus(12, 3, 40, 15);
  const auto s = init(random_rho(12, 3, 15), small_config(3, 3));
  const auto curves = word_topic_curves(c, infer_all_theta(s, c), beta(s));
  for (const auto& cv : curves) {
    for (std::size_t t = 0; t < cv.windows(); ++t) {
      if (!cv.available(t)) continue;
      double sum = 0;
      for (double x : cv.row(t)) {
        EXPECT_GE(x, 0.0);
        EXPECT_LE(x, 1.0);
        sum += x;
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
  EXPECT_THROW(word_topic_curve(s, c, "nonesuch"), InvalidArgument);
  EXPECT_EQ(word_topic_curve(s, c, "w3").phi, curves[3].phi);
}

TEST(Fit, KlWeightRamp) {
  EXPECT_DOUBLE_EQ(kl_weight_at(0, 100, 0.1), 0.0);
  EXPECT_DOUBLE_EQ(kl_weight_at(5, 100, 0.1), 0.5);
  EXPECT_DOUBLE_EQ(kl_weight_at(10, 100, 0.1), 1.0);
  EXPECT_DOUBLE_EQ(kl_weight_at(50, 100, 0.1), 1.0);
  EXPECT_DOUBLE_EQ(kl_weight_at(0, 100, 0.0), 1.0);
}

TEST(Fit, PatienceZeroStopsAfterFirstWorseEpoch) {
  // Training and dev text use disjoint words, so fitting the training split
  // can only make dev perplexity worse after the first epoch.
  WindowedCorpus c = random_corpus(10, 2, 0, 16);
  std::mt19937_64 rng(16);
  std::uniform_int_distribution<std::uint32_t> lo(0, 4), hi(5, 9);
  for (std::size_t d = 0; d < 40; ++d) {
    std::vector<std::uint32_t> toks(10);
    const bool dev = d % 4 == 0;
    for (auto& t : toks) t = dev ? hi(rng) : lo(rng);
    c.subdocs.push_back(SubDocument::make(d % 2, "a", "d" + std::to_string(d), toks, dev ? Split::dev : Split::train));
  }
  auto cfg = small_config(2, 2);
  cfg.patience = 0;
  cfg.epochs = 50;
  cfg.learning_rate = 0.05;
  const auto start = init(random_rho(10, 3, 16), cfg);
  const auto r = fit(start, c);
  ASSERT_EQ(r.log.size(), 2u);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_EQ(r.best_epoch, 1u);
  EXPECT_GE(r.log[1].dev_perplexity, r.log[0].dev_perplexity);
  EXPECT_DOUBLE_EQ(r.log[1].learning_rate, 0.05);

  auto one = start;
  one.config.epochs = 1;
  EXPECT_EQ(fit(one, c).state.params, r.state.params);
}

TEST(Fit, BitwiseDeterministicAndLogged) {
  const auto c = random_corpus(20, 3, 60, 17);
  const auto start = init(random_rho(20, 4, 17), small_config(3, 3));
  std::vector<std::size_t> seen;
  const auto a = fit(start, c, [&](const EpochLog& e) { seen.push_back(e.epoch); });
  const auto b = fit(start, c);
  EXPECT_EQ(a.state.params, b.state.params);
  ASSERT_EQ(seen.size(), a.log.size());
  for (std::size_t i = 0; i < seen.size(); ++i) EXPECT_EQ(seen[i], i + 1);
  for (std::size_t i = a.log.size(); i-- > 1;) {
    // Learning rate never increases.
    EXPECT_LE(a.log[i].learning_rate, a.log[i - 1].learning_rate);
  }
}

TEST(Fit, DivergenceCarriesEpoch) {
  const auto c = random_corpus(10, 2, 10, 18);
  auto s = init(random_rho(10, 3, 18), small_config(2, 2));
  s.params[s.layout.enc_b1] = std::numeric_limits<double>::quiet_NaN();
  try {
    fit(s, c);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.epoch(), 1u);
  }
}

TEST(Fit, PlantedTopicsAndProportions) {
  const auto p = planted_two_topic(10, 400, 3, 19);
  auto cfg = small_config(2, 3);
  cfg.epochs = 60;
  cfg.batch_size = 50;
  cfg.learning_rate = 0.02;
  cfg.hidden_size = 16;
  cfg.patience = 60;
  const auto r = fit(init(p.rho, cfg), p.corpus);
  const auto b = beta(r.state);
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t t = 0; t < 3; ++t) {
      std::vector<std::size_t> order(20);
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](auto x, auto y) { return b(k, t, x) > b(k, t, y); });
      const bool first_set = order[0] < 10;
      for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(order[i] < 10, first_set) << k << "," << t;
    }
  }
  // A sub-document of pure set-A words puts most of its mass on one topic.
  const auto pure = SubDocument::make(1, "a", "pure", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  const auto th = infer_theta(r.state, pure);
  EXPECT_GT(std::max(th[0], th[1]), 0.9);
}

TEST(Fit, SmallerWalkVarianceGivesSmootherTopics) {
  const auto p = planted_two_topic(10, 300, 3, 20);
  auto roughness = [&](double sigma2) {
    auto cfg = small_config(2, 3);
    // Full prior weight from the start and a flat step size, so both fits
    // train long enough for the walk prior to matter.
    cfg.epochs = 60;
    cfg.patience = 100;
    cfg.batch_size = 30;
    cfg.lr_decay = 1.0;
    cfg.kl_anneal_fraction = 0.0;
    cfg.sigma2_alpha = sigma2;
    const auto s = fit(init(p.rho, cfg), p.corpus).state;
    double sum = 0;
    for (std::size_t k = 0; k < 2; ++k) {
      for (std::size_t t = 1; t < 3; ++t) {
        const auto a = s.alpha_mean(k, t), prev = s.alpha_mean(k, t - 1);
        for (std::size_t l = 0; l < a.size(); ++l) sum += (a[l] - prev[l]) * (a[l] - prev[l]);
      }
    }
    return sum;
  };
  EXPECT_LT(roughness(1e-4), roughness(1e-2));
}

TEST(Checkpoint, RoundTripAndVocabularyCheck) {
  TempDir dir;
  const auto c = random_corpus(12, 2, 10, 21);
  auto s = init(random_rho(12, 3, 21), small_config(2, 2));
  s.params[3] = 1.0 / 3.0;
  save_checkpoint(s, dir / "m.ckpt");
  const auto back = load_checkpoint(dir / "m.ckpt", c.vocabulary);
  EXPECT_EQ(back.params, s.params);
  EXPECT_EQ(back.layout, s.layout);
  EXPECT_EQ(back.config.topics, 2u);
  EXPECT_EQ(read_file(dir / "m.ckpt").rfind("diachron-detm\n", 0), 0u);

  const Vocabulary other({{"x", 1}});
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt", other), Error);
  dir.write("bad.ckpt", "diachron-detm\ntruncated");
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt", c.vocabulary), Error);
}
