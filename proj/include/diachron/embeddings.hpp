// Apache License, Version 2.0, refer to LICENSE.txt

// Skip-gram with negative sampling (SGNS) over sub-document token streams,
// plus cosine nearest-neighbour queries and embedding persistence.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "diachron/corpus.hpp"
#include "diachron/error.hpp"

namespace diachron {

struct SgnsConfig {
  std::size_t window_size = 5;
  std::size_t dim = 300;
  std::size_t epochs = 10;
  std::size_t negatives = 5;
  double initial_learning_rate = 0.025;
  double min_learning_rate = 1e-4;
  double noise_exponent = 0.75;
  bool fixed_window = false;       // always use window_size instead of sampling in [1, window_size]
  double subsample_threshold = 0;  // 0 disables frequent-word subsampling
  std::uint64_t seed = 1;

  void validate() const {
    if (window_size == 0 || dim == 0 || negatives == 0) {
      throw InvalidArgument("sgns window_size, dim and negatives must be positive");
    }
    if (!(initial_learning_rate > 0) || !(min_learning_rate > 0)) {
      throw InvalidArgument("sgns learning rates must be positive");
    }
    if (subsample_threshold < 0) throw InvalidArgument("sgns subsample_threshold must be non-negative");
  }
};

inline void to_json(nlohmann::json& j, const SgnsConfig& c) {
  j = {{"window_size", c.window_size},
       {"dim", c.dim},
       {"epochs", c.epochs},
       {"negatives", c.negatives},
       {"initial_learning_rate", c.initial_learning_rate},
       {"min_learning_rate", c.min_learning_rate},
       {"noise_exponent", c.noise_exponent},
       {"fixed_window", c.fixed_window},
       {"subsample_threshold", c.subsample_threshold},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SgnsConfig& c) {
  c.window_size = j.value("window_size", c.window_size);
  c.dim = j.value("dim", c.dim);
  c.epochs = j.value("epochs", c.epochs);
  c.negatives = j.value("negatives", c.negatives);
  c.initial_learning_rate = j.value("initial_learning_rate", c.initial_learning_rate);
  c.min_learning_rate = j.value("min_learning_rate", c.min_learning_rate);
  c.noise_exponent = j.value("noise_exponent", c.noise_exponent);
  c.fixed_window = j.value("fixed_window", c.fixed_window);
  c.subsample_threshold = j.value("subsample_threshold", c.subsample_threshold);
  c.seed = j.value("seed", c.seed);
}

/// Row-major V x L word vectors with their vocabulary.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  EmbeddingMatrix(std::vector<std::string> words, std::size_t dim, std::vector<double> values)
      : words_(std::move(words)), dim_(dim), values_(std::move(values)) {
    if (dim_ == 0) throw InvalidArgument("embedding dimension must be positive");
    if (values_.size() != words_.size() * dim_) throw InvalidArgument("embedding values do not match V x L");
    for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], i);
  }

  std::size_t rows() const noexcept { return words_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<std::string>& words() const noexcept { return words_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  std::span<const double> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  std::span<double> row(std::size_t i) { return {values_.data() + i * dim_, dim_}; }

  std::size_t index(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) throw InvalidArgument("word '" + word + "' is not in the embedding vocabulary");
    return it->second;
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
    return a.dim_ == b.dim_ && a.words_ == b.words_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::string> words_;
  std::size_t dim_ = 0;
  std::vector<double> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct SgnsResult {
  EmbeddingMatrix input;        // rho
  std::vector<double> context;  // output vectors, V x L
  std::vector<double> epoch_loss;  // mean sampled objective per (center, context) pair
};

inline double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

/// word2vec's initialisation: uniform in (-0.5 / L, 0.5 / L).
inline std::vector<double> initial_embeddings(std::size_t rows, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-0.5 / static_cast<double>(dim), 0.5 / static_cast<double>(dim));
  std::vector<double> out(rows * dim);
  for (auto& v : out) v = unif(rng);
  return out;
}

namespace detail {

inline double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

/// Trains SGNS on every sub-document of `corpus`; context pairs never cross
/// sub-document boundaries. Single-threaded and bitwise reproducible for a seed.
inline SgnsResult train_sgns(const WindowedCorpus& corpus, const SgnsConfig& cfg) {
  cfg.validate();
  const std::size_t V = corpus.vocabulary.size();
  const std::size_t L = cfg.dim;
  if (V == 0) throw InvalidArgument("cannot train embeddings on an empty vocabulary");

  std::size_t total_tokens = 0;
  bool any_pair = false;
  std::vector<std::uint64_t> counts(V, 0);
  for (const auto& sd : corpus.subdocs) {
    total_tokens += sd.tokens.size();
    any_pair = any_pair || sd.tokens.size() >= 2;
    for (auto w : sd.tokens) ++counts[w];
  }
  if (!any_pair) throw InvalidArgument("corpus too small: no (center, context) pair within any sub-document");

  std::vector<double> noise_cdf(V);
  double acc = 0;
  for (std::size_t w = 0; w < V; ++w) {
    acc += std::pow(static_cast<double>(counts[w]), cfg.noise_exponent);
    noise_cdf[w] = acc;
  }

  std::vector<double> keep_prob(V, 1.0);
  if (cfg.subsample_threshold > 0) {
    for (std::size_t w = 0; w < V; ++w) {
      if (counts[w] == 0) continue;
      const double f = static_cast<double>(counts[w]) / static_cast<double>(total_tokens);
      const double r = cfg.subsample_threshold / f;
      keep_prob[w] = std::min(1.0, std::sqrt(r) + r);
    }
  }

  std::vector<double> in = initial_embeddings(V, L, cfg.seed);
  std::vector<double> out(V * L, 0.0);
  std::vector<double> grad(L);
  std::vector<double> loss_log;

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unif01(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> window_draw(1, cfg.window_size);

  const double planned = static_cast<double>(std::max<std::size_t>(1, cfg.epochs * total_tokens));
  std::size_t processed = 0;
  std::vector<std::uint32_t> kept;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss = 0;
    std::size_t pairs = 0;
    for (const auto& sd : corpus.subdocs) {
      kept.clear();
      for (auto w : sd.tokens) {
        if (keep_prob[w] >= 1.0 || unif01(rng) < keep_prob[w]) kept.push_back(w);
      }
      for (std::size_t i = 0; i < kept.size(); ++i) {
        const double progress = static_cast<double>(processed++) / planned;
        const double lr = std::max(cfg.min_learning_rate,
                                   cfg.initial_learning_rate -
                                       (cfg.initial_learning_rate - cfg.min_learning_rate) * progress);
        const std::size_t b = cfg.fixed_window ? cfg.window_size : window_draw(rng);
        const std::size_t lo = i >= b ? i - b : 0;
        const std::size_t hi = std::min(kept.size() - 1, i + b);
        const std::size_t center = kept[i];
        double* vc = &in[center * L];
        for (std::size_t j = lo; j <= hi; ++j) {
          if (j == i) continue;
          std::fill(grad.begin(), grad.end(), 0.0);
          for (std::size_t n = 0; n <= cfg.negatives; ++n) {
            std::size_t target;
            double label;
            if (n == 0) {
              target = kept[j];
              label = 1.0;
            } else {
              const double u = unif01(rng) * acc;
              target = static_cast<std::size_t>(std::upper_bound(noise_cdf.begin(), noise_cdf.end(), u) -
                                                noise_cdf.begin());
              target = std::min(target, V - 1);
              if (target == kept[j]) continue;
              label = 0.0;
            }
            double* vo = &out[target * L];
            double dot = 0;
            for (std::size_t l = 0; l < L; ++l) dot += vc[l] * vo[l];
            loss -= label > 0 ? detail::log_sigmoid(dot) : detail::log_sigmoid(-dot);
            const double g = lr * (label - detail::sigmoid(dot));
            for (std::size_t l = 0; l < L; ++l) {
              grad[l] += g * vo[l];
              vo[l] += g * vc[l];
            }
          }
          for (std::size_t l = 0; l < L; ++l) vc[l] += grad[l];
          ++pairs;
        }
      }
    }
    loss_log.push_back(pairs ? loss / static_cast<double>(pairs) : 0.0);
    for (double v : in) {
      if (!std::isfinite(v)) throw DivergenceError(epoch + 1, "non-finite embedding value");
    }
  }

  return {EmbeddingMatrix(corpus.vocabulary.words(), L, std::move(in)), std::move(out), std::move(loss_log)};
}

struct Neighbor {
  std::string word;
  double similarity;
};

/// Top-k cosine neighbours of `word`, excluding itself. Ties keep vocabulary order.
inline std::vector<Neighbor> nearest_neighbors(const EmbeddingMatrix& rho, const std::string& word, std::size_t k) {
  const std::size_t q = rho.index(word);
  if (k >= rho.rows()) {
    throw InvalidArgument("k = " + std::to_string(k) + " must be smaller than the vocabulary size " +
                          std::to_string(rho.rows()));
  }
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(rho.rows() - 1);
  for (std::size_t i = 0; i < rho.rows(); ++i) {
    if (i != q) scored.emplace_back(cosine(rho.row(q), rho.row(i)), i);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<Neighbor> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back({rho.words()[scored[i].second], scored[i].first});
  return out;
}

// ---------------------------------------------------------------------------
// Persistence
//
// Binary layout:
//   "diachron-embeddings 1\n"
//   "<V> <L>\n"
//   V lines, one word each
//   V * L little-endian IEEE-754 float32 values, row-major

inline constexpr const char* kEmbeddingMagic = "diachron-embeddings 1";

namespace detail {

inline void check_word(const std::string& w) {
  if (w.empty() || w.find_first_of(" \t\r\n") != std::string::npos) {
    throw InvalidArgument("word '" + w + "' cannot be stored: contains whitespace or is empty");
  }
}

inline std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xFF) << 24) | ((v & 0xFF00) << 8) | ((v >> 8) & 0xFF00) | (v >> 24);
  }
  return v;
}

}  // namespace detail

inline void save_embeddings_binary(const EmbeddingMatrix& rho, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << kEmbeddingMagic << '\n' << rho.rows() << ' ' << rho.dim() << '\n';
  for (const auto& w : rho.words()) {
    detail::check_word(w);
    out << w << '\n';
  }
  for (double v : rho.values()) {
    const auto bits = detail::to_little_endian(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
  }
  if (!out) throw Error("failed writing " + path.string());
}

inline EmbeddingMatrix load_embeddings_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string magic;
  std::getline(in, magic);
  if (magic != kEmbeddingMagic) throw ParseError("not a diachron embedding file: " + path.string(), 1);
  std::size_t V = 0, L = 0;
  in >> V >> L;
  in.ignore(1);
  if (!in || L == 0) throw ParseError("bad embedding header", 2);
  std::vector<std::string> words(V);
  for (auto& w : words) {
    std::getline(in, w);
    if (!in) throw ParseError("truncated vocabulary in embedding file", 0);
  }
  std::vector<double> values(V * L);
  for (auto& v : values) {
    std::uint32_t bits = 0;
    in.read(reinterpret_cast<char*>(&bits), sizeof(bits));
    if (!in) throw ParseError("truncated vectors in embedding file", 0);
    v = static_cast<double>(std::bit_cast<float>(detail::to_little_endian(bits)));
  }
  return {std::move(words), L, std::move(values)};
}

inline void save_embeddings_text(const EmbeddingMatrix& rho, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(9);
  for (std::size_t i = 0; i < rho.rows(); ++i) {
    detail::check_word(rho.words()[i]);
    out << rho.words()[i];
    for (double v : rho.row(i)) out << ' ' << v;
    out << '\n';
  }
}

inline EmbeddingMatrix load_embeddings_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::string> words;
  std::vector<double> values;
  std::size_t dim = 0;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string w;
    row >> w;
    std::size_t n = 0;
    for (double v; row >> v; ++n) values.push_back(v);
    if (!row.eof()) throw ParseError("non-numeric vector component", line_no);
    if (dim == 0) dim = n;
    if (n == 0 || n != dim) throw ParseError("inconsistent vector length", line_no);
    words.push_back(std::move(w));
  }
  if (words.empty()) throw ParseError("empty embedding text file", 0);
  return {std::move(words), dim, std::move(values)};
}

}  // namespace diachron
