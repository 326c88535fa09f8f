// Apache License, Version 2.0, refer to LICENSE.txt

// Bimodality, change-point and novelty diagnostics over fitted topic output.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "diachron/corpus.hpp"
#include "diachron/detm.hpp"
#include "diachron/error.hpp"

namespace diachron {

namespace detail {

inline void require_simplex(std::span<const double> p, const char* what, double tol = 1e-6) {
  double sum = 0;
  for (double v : p) {
    if (!(v >= 0) || !std::isfinite(v)) throw InvalidArgument(std::string(what) + " has a negative or non-finite entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > tol) {
    throw InvalidArgument(std::string(what) + " does not sum to 1 (sum = " + std::to_string(sum) + ")");
  }
}

}  // namespace detail

/// Degree to which the mass of `dist` sits evenly on exactly two entries:
/// with first >= second the two largest values,
///   ((1 - (first - second)) + (first + second)) / 2.
/// Equals 1 for an even two-way split and 0.5 for a one-hot vector.
inline double bimodality(std::span<const double> dist) {
  if (dist.size() < 2) throw InvalidArgument("bimodality needs at least two topics");
  detail::require_simplex(dist, "bimodality input");
  double first = -1, second = -1;
  for (double v : dist) {
    if (v > first) {
      second = first;
      first = v;
    } else if (v > second) {
      second = v;
    }
  }
  const double evenly = 1.0 - (first - second);
  const double exhaustive = first + second;
  return (evenly + exhaustive) / 2.0;
}

struct BimodalityCurve {
  std::string word;
  std::vector<std::optional<double>> scores;  // nullopt where the word is unattested
  std::vector<std::uint64_t> support;

  std::size_t attested() const {
    return static_cast<std::size_t>(std::count_if(scores.begin(), scores.end(), [](const auto& s) { return s.has_value(); }));
  }
};

inline BimodalityCurve bimodality_curve(const WordTopicCurve& curve) {
  BimodalityCurve out{curve.word, {}, curve.support};
  out.scores.reserve(curve.windows());
  for (std::size_t t = 0; t < curve.windows(); ++t) {
    if (curve.available(t)) {
      out.scores.emplace_back(bimodality(curve.row(t)));
    } else {
      out.scores.emplace_back(std::nullopt);
    }
  }
  return out;
}

/// Linear interpolation across unattested windows; ends are clamped to the
/// nearest attested value.
inline std::vector<double> fill_missing(std::span<const std::optional<double>> scores) {
  std::vector<std::size_t> known;
  for (std::size_t t = 0; t < scores.size(); ++t) {
    if (scores[t]) known.push_back(t);
  }
  if (known.empty()) throw InvalidArgument("cannot interpolate a sequence with no observed values");
  std::vector<double> out(scores.size());
  for (std::size_t t = 0; t < scores.size(); ++t) {
    if (scores[t]) {
      out[t] = *scores[t];
      continue;
    }
    auto hi = std::lower_bound(known.begin(), known.end(), t);
    if (hi == known.begin()) {
      out[t] = *scores[known.front()];
    } else if (hi == known.end()) {
      out[t] = *scores[known.back()];
    } else {
      const std::size_t b = *hi, a = *(hi - 1);
      const double f = static_cast<double>(t - a) / static_cast<double>(b - a);
      out[t] = *scores[a] + f * (*scores[b] - *scores[a]);
    }
  }
  return out;
}

struct ChangePointResult {
  std::string word;
  std::size_t cp_index = 0;  // first window of the right-hand segment
  double delta = 0;
  double left_mean = 0;
  double right_mean = 0;
};

namespace detail {

struct SegmentStats {
  double mean = 0;
  double sse = 0;
};

// Welford; exact zero SSE for constant segments.
inline SegmentStats segment_stats(std::span<const double> x) {
  SegmentStats s;
  std::size_t n = 0;
  for (double v : x) {
    ++n;
    const double d = v - s.mean;
    s.mean += d / static_cast<double>(n);
    s.sse += d * (v - s.mean);
  }
  return s;
}

}  // namespace detail

/// Best single split of `scores` into two constant segments under L2 cost.
/// Ties resolve to the smallest split index.
inline ChangePointResult single_change_point(std::span<const double> scores, std::size_t min_seg_len = 1) {
  if (min_seg_len == 0) throw InvalidArgument("min_seg_len must be at least 1");
  if (scores.size() < 2 * min_seg_len) {
    throw InvalidArgument("sequence of length " + std::to_string(scores.size()) + " is too short for a split with min_seg_len " +
                          std::to_string(min_seg_len));
  }
  ChangePointResult best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (std::size_t tau = min_seg_len; tau + min_seg_len <= scores.size(); ++tau) {
    const auto left = detail::segment_stats(scores.first(tau));
    const auto right = detail::segment_stats(scores.subspan(tau));
    const double cost = left.sse + right.sse;
    if (cost < best_cost) {
      best_cost = cost;
      best.cp_index = tau;
      best.left_mean = left.mean;
      best.right_mean = right.mean;
    }
  }
  best.delta = std::abs(best.left_mean - best.right_mean);
  return best;
}

/// Penalised optimal partition into constant segments under L2 cost (PELT).
/// Minimises sum SSE + penalty * (#change-points); returns the change-points
/// (segment start indices, excluding 0) in increasing order.
inline std::vector<std::size_t> pelt_segment(std::span<const double> scores, double penalty, std::size_t min_seg_len = 1) {
  if (!(penalty > 0)) throw InvalidArgument("penalty must be positive");
  if (min_seg_len == 0) throw InvalidArgument("min_seg_len must be at least 1");
  const std::size_t n = scores.size();
  if (n < min_seg_len) return {};

  // Centre the data so the prefix-sum SSE suffers less cancellation.
  const double centre = detail::segment_stats(scores).mean;
  std::vector<double> s1(n + 1, 0.0), s2(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = scores[i] - centre;
    s1[i + 1] = s1[i] + x;
    s2[i + 1] = s2[i] + x * x;
  }
  auto cost = [&](std::size_t a, std::size_t b) {
    const double len = static_cast<double>(b - a);
    const double sum = s1[b] - s1[a];
    return std::max(0.0, (s2[b] - s2[a]) - sum * sum / len);
  };

  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> F(n + 1, kInf);
  std::vector<std::size_t> prev(n + 1, 0);
  F[0] = -penalty;
  std::vector<std::size_t> candidates{0};

  for (std::size_t t = min_seg_len; t <= n; ++t) {
    double best = kInf;
    std::size_t arg = 0;
    for (std::size_t s : candidates) {
      if (t - s < min_seg_len || F[s] == kInf) continue;
      const double total = F[s] + cost(s, t) + penalty;
      if (total < best) {
        best = total;
        arg = s;
      }
    }
    F[t] = best;
    prev[t] = arg;

    // SSE is superadditive over adjacent segments, so pruning needs no extra
    // constant; the slack only guards against rounding.
    const double slack = 1e-9 * (1.0 + std::abs(best));
    std::vector<std::size_t> kept;
    kept.reserve(candidates.size() + 1);
    for (std::size_t s : candidates) {
      if (t - s < min_seg_len || F[s] == kInf || F[s] + cost(s, t) <= best + slack) kept.push_back(s);
    }
    if (t + min_seg_len <= n) kept.push_back(t);
    candidates = std::move(kept);
  }

  if (F[n] == kInf) throw InvalidArgument("no segmentation satisfies min_seg_len");
  std::vector<std::size_t> cps;
  for (std::size_t t = prev[n]; t > 0; t = prev[t]) cps.push_back(t);
  std::reverse(cps.begin(), cps.end());
  return cps;
}

enum class LogBase { natural, two };

/// Jensen-Shannon divergence; bounded by ln 2 (or 1 bit for LogBase::two).
inline double jsd(std::span<const double> p, std::span<const double> q, LogBase base = LogBase::natural) {
  if (p.size() != q.size()) {
    throw InvalidArgument("jsd length mismatch: " + std::to_string(p.size()) + " vs " + std::to_string(q.size()));
  }
  detail::require_simplex(p, "jsd p");
  detail::require_simplex(q, "jsd q");
  double kl_p = 0, kl_q = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0) kl_p += p[i] * std::log(p[i] / m);
    if (q[i] > 0) kl_q += q[i] * std::log(q[i] / m);
  }
  double r = 0.5 * kl_p + 0.5 * kl_q;
  r = std::clamp(r, 0.0, std::numbers::ln2);
  return base == LogBase::two ? r / std::numbers::ln2 : r;
}

struct NoveltyRecord {
  std::string author;
  std::size_t window_index = 0;
  double novelty = 0;
  std::string group;
};

namespace detail {

/// Token-weighted mean theta over the selected sub-documents, renormalised.
template <typename Pred>
std::vector<double> mean_theta(const WindowedCorpus& corpus, std::span<const double> thetas, std::size_t K, Pred select) {
  std::vector<double> acc(K, 0.0);
  double total = 0;
  for (std::size_t d = 0; d < corpus.subdocs.size(); ++d) {
    const auto& sd = corpus.subdocs[d];
    if (!select(sd)) continue;
    for (std::size_t k = 0; k < K; ++k) acc[k] += sd.token_count * thetas[d * K + k];
    total += sd.token_count;
  }
  if (total == 0) return {};
  double z = 0;
  for (double v : acc) z += v;
  for (double& v : acc) v /= z;
  return acc;
}

}  // namespace detail

/// The window holding most of an author's tokens (earliest on ties).
inline std::size_t author_window(const WindowedCorpus& corpus, const std::string& author) {
  std::vector<std::uint64_t> tokens(corpus.window_count(), 0);
  bool found = false;
  for (const auto& sd : corpus.subdocs) {
    if (sd.author != author) continue;
    tokens[sd.window] += sd.token_count;
    found = true;
  }
  if (!found) throw InvalidArgument("author '" + author + "' has no sub-documents");
  return static_cast<std::size_t>(std::max_element(tokens.begin(), tokens.end()) - tokens.begin());
}

/// JSD between an author's mean topic distribution and that of the window
/// immediately before theirs. `thetas` is [N][K] aligned with corpus.subdocs.
inline NoveltyRecord author_novelty(const WindowedCorpus& corpus, std::span<const double> thetas, std::size_t K,
                                    const std::string& author, LogBase base = LogBase::natural) {
  if (thetas.size() != corpus.subdocs.size() * K) throw InvalidArgument("theta matrix does not match corpus");
  const std::size_t t = author_window(corpus, author);
  if (t == 0) throw InvalidArgument("author '" + author + "' is in window 0: no preceding window");
  const auto mine = detail::mean_theta(corpus, thetas, K, [&](const SubDocument& sd) {
    return sd.author == author && sd.window == t;
  });
  const auto before = detail::mean_theta(corpus, thetas, K, [&](const SubDocument& sd) { return sd.window == t - 1; });
  if (before.empty()) {
    throw InvalidArgument("window " + std::to_string(t - 1) + " preceding author '" + author + "' is empty");
  }
  return {author, t, jsd(mine, before, base), {}};
}

inline NoveltyRecord author_novelty(const DetmState& s, const WindowedCorpus& corpus, const std::string& author,
                                    LogBase base = LogBase::natural) {
  return author_novelty(corpus, infer_all_theta(s, corpus), s.layout.K, author, base);
}

struct NoveltyTable {
  std::vector<NoveltyRecord> records;
  std::vector<std::string> skipped;  // authors without a usable preceding window, with reason
};

/// Novelty for every author in the corpus, skipping those it is undefined for.
inline NoveltyTable author_novelties(const WindowedCorpus& corpus, std::span<const double> thetas, std::size_t K,
                                     const std::map<std::string, std::string>& groups = {},
                                     LogBase base = LogBase::natural) {
  std::set<std::string> authors;
  for (const auto& sd : corpus.subdocs) authors.insert(sd.author);
  NoveltyTable out;
  for (const auto& a : authors) {
    try {
      auto rec = author_novelty(corpus, thetas, K, a, base);
      if (auto it = groups.find(a); it != groups.end()) rec.group = it->second;
      out.records.push_back(std::move(rec));
    } catch (const InvalidArgument& e) {
      out.skipped.push_back(e.what());
    }
  }
  return out;
}

inline std::vector<double> summed_deltas_by_window(std::span<const ChangePointResult> results, std::size_t windows) {
  std::vector<double> out(windows, 0.0);
  for (const auto& r : results) {
    if (r.cp_index == 0 || r.cp_index >= windows) {
      throw InvalidArgument("change-point index " + std::to_string(r.cp_index) + " outside [1, " +
                            std::to_string(windows - 1) + "]");
    }
    out[r.cp_index] += r.delta;
  }
  return out;
}

struct MeasureOptions {
  std::size_t min_attested_windows = 4;
  std::size_t min_seg_len = 1;
  LogBase log_base = LogBase::natural;
};

inline void to_json(nlohmann::json& j, const MeasureOptions& m) {
  j = {{"min_attested_windows", m.min_attested_windows},
       {"min_seg_len", m.min_seg_len},
       {"log_base", m.log_base == LogBase::two ? "2" : "e"}};
}

inline void from_json(const nlohmann::json& j, MeasureOptions& m) {
  m.min_attested_windows = j.value("min_attested_windows", m.min_attested_windows);
  m.min_seg_len = j.value("min_seg_len", m.min_seg_len);
  const auto base = j.value("log_base", std::string("e"));
  if (base != "e" && base != "2") throw InvalidArgument("log_base must be \"e\" or \"2\"");
  m.log_base = base == "2" ? LogBase::two : LogBase::natural;
}

/// Change-point of every word attested in at least `min_attested_windows`
/// windows, after interpolating the unattested ones.
inline std::vector<ChangePointResult> word_change_points(std::span<const BimodalityCurve> curves,
                                                         const MeasureOptions& opt = {}) {
  std::vector<ChangePointResult> out;
  for (const auto& c : curves) {
    if (c.attested() < std::max<std::size_t>(1, opt.min_attested_windows)) continue;
    const auto filled = fill_missing(c.scores);
    auto r = single_change_point(filled, opt.min_seg_len);
    r.word = c.word;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace diachron
