// Apache License, Version 2.0, refer to LICENSE.txt

// Tabular and nested report artefacts. Numbers are written with 9
// significant digits; row structs hold values already quantised to that
// precision, so parsing an emitted file recovers its rows exactly.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "diachron/corpus.hpp"
#include "diachron/detm.hpp"
#include "diachron/detm_fit.hpp"
#include "diachron/error.hpp"
#include "diachron/measures.hpp"

namespace diachron {

// ---------------------------------------------------------------------------
// CSV primitives

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

/// Nearest double to `v` printed with 9 significant digits.
inline double quantize(double v) { return std::strtod(format_number(v).c_str(), nullptr); }

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string csv_row(std::initializer_list<std::string> fields) {
  std::string out;
  bool first = true;
  for (const auto& f : fields) {
    if (!first) out += ',';
    out += csv_field(f);
    first = false;
  }
  out += '\n';
  return out;
}

/// RFC 4180 reader: quoted fields, doubled quotes, LF or CRLF line ends.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    any = true;
    if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += c;
    }
  }
  if (quoted) throw ParseError("unterminated quoted CSV field", rows.size() + 1);
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace detail {

inline double parse_double(const std::string& s, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw ParseError("expected a number, got '" + s + "'", line);
  return v;
}

inline long long parse_int(const std::string& s, std::size_t line) {
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0') throw ParseError("expected an integer, got '" + s + "'", line);
  return v;
}

inline std::vector<std::vector<std::string>> parse_table(std::string_view text, std::span<const std::string> header) {
  auto rows = parse_csv(text);
  if (rows.empty() || !std::equal(rows[0].begin(), rows[0].end(), header.begin(), header.end())) {
    throw ParseError("unexpected CSV header", 1);
  }
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != header.size()) throw ParseError("wrong number of CSV fields", i + 1);
  }
  rows.erase(rows.begin());
  return rows;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Word ranking: words by change-point delta, descending

struct WordRankingRow {
  std::string word;
  int cp_window_start_year = 0;
  double delta = 0;
  std::string gloss;  // external dictionary data; empty unless supplied

  friend bool operator==(const WordRankingRow&, const WordRankingRow&) = default;
};

inline const std::vector<std::string> kWordRankingHeader = {"word", "cp_window_start_year", "delta", "gloss"};

inline std::vector<WordRankingRow> word_ranking(std::span<const ChangePointResult> results, const WindowSpec& spec,
                                                const std::map<std::string, std::string>& glosses = {}) {
  std::vector<WordRankingRow> rows;
  rows.reserve(results.size());
  for (const auto& r : results) {
    auto g = glosses.find(r.word);
    rows.push_back({r.word, spec.window_start(r.cp_index), quantize(r.delta), g == glosses.end() ? "" : g->second});
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.delta != b.delta ? a.delta > b.delta : a.word < b.word;
  });
  return rows;
}

inline std::string to_csv(std::span<const WordRankingRow> rows) {
  std::string out = csv_row({"word", "cp_window_start_year", "delta", "gloss"});
  for (const auto& r : rows) {
    out += csv_row({r.word, std::to_string(r.cp_window_start_year), format_number(r.delta), r.gloss});
  }
  return out;
}

inline std::string emit_word_ranking(std::span<const ChangePointResult> results, const WindowSpec& spec) {
  return to_csv(word_ranking(results, spec));
}

inline std::vector<WordRankingRow> parse_word_ranking(std::string_view csv) {
  std::vector<WordRankingRow> rows;
  std::size_t line = 1;
  for (auto& f : detail::parse_table(csv, kWordRankingHeader)) {
    ++line;
    rows.push_back({f[0], static_cast<int>(detail::parse_int(f[1], line)), detail::parse_double(f[2], line), f[3]});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Author ranking: authors by novelty, descending

struct AuthorRankingRow {
  std::string author;
  int window_start_year = 0;
  double novelty = 0;
  std::string group;

  friend bool operator==(const AuthorRankingRow&, const AuthorRankingRow&) = default;
};

inline const std::vector<std::string> kAuthorRankingHeader = {"author", "window_start_year", "novelty", "group"};

inline std::vector<AuthorRankingRow> author_ranking(std::span<const NoveltyRecord> records, const WindowSpec& spec) {
  std::vector<AuthorRankingRow> rows;
  for (const auto& r : records) {
    rows.push_back({r.author, spec.window_start(r.window_index), quantize(r.novelty), r.group});
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.novelty != b.novelty ? a.novelty > b.novelty : a.author < b.author;
  });
  return rows;
}

inline std::string to_csv(std::span<const AuthorRankingRow> rows) {
  std::string out = csv_row({"author", "window_start_year", "novelty", "group"});
  for (const auto& r : rows) {
    out += csv_row({r.author, std::to_string(r.window_start_year), format_number(r.novelty), r.group});
  }
  return out;
}

inline std::string emit_author_ranking(std::span<const NoveltyRecord> records, const WindowSpec& spec) {
  return to_csv(author_ranking(records, spec));
}

inline std::vector<AuthorRankingRow> parse_author_ranking(std::string_view csv) {
  std::vector<AuthorRankingRow> rows;
  std::size_t line = 1;
  for (auto& f : detail::parse_table(csv, kAuthorRankingHeader)) {
    ++line;
    rows.push_back({f[0], static_cast<int>(detail::parse_int(f[1], line)), detail::parse_double(f[2], line), f[3]});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Novelty histogram: author counts per equal-width novelty bin and group

struct HistogramRow {
  std::size_t bin = 0;
  double lower = 0;
  double upper = 0;
  std::string group;
  std::size_t count = 0;

  friend bool operator==(const HistogramRow&, const HistogramRow&) = default;
};

inline const std::vector<std::string> kHistogramHeader = {"bin", "lower", "upper", "group", "count"};

/// Every (bin, group) pair is present, so absent groups show zero counts.
/// `groups` lists groups to report even when no author belongs to them.
inline std::vector<HistogramRow> novelty_histogram(std::span<const NoveltyRecord> records, std::size_t bins = 10,
                                                   std::span<const std::string> groups = {}) {
  if (bins == 0) throw InvalidArgument("histogram needs at least one bin");
  std::set<std::string> all_groups(groups.begin(), groups.end());
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& r : records) {
    all_groups.insert(r.group);
    lo = std::min(lo, r.novelty);
    hi = std::max(hi, r.novelty);
  }
  if (records.empty()) lo = hi = 0;
  const double width = (hi - lo) / static_cast<double>(bins);

  std::map<std::pair<std::size_t, std::string>, std::size_t> counts;
  for (const auto& r : records) {
    std::size_t b = 0;
    if (width > 0) b = std::min(bins - 1, static_cast<std::size_t>(std::floor((r.novelty - lo) / width)));
    ++counts[{b, r.group}];
  }
  std::vector<HistogramRow> rows;
  for (std::size_t b = 0; b < bins; ++b) {
    const double lower = quantize(lo + width * static_cast<double>(b));
    const double upper = quantize(b + 1 == bins ? hi : lo + width * static_cast<double>(b + 1));
    for (const auto& g : all_groups) {
      auto it = counts.find({b, g});
      rows.push_back({b, lower, upper, g, it == counts.end() ? 0 : it->second});
    }
  }
  return rows;
}

inline std::string to_csv(std::span<const HistogramRow> rows) {
  std::string out = csv_row({"bin", "lower", "upper", "group", "count"});
  for (const auto& r : rows) {
    out += csv_row({std::to_string(r.bin), format_number(r.lower), format_number(r.upper), r.group,
                    std::to_string(r.count)});
  }
  return out;
}

inline std::string emit_novelty_histogram(std::span<const NoveltyRecord> records, std::size_t bins = 10,
                                          std::span<const std::string> groups = {}) {
  return to_csv(novelty_histogram(records, bins, groups));
}

inline std::vector<HistogramRow> parse_novelty_histogram(std::string_view csv) {
  std::vector<HistogramRow> rows;
  std::size_t line = 1;
  for (auto& f : detail::parse_table(csv, kHistogramHeader)) {
    ++line;
    rows.push_back({static_cast<std::size_t>(detail::parse_int(f[0], line)), detail::parse_double(f[1], line),
                    detail::parse_double(f[2], line), f[3], static_cast<std::size_t>(detail::parse_int(f[4], line))});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Per-window summed deltas

struct WindowDeltaRow {
  int window_start_year = 0;
  double summed_delta = 0;

  friend bool operator==(const WindowDeltaRow&, const WindowDeltaRow&) = default;
};

inline const std::vector<std::string> kWindowDeltaHeader = {"window_start_year", "summed_delta"};

inline std::vector<WindowDeltaRow> window_deltas(std::span<const double> summed, const WindowSpec& spec) {
  std::vector<WindowDeltaRow> rows;
  for (std::size_t t = 0; t < summed.size(); ++t) rows.push_back({spec.window_start(t), quantize(summed[t])});
  return rows;
}

inline std::string to_csv(std::span<const WindowDeltaRow> rows) {
  std::string out = csv_row({"window_start_year", "summed_delta"});
  for (const auto& r : rows) out += csv_row({std::to_string(r.window_start_year), format_number(r.summed_delta)});
  return out;
}

inline std::string emit_window_deltas(std::span<const double> summed, const WindowSpec& spec) {
  return to_csv(window_deltas(summed, spec));
}

inline std::vector<WindowDeltaRow> parse_window_deltas(std::string_view csv) {
  std::vector<WindowDeltaRow> rows;
  std::size_t line = 1;
  for (auto& f : detail::parse_table(csv, kWindowDeltaHeader)) {
    ++line;
    rows.push_back({static_cast<int>(detail::parse_int(f[0], line)), detail::parse_double(f[1], line)});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Training log

inline std::string emit_training_log(std::span<const EpochLog> log) {
  std::string out = csv_row({"epoch", "train_elbo", "dev_perplexity", "learning_rate"});
  for (const auto& e : log) {
    out += csv_row({std::to_string(e.epoch), format_number(e.train_elbo), format_number(e.dev_perplexity),
                    format_number(e.learning_rate)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Topic evolution

/// Top words per requested topic and window, plus the full topic curve of
/// each requested word (`null` rows for windows where it is unattested).
inline nlohmann::json emit_topic_evolution(const TopicWordDist& b, const Vocabulary& vocabulary, const WindowSpec& spec,
                                           std::span<const std::size_t> topics, std::size_t words_per_topic = 5,
                                           std::span<const WordTopicCurve> word_curves = {}) {
  if (words_per_topic == 0 || words_per_topic > b.V) {
    throw InvalidArgument("words_per_topic must lie in [1, " + std::to_string(b.V) + "]");
  }
  nlohmann::json jt = nlohmann::json::array();
  std::vector<std::size_t> order(b.V);
  for (std::size_t k : topics) {
    if (k >= b.K) throw InvalidArgument("unknown topic id " + std::to_string(k));
    nlohmann::json windows = nlohmann::json::array();
    for (std::size_t t = 0; t < b.T; ++t) {
      const auto row = b.row(k, t);
      std::iota(order.begin(), order.end(), 0);
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(words_per_topic), order.end(),
                        [&](std::size_t x, std::size_t y) { return row[x] != row[y] ? row[x] > row[y] : x < y; });
      nlohmann::json top = nlohmann::json::array();
      for (std::size_t i = 0; i < words_per_topic; ++i) {
        top.push_back({{"word", vocabulary.word(order[i])}, {"beta", quantize(row[order[i]])}});
      }
      windows.push_back({{"window", t}, {"start_year", spec.window_start(t)}, {"top_words", top}});
    }
    jt.push_back({{"topic", k}, {"windows", windows}});
  }
  nlohmann::json jw = nlohmann::json::array();
  for (const auto& c : word_curves) {
    nlohmann::json phi = nlohmann::json::array();
    for (std::size_t t = 0; t < c.windows(); ++t) {
      if (!c.available(t)) {
        phi.push_back(nullptr);
        continue;
      }
      nlohmann::json row = nlohmann::json::array();
      for (double v : c.row(t)) row.push_back(quantize(v));
      phi.push_back(row);
    }
    jw.push_back({{"word", c.word}, {"support", c.support}, {"phi", phi}});
  }
  return {{"topics", jt}, {"words", jw}};
}

// ---------------------------------------------------------------------------
// Author metadata

/// Reads an `author,group` CSV (header row required).
inline std::map<std::string, std::string> load_author_groups(const std::filesystem::path& path) {
  const auto rows = detail::parse_table(read_file(path), std::vector<std::string>{"author", "group"});
  std::map<std::string, std::string> out;
  for (const auto& r : rows) out[r[0]] = r[1];
  return out;
}

}  // namespace diachron
