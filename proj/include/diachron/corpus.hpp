// Apache License, Version 2.0, refer to LICENSE.txt

// Corpus ingestion and windowing.
//
// Documents arrive pre-lemmatized, one per JSONL line or as plain-text files
// laid out as <root>/<author>/<year>/<name>.txt. Each document is assigned to
// a fixed-width calendar window, cut into sub-documents of bounded length and
// reduced to bag-of-words counts over a frequency-thresholded vocabulary.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "diachron/error.hpp"
#include "diachron/hash.hpp"

namespace diachron {

struct Document {
  std::string id;
  std::string author;
  int year = 0;  // negative = BCE
  std::vector<std::string> tokens;
};

/// Fixed-width calendar windows tiling [start_year, start_year + width_years * count).
struct WindowSpec {
  int start_year = -250;
  int width_years = 75;
  int count = 10;

  void validate() const {
    if (width_years <= 0) throw InvalidArgument("window width must be positive");
    if (count <= 0) throw InvalidArgument("window count must be positive");
  }

  int end_year() const noexcept { return start_year + width_years * count; }
  bool covers(int year) const noexcept { return year >= start_year && year < end_year(); }
  int window_start(std::size_t t) const noexcept { return start_year + width_years * static_cast<int>(t); }

  std::size_t index_of(int year) const {
    if (!covers(year)) {
      throw InvalidArgument("year " + std::to_string(year) + " outside window range [" +
                            std::to_string(start_year) + ", " + std::to_string(end_year()) + ")");
    }
    // year - start_year >= 0 here, so integer division is floor.
    return static_cast<std::size_t>((year - start_year) / width_years);
  }

  friend bool operator==(const WindowSpec&, const WindowSpec&) = default;
};

inline void to_json(nlohmann::json& j, const WindowSpec& s) {
  j = {{"start_year", s.start_year}, {"width_years", s.width_years}, {"count", s.count}};
}
inline void from_json(const nlohmann::json& j, WindowSpec& s) {
  s.start_year = j.value("start_year", s.start_year);
  s.width_years = j.value("width_years", s.width_years);
  s.count = j.value("count", s.count);
}

/// Dense, bijective word <-> index map with corpus frequencies.
class Vocabulary {
 public:
  Vocabulary() = default;

  /// Builds from (word, frequency) pairs; indices follow the given order.
  explicit Vocabulary(std::vector<std::pair<std::string, std::uint64_t>> entries) {
    words_.reserve(entries.size());
    freqs_.reserve(entries.size());
    for (auto& [w, f] : entries) {
      auto [it, inserted] = index_.emplace(w, words_.size());
      if (!inserted) throw InvalidArgument("duplicate vocabulary entry '" + w + "'");
      words_.push_back(std::move(w));
      freqs_.push_back(f);
    }
  }

  std::size_t size() const noexcept { return words_.size(); }
  bool empty() const noexcept { return words_.empty(); }

  std::optional<std::uint32_t> find(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) return std::nullopt;
    return static_cast<std::uint32_t>(it->second);
  }

  std::uint32_t index(std::string_view word) const {
    auto idx = find(word);
    if (!idx) throw InvalidArgument("word '" + std::string(word) + "' is not in the vocabulary");
    return *idx;
  }

  const std::string& word(std::size_t i) const { return words_.at(i); }
  std::uint64_t frequency(std::size_t i) const { return freqs_.at(i); }
  const std::vector<std::string>& words() const noexcept { return words_; }
  const std::vector<std::uint64_t>& frequencies() const noexcept { return freqs_; }

  /// Order-sensitive fingerprint of the word list.
  std::uint64_t fingerprint() const {
    Fnv1a h;
    for (const auto& w : words_) h.update(w).update(std::string_view("\0", 1));
    return h.digest();
  }

 private:
  std::vector<std::string> words_;
  std::vector<std::uint64_t> freqs_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class Split : std::uint8_t { train, dev };

struct WordCount {
  std::uint32_t word;
  std::uint32_t count;
  friend bool operator==(const WordCount&, const WordCount&) = default;
};

/// Bag-of-words counts sorted by word index.
inline std::vector<WordCount> count_tokens(std::span<const std::uint32_t> tokens) {
  std::vector<std::uint32_t> sorted(tokens.begin(), tokens.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<WordCount> out;
  for (std::uint32_t w : sorted) {
    if (!out.empty() && out.back().word == w) {
      ++out.back().count;
    } else {
      out.push_back({w, 1});
    }
  }
  return out;
}

struct SubDocument {
  std::size_t window = 0;
  std::string author;
  std::string doc_id;
  std::vector<std::uint32_t> tokens;  // in-vocabulary tokens, original order
  std::vector<WordCount> counts;
  std::uint32_t token_count = 0;  // == sum of counts
  Split split = Split::train;

  static SubDocument make(std::size_t window, std::string author, std::string doc_id,
                          std::vector<std::uint32_t> tokens, Split split = Split::train) {
    SubDocument sd;
    sd.window = window;
    sd.author = std::move(author);
    sd.doc_id = std::move(doc_id);
    sd.counts = count_tokens(tokens);
    sd.token_count = static_cast<std::uint32_t>(tokens.size());
    sd.tokens = std::move(tokens);
    sd.split = split;
    return sd;
  }
};

struct WindowedCorpus {
  WindowSpec spec;
  Vocabulary vocabulary;
  std::vector<SubDocument> subdocs;
  std::size_t max_subdoc_tokens = 500;
  std::vector<std::string> warnings;

  std::size_t window_count() const noexcept { return static_cast<std::size_t>(spec.count); }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < subdocs.size(); ++i) {
      if (subdocs[i].split == s) out.push_back(i);
    }
    return out;
  }

  std::vector<std::size_t> subdocs_per_window() const {
    std::vector<std::size_t> out(window_count(), 0);
    for (const auto& sd : subdocs) ++out.at(sd.window);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Ingestion

enum class InputFormat { jsonl, plain_dir };

inline InputFormat parse_input_format(std::string_view name) {
  if (name == "jsonl") return InputFormat::jsonl;
  if (name == "plain_dir") return InputFormat::plain_dir;
  throw InvalidArgument("unknown input format '" + std::string(name) + "' (expected jsonl or plain_dir)");
}

struct IngestResult {
  std::vector<Document> documents;
  std::size_t dropped_out_of_range = 0;
  std::vector<std::string> skipped;  // one message per rejected record
};

namespace detail {

inline Document parse_jsonl_record(const std::string& line, std::size_t line_no) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed JSON record: ") + e.what(), line_no);
  }
  if (!j.is_object()) throw ParseError("record is not a JSON object", line_no);

  Document doc;
  if (auto it = j.find("id"); it != j.end()) {
    if (!it->is_string()) throw ParseError("field 'id' must be a string", line_no);
    doc.id = it->get<std::string>();
  } else {
    doc.id = "line" + std::to_string(line_no);
  }

  auto author = j.find("author");
  if (author == j.end() || !author->is_string()) {
    throw ParseError("missing or non-string field 'author'", line_no);
  }
  doc.author = author->get<std::string>();

  auto year = j.find("year");
  if (year == j.end() || year->is_null()) throw ParseError("missing field 'year'", line_no);
  if (!year->is_number_integer()) throw ParseError("field 'year' must be an integer", line_no);
  doc.year = year->get<int>();

  auto tokens = j.find("tokens");
  if (tokens == j.end() || !tokens->is_array()) {
    throw ParseError("missing or non-array field 'tokens'", line_no);
  }
  doc.tokens.reserve(tokens->size());
  for (const auto& t : *tokens) {
    if (!t.is_string()) throw ParseError("non-string token", line_no);
    doc.tokens.push_back(t.get<std::string>());
  }
  return doc;
}

inline std::vector<std::string> split_whitespace(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(std::move(tok));
  return out;
}

inline std::vector<std::filesystem::path> sorted_entries(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline void accept(IngestResult& result, Document doc, const WindowSpec& spec, const std::string& where) {
  if (doc.tokens.empty()) {
    result.skipped.push_back(where + ": document '" + doc.id + "' has no tokens");
    return;
  }
  if (!spec.covers(doc.year)) {
    ++result.dropped_out_of_range;
    return;
  }
  result.documents.push_back(std::move(doc));
}

}  // namespace detail

/// Reads documents in input order. Documents outside `spec`'s year range are
/// dropped and counted; empty documents are skipped with a message.
inline IngestResult ingest(const std::filesystem::path& path, InputFormat format, const WindowSpec& spec) {
  spec.validate();
  IngestResult result;

  if (format == InputFormat::jsonl) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open corpus file " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      detail::accept(result, detail::parse_jsonl_record(line, line_no), spec, "line " + std::to_string(line_no));
    }
    return result;
  }

  if (!std::filesystem::is_directory(path)) throw InvalidArgument("corpus directory not found: " + path.string());
  for (const auto& author_dir : detail::sorted_entries(path)) {
    if (!std::filesystem::is_directory(author_dir)) continue;
    for (const auto& year_dir : detail::sorted_entries(author_dir)) {
      if (!std::filesystem::is_directory(year_dir)) continue;
      const std::string name = year_dir.filename().string();
      int year = 0;
      std::size_t consumed = 0;
      try {
        year = std::stoi(name, &consumed);
      } catch (const std::exception&) {
        consumed = 0;
      }
      if (consumed != name.size()) throw ParseError("directory '" + year_dir.string() + "' is not a year", 0);
      for (const auto& file : detail::sorted_entries(year_dir)) {
        if (!std::filesystem::is_regular_file(file)) continue;
        Document doc;
        doc.author = author_dir.filename().string();
        doc.year = year;
        doc.id = doc.author + "/" + name + "/" + file.stem().string();
        doc.tokens = detail::split_whitespace(read_file(file));
        detail::accept(result, std::move(doc), spec, file.string());
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Windowing and sub-documents

inline std::vector<std::pair<const Document*, std::size_t>> assign_windows(std::span<const Document> docs,
                                                                           const WindowSpec& spec) {
  spec.validate();
  std::vector<std::pair<const Document*, std::size_t>> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.emplace_back(&d, spec.index_of(d.year));
  return out;
}

/// Greedy fixed-size chunking; only the last piece may be short.
template <typename T>
std::vector<std::vector<T>> split_subdocs(std::span<const T> tokens, std::size_t max_tokens = 500) {
  if (max_tokens == 0) throw InvalidArgument("max_tokens must be at least 1");
  std::vector<std::vector<T>> pieces;
  for (std::size_t begin = 0; begin < tokens.size(); begin += max_tokens) {
    const std::size_t end = std::min(tokens.size(), begin + max_tokens);
    pieces.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(begin),
                        tokens.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return pieces;
}

inline std::vector<std::vector<std::string>> split_subdocs(const std::vector<std::string>& tokens,
                                                           std::size_t max_tokens = 500) {
  return split_subdocs(std::span<const std::string>(tokens), max_tokens);
}

struct CorpusOptions {
  std::size_t max_subdoc_tokens = 500;
  std::uint64_t min_word_count = 5;
  double dev_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (max_subdoc_tokens == 0) throw InvalidArgument("max_subdoc_tokens must be at least 1");
    if (min_word_count == 0) throw InvalidArgument("min_word_count must be at least 1");
    if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) throw InvalidArgument("dev_fraction must lie in (0, 1)");
  }
};

/// Number of dev sub-documents for a corpus of `n`: round(fraction * n), kept
/// within [1, n - 1] once there are at least two sub-documents.
inline std::size_t dev_count(std::size_t n, double fraction) {
  if (n < 2) return 0;
  auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, 1, n - 1);
}

/// Seeded train/dev assignment at sub-document level.
inline void assign_splits(std::vector<SubDocument>& subdocs, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(subdocs.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_dev = dev_count(subdocs.size(), fraction);
  for (std::size_t i = 0; i < order.size(); ++i) {
    subdocs[order[i]].split = i < n_dev ? Split::dev : Split::train;
  }
}

inline WindowedCorpus build_corpus(std::span<const Document> docs, const WindowSpec& spec,
                                   const CorpusOptions& options) {
  spec.validate();
  options.validate();
  const auto windowed = assign_windows(docs, spec);

  std::map<std::string, std::uint64_t> freq;
  for (const auto& d : docs) {
    for (const auto& t : d.tokens) ++freq[t];
  }
  std::vector<std::pair<std::string, std::uint64_t>> entries;
  for (auto& [w, f] : freq) {
    if (f >= options.min_word_count) entries.emplace_back(w, f);
  }
  if (entries.empty()) throw InvalidArgument("vocabulary is empty after applying min_word_count");
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  WindowedCorpus corpus;
  corpus.spec = spec;
  corpus.max_subdoc_tokens = options.max_subdoc_tokens;
  corpus.vocabulary = Vocabulary(std::move(entries));

  for (const auto& [doc, window] : windowed) {
    std::size_t piece_no = 0;
    for (const auto& piece : split_subdocs(std::span<const std::string>(doc->tokens), options.max_subdoc_tokens)) {
      std::vector<std::uint32_t> ids;
      ids.reserve(piece.size());
      for (const auto& t : piece) {
        if (auto idx = corpus.vocabulary.find(t)) ids.push_back(*idx);
      }
      const std::string sub_id = doc->id + "#" + std::to_string(piece_no++);
      if (ids.empty()) continue;
      corpus.subdocs.push_back(SubDocument::make(window, doc->author, sub_id, std::move(ids)));
    }
  }
  if (corpus.subdocs.empty()) throw InvalidArgument("corpus has no sub-documents with in-vocabulary tokens");

  assign_splits(corpus.subdocs, options.dev_fraction, options.seed);

  const auto per_window = corpus.subdocs_per_window();
  for (std::size_t t = 0; t < per_window.size(); ++t) {
    if (per_window[t] == 0) {
      corpus.warnings.push_back("window " + std::to_string(t) + " [" + std::to_string(spec.window_start(t)) + ", " +
                                std::to_string(spec.window_start(t + 1)) + ") has no sub-documents");
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Summary and persistence

inline nlohmann::json corpus_summary(const WindowedCorpus& corpus, const IngestResult* ingest_result = nullptr) {
  std::set<std::string> authors;
  std::set<std::string> documents;
  std::vector<std::uint64_t> tokens(corpus.window_count(), 0);
  for (const auto& sd : corpus.subdocs) {
    authors.insert(sd.author);
    documents.insert(sd.doc_id.substr(0, sd.doc_id.rfind('#')));
    tokens[sd.window] += sd.token_count;
  }
  const auto per_window = corpus.subdocs_per_window();
  nlohmann::json windows = nlohmann::json::array();
  for (std::size_t t = 0; t < corpus.window_count(); ++t) {
    windows.push_back({{"index", t},
                       {"start_year", corpus.spec.window_start(t)},
                       {"end_year", corpus.spec.window_start(t + 1)},
                       {"subdocs", per_window[t]},
                       {"tokens", tokens[t]}});
  }
  nlohmann::json j = {{"documents", documents.size()},
                      {"authors", authors.size()},
                      {"subdocs", corpus.subdocs.size()},
                      {"train_subdocs", corpus.indices(Split::train).size()},
                      {"dev_subdocs", corpus.indices(Split::dev).size()},
                      {"vocabulary_size", corpus.vocabulary.size()},
                      {"windows", windows},
                      {"warnings", corpus.warnings}};
  if (ingest_result) {
    j["dropped_out_of_range"] = ingest_result->dropped_out_of_range;
    j["skipped_records"] = ingest_result->skipped.size();
  }
  return j;
}

inline nlohmann::json corpus_to_json(const WindowedCorpus& corpus) {
  nlohmann::json vocab = nlohmann::json::array();
  for (std::size_t i = 0; i < corpus.vocabulary.size(); ++i) {
    vocab.push_back({corpus.vocabulary.word(i), corpus.vocabulary.frequency(i)});
  }
  nlohmann::json subdocs = nlohmann::json::array();
  for (const auto& sd : corpus.subdocs) {
    subdocs.push_back({{"window", sd.window},
                       {"author", sd.author},
                       {"id", sd.doc_id},
                       {"split", sd.split == Split::dev ? "dev" : "train"},
                       {"tokens", sd.tokens}});
  }
  return {{"format", "diachron-corpus"}, {"version", 1},
          {"spec", corpus.spec},         {"max_subdoc_tokens", corpus.max_subdoc_tokens},
          {"vocabulary", vocab},         {"subdocs", subdocs},
          {"warnings", corpus.warnings}};
}

inline WindowedCorpus corpus_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "diachron-corpus") throw ParseError("not a diachron corpus checkpoint", 0);
  WindowedCorpus corpus;
  corpus.spec = j.at("spec").get<WindowSpec>();
  corpus.max_subdoc_tokens = j.at("max_subdoc_tokens").get<std::size_t>();
  std::vector<std::pair<std::string, std::uint64_t>> entries;
  for (const auto& e : j.at("vocabulary")) entries.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::uint64_t>());
  corpus.vocabulary = Vocabulary(std::move(entries));
  for (const auto& s : j.at("subdocs")) {
    auto tokens = s.at("tokens").get<std::vector<std::uint32_t>>();
    for (auto w : tokens) {
      if (w >= corpus.vocabulary.size()) throw ParseError("token index out of range in corpus checkpoint", 0);
    }
    corpus.subdocs.push_back(SubDocument::make(s.at("window").get<std::size_t>(), s.at("author").get<std::string>(),
                                               s.at("id").get<std::string>(), std::move(tokens),
                                               s.at("split").get<std::string>() == "dev" ? Split::dev : Split::train));
  }
  corpus.warnings = j.value("warnings", std::vector<std::string>{});
  return corpus;
}

}  // namespace diachron
