// Apache License, Version 2.0, refer to LICENSE.txt

// End-to-end orchestration: ingest -> corpus -> embeddings -> model ->
// measures -> reports. Each expensive stage writes a checkpoint named after a
// hash of the configuration it depends on, so a rerun with --resume only
// recomputes stages whose inputs changed. Files are written under a
// ".partial" name and renamed once complete.

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "diachron/corpus.hpp"
#include "diachron/detm.hpp"
#include "diachron/detm_fit.hpp"
#include "diachron/embeddings.hpp"
#include "diachron/error.hpp"
#include "diachron/hash.hpp"
#include "diachron/measures.hpp"
#include "diachron/report.hpp"

namespace diachron {

/// Raised for unusable configuration (CLI exit code 1).
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

enum class Stage { ingest = 0, embed = 1, train = 2, measure = 3, report = 4 };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::ingest: return "ingest";
    case Stage::embed: return "embed";
    case Stage::train: return "train";
    case Stage::measure: return "measure";
    case Stage::report: return "report";
  }
  return "?";
}

struct PipelineConfig {
  std::filesystem::path corpus_path;
  InputFormat format = InputFormat::jsonl;
  WindowSpec windows;
  CorpusOptions corpus;
  SgnsConfig sgns;
  DetmConfig detm;
  MeasureOptions measures;
  std::size_t histogram_bins = 10;
  std::size_t words_per_topic = 5;
  std::vector<std::string> evolution_words;   // empty: the two top-ranked words
  std::vector<std::size_t> evolution_topics;  // empty: the dominant topics of evolution_words
  std::optional<std::filesystem::path> author_metadata;
  std::filesystem::path output_dir = "diachron-out";
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  bool resume = false;

  /// Component seeds are derived from the top-level seed.
  void apply_seed() {
    corpus.seed = seed;
    sgns.seed = seed + 1;
    detm.seed = seed + 2;
  }
};

namespace detail {

inline nlohmann::json load_config_document(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  const std::string text = read_file(path);
  const auto ext = path.extension().string();
  if (ext == ".toml") {
    try {
      toml::table table = toml::parse(text, path.string());
      std::ostringstream out;
      out << toml::json_formatter{table};
      return nlohmann::json::parse(out.str());
    } catch (const toml::parse_error& e) {
      throw ConfigError("invalid TOML in " + path.string() + ": " + std::string(e.description()));
    }
  }
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace detail

/// Parses a JSON document in the config schema. Relative paths resolve
/// against `base_dir`.
inline PipelineConfig parse_pipeline_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  PipelineConfig c;
  try {
    const auto& jc = j.at("corpus");
    c.corpus_path = detail::resolve(base_dir, jc.at("path").get<std::string>());
    c.format = parse_input_format(jc.value("format", std::string("jsonl")));
    c.corpus.max_subdoc_tokens = jc.value("max_subdoc_tokens", c.corpus.max_subdoc_tokens);
    c.corpus.min_word_count = jc.value("min_word_count", c.corpus.min_word_count);
    c.corpus.dev_fraction = jc.value("dev_fraction", c.corpus.dev_fraction);
    if (j.contains("windows")) c.windows = j.at("windows").get<WindowSpec>();
    if (j.contains("embeddings")) c.sgns = j.at("embeddings").get<SgnsConfig>();
    if (j.contains("detm")) c.detm = j.at("detm").get<DetmConfig>();
    if (j.contains("measures")) {
      const auto& jm = j.at("measures");
      c.measures = jm.get<MeasureOptions>();
      c.histogram_bins = jm.value("histogram_bins", c.histogram_bins);
      c.words_per_topic = jm.value("words_per_topic", c.words_per_topic);
      c.evolution_words = jm.value("evolution_words", c.evolution_words);
      c.evolution_topics = jm.value("evolution_topics", c.evolution_topics);
    }
    if (j.contains("authors")) c.author_metadata = detail::resolve(base_dir, j.at("authors").get<std::string>());
    c.output_dir = detail::resolve(base_dir, j.value("output_dir", std::string("diachron-out")));
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  c.detm.windows = static_cast<std::size_t>(c.windows.count);
  c.apply_seed();
  return c;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  return parse_pipeline_config(detail::load_config_document(path), path.parent_path());
}

/// Checks everything that can be checked before any output is written.
inline void validate(const PipelineConfig& c) {
  try {
    c.windows.validate();
    c.corpus.validate();
    c.sgns.validate();
    DetmConfig d = c.detm;
    d.windows = static_cast<std::size_t>(c.windows.count);
    if (d.embedding_dim == 0) d.embedding_dim = c.sgns.dim;
    d.validate();
    if (d.embedding_dim != c.sgns.dim) throw InvalidArgument("detm.embedding_dim must equal embeddings.dim");
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (c.threads == 0) throw ConfigError("threads must be positive");
  if (c.histogram_bins == 0 || c.words_per_topic == 0) throw ConfigError("histogram_bins and words_per_topic must be positive");
  if (c.corpus_path.empty() || !std::filesystem::exists(c.corpus_path)) {
    throw ConfigError("corpus path not found: " + c.corpus_path.string());
  }
  if (c.author_metadata && !std::filesystem::is_regular_file(*c.author_metadata)) {
    throw ConfigError("author metadata not found: " + c.author_metadata->string());
  }
}

struct ManifestEntry {
  std::string name;
  std::string sha256;
  std::uint64_t bytes = 0;
};

struct ReportBundle {
  std::filesystem::path output_dir;
  std::vector<ManifestEntry> files;
  std::filesystem::path embeddings_checkpoint;  // empty when the embed stage did not run

  const ManifestEntry* find(std::string_view name) const {
    for (const auto& f : files) {
      if (f.name == name) return &f;
    }
    return nullptr;
  }
};

/// Names of the report files emitted by a full run.
inline const std::vector<std::string> kReportFiles = {"corpus_summary.json", "word_ranking.csv",
                                                      "author_ranking.csv",  "novelty_histogram.csv",
                                                      "window_deltas.csv",   "topic_evolution.json"};

struct MeasureOutput {
  std::vector<BimodalityCurve> curves;
  std::vector<ChangePointResult> change_points;
  NoveltyTable novelty;
};

inline nlohmann::json measures_to_json(const MeasureOutput& m) {
  nlohmann::json curves = nlohmann::json::array();
  for (const auto& c : m.curves) {
    nlohmann::json scores = nlohmann::json::array();
    for (const auto& s : c.scores) scores.push_back(s ? nlohmann::json(*s) : nlohmann::json(nullptr));
    curves.push_back({{"word", c.word}, {"scores", scores}, {"support", c.support}});
  }
  nlohmann::json cps = nlohmann::json::array();
  for (const auto& r : m.change_points) {
    cps.push_back({{"word", r.word}, {"cp_index", r.cp_index}, {"delta", r.delta},
                   {"left_mean", r.left_mean}, {"right_mean", r.right_mean}});
  }
  nlohmann::json nov = nlohmann::json::array();
  for (const auto& r : m.novelty.records) {
    nov.push_back({{"author", r.author}, {"window", r.window_index}, {"novelty", r.novelty}, {"group", r.group}});
  }
  return {{"curves", curves}, {"change_points", cps}, {"novelty", nov}, {"skipped_authors", m.novelty.skipped}};
}

inline MeasureOutput measures_from_json(const nlohmann::json& j) {
  MeasureOutput m;
  for (const auto& c : j.at("curves")) {
    BimodalityCurve bc;
    bc.word = c.at("word").get<std::string>();
    for (const auto& s : c.at("scores")) {
      bc.scores.push_back(s.is_null() ? std::nullopt : std::optional<double>(s.get<double>()));
    }
    bc.support = c.at("support").get<std::vector<std::uint64_t>>();
    m.curves.push_back(std::move(bc));
  }
  for (const auto& r : j.at("change_points")) {
    m.change_points.push_back({r.at("word").get<std::string>(), r.at("cp_index").get<std::size_t>(),
                               r.at("delta").get<double>(), r.at("left_mean").get<double>(),
                               r.at("right_mean").get<double>()});
  }
  for (const auto& r : j.at("novelty")) {
    m.novelty.records.push_back({r.at("author").get<std::string>(), r.at("window").get<std::size_t>(),
                                 r.at("novelty").get<double>(), r.at("group").get<std::string>()});
  }
  m.novelty.skipped = j.at("skipped_authors").get<std::vector<std::string>>();
  return m;
}

/// Bimodality curves, change-points and author novelties of a fitted model.
inline MeasureOutput compute_measures(const DetmState& state, const WindowedCorpus& corpus, const MeasureOptions& opt,
                                      const std::map<std::string, std::string>& groups) {
  MeasureOutput m;
  const auto thetas = infer_all_theta(state, corpus);
  const auto word_curves = word_topic_curves(corpus, thetas, beta(state));
  m.curves.reserve(word_curves.size());
  for (const auto& c : word_curves) m.curves.push_back(bimodality_curve(c));
  m.change_points = word_change_points(m.curves, opt);
  m.novelty = author_novelties(corpus, thetas, state.layout.K, groups, opt.log_base);
  for (auto& r : m.novelty.records) {
    if (r.group.empty()) r.group = "unknown";
  }
  return m;
}

namespace detail {

class StageWriter {
 public:
  StageWriter(std::filesystem::path dir, ReportBundle& bundle) : dir_(std::move(dir)), bundle_(bundle) {}

  /// Writes `name` atomically in the output directory and records it.
  void emit(const std::string& name, const std::string& content) {
    write_atomic(dir_ / name, content);
    bundle_.files.push_back({name, sha256_hex(content), content.size()});
  }

  static void write_atomic(const std::filesystem::path& path, std::string_view content) {
    auto partial = path;
    partial += ".partial";
    {
      std::ofstream out(partial, std::ios::binary);
      if (!out) throw Error("cannot write " + partial.string());
      out.write(content.data(), static_cast<std::streamsize>(content.size()));
      if (!out) throw Error("failed writing " + partial.string());
    }
    std::filesystem::rename(partial, path);
  }

  template <typename Fn>
  static void write_atomic_with(const std::filesystem::path& path, Fn&& writer) {
    auto partial = path;
    partial += ".partial";
    writer(partial);
    std::filesystem::rename(partial, path);
  }

 private:
  std::filesystem::path dir_;
  ReportBundle& bundle_;
};

inline std::string key_of(std::string_view upstream, const nlohmann::json& slice) {
  return to_hex(Fnv1a{}.update(upstream).update(slice.dump()).digest());
}

/// Words and topics shown in the topic-evolution report.
inline std::pair<std::vector<std::string>, std::vector<std::size_t>> evolution_selection(
    const PipelineConfig& cfg, const std::vector<WordRankingRow>& ranking, const std::vector<WordTopicCurve>& curves,
    const Vocabulary& vocab, std::size_t K) {
  std::vector<std::string> words = cfg.evolution_words;
  if (words.empty()) {
    for (std::size_t i = 0; i < std::min<std::size_t>(2, ranking.size()); ++i) words.push_back(ranking[i].word);
  }
  std::vector<std::size_t> topics = cfg.evolution_topics;
  if (topics.empty()) {
    std::set<std::size_t> chosen;
    for (const auto& w : words) {
      const auto& c = curves.at(vocab.index(w));
      std::vector<double> mass(K, 0.0);
      for (std::size_t t = 0; t < c.windows(); ++t) {
        for (std::size_t k = 0; k < K; ++k) mass[k] += c.phi[t * K + k];
      }
      std::vector<std::size_t> order(K);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return mass[a] > mass[b]; });
      for (std::size_t i = 0; i < std::min<std::size_t>(2, K); ++i) chosen.insert(order[i]);
    }
    topics.assign(chosen.begin(), chosen.end());
  }
  return {words, topics};
}

}  // namespace detail

/// Runs every stage up to and including `last`. With `resume`, stages whose
/// checkpoint key matches an existing checkpoint are loaded instead of rerun.
/// `require_trained` refuses to fit a model and fails without a checkpoint.
inline ReportBundle run_pipeline(PipelineConfig cfg, Stage last = Stage::report,
                                 const std::function<void(std::string_view)>& log = {},
                                 bool require_trained = false) {
  validate(cfg);
  if (require_trained) cfg.resume = true;
  cfg.detm.windows = static_cast<std::size_t>(cfg.windows.count);
  if (cfg.detm.embedding_dim == 0) cfg.detm.embedding_dim = cfg.sgns.dim;
  cfg.detm.threads = cfg.threads;
  auto say = [&](const std::string& msg) {
    if (log) log(msg);
  };

  const auto out_dir = cfg.output_dir;
  const auto ckpt_dir = out_dir / "checkpoints";
  try {
    std::filesystem::create_directories(ckpt_dir);
  } catch (const std::filesystem::filesystem_error& e) {
    throw ConfigError("cannot create output directory " + out_dir.string() + ": " + e.what());
  }

  ReportBundle bundle;
  bundle.output_dir = out_dir;
  detail::StageWriter writer(out_dir, bundle);

  auto stage = [&](Stage s, auto&& body) {
    try {
      return body();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(stage_name(s), e.what());
    }
  };

  // -- ingest / corpus
  const std::string input_hash = std::filesystem::is_regular_file(cfg.corpus_path)
                                     ? sha256_file(cfg.corpus_path)
                                     : cfg.corpus_path.lexically_normal().string();
  const std::string corpus_key = detail::key_of(
      "corpus", {{"input", input_hash},
                 {"format", cfg.format == InputFormat::jsonl ? "jsonl" : "plain_dir"},
                 {"windows", cfg.windows},
                 {"max_subdoc_tokens", cfg.corpus.max_subdoc_tokens},
                 {"min_word_count", cfg.corpus.min_word_count},
                 {"dev_fraction", cfg.corpus.dev_fraction},
                 {"seed", cfg.corpus.seed}});
  const auto corpus_file = ckpt_dir / ("corpus-" + corpus_key + ".json");
  const auto summary_file = ckpt_dir / ("corpus-" + corpus_key + ".summary.json");

  WindowedCorpus corpus = stage(Stage::ingest, [&] {
    if (cfg.resume && std::filesystem::exists(corpus_file) && std::filesystem::exists(summary_file)) {
      say("ingest: using checkpoint " + corpus_file.filename().string());
      return corpus_from_json(nlohmann::json::parse(read_file(corpus_file)));
    }
    say("ingest: reading " + cfg.corpus_path.string());
    const auto ingested = ingest(cfg.corpus_path, cfg.format, cfg.windows);
    for (const auto& msg : ingested.skipped) say("ingest: skipped " + msg);
    auto built = build_corpus(ingested.documents, cfg.windows, cfg.corpus);
    for (const auto& w : built.warnings) say("ingest: warning: " + w);
    detail::StageWriter::write_atomic(summary_file, corpus_summary(built, &ingested).dump(2) + "\n");
    detail::StageWriter::write_atomic(corpus_file, corpus_to_json(built).dump());
    return built;
  });
  writer.emit("corpus_summary.json", read_file(summary_file));

  auto finish = [&]() {
    nlohmann::json files = nlohmann::json::array();
    for (const auto& f : bundle.files) files.push_back({{"name", f.name}, {"sha256", f.sha256}, {"bytes", f.bytes}});
    detail::StageWriter::write_atomic(out_dir / "manifest.json",
                                      nlohmann::json{{"files", files}}.dump(2) + "\n");
    return bundle;
  };
  if (last == Stage::ingest) return finish();

  // -- embeddings
  const std::string embed_key = detail::key_of(corpus_key, nlohmann::json(cfg.sgns));
  const auto embed_file = ckpt_dir / ("embeddings-" + embed_key + ".bin");
  const EmbeddingMatrix rho = stage(Stage::embed, [&] {
    if (!(cfg.resume && std::filesystem::exists(embed_file))) {
      say("embed: training skip-gram embeddings");
      const auto trained = train_sgns(corpus, cfg.sgns);
      detail::StageWriter::write_atomic_with(embed_file, [&](const auto& p) { save_embeddings_binary(trained.input, p); });
    } else {
      say("embed: using checkpoint " + embed_file.filename().string());
    }
    // Always read back so downstream stages see the stored float32 precision.
    return load_embeddings_binary(embed_file);
  });
  bundle.embeddings_checkpoint = embed_file;
  if (last == Stage::embed) return finish();

  // -- model
  nlohmann::json detm_slice = cfg.detm;
  detm_slice["threads"] = cfg.threads;
  const std::string train_key = detail::key_of(embed_key, detm_slice);
  const auto model_file = ckpt_dir / ("detm-" + train_key + ".ckpt");
  const auto log_file = ckpt_dir / ("detm-" + train_key + ".log.csv");
  const DetmState state = stage(Stage::train, [&] {
    const bool have = std::filesystem::exists(model_file) && std::filesystem::exists(log_file);
    if (cfg.resume && have) {
      say("train: using checkpoint " + model_file.filename().string());
      return load_checkpoint(model_file, corpus.vocabulary);
    }
    if (require_trained) throw Error("no trained model checkpoint; run the train stage first");
    say("train: fitting topic model");
    auto fitted = fit(init(rho, cfg.detm), corpus, [&](const EpochLog& e) {
      if (e.epoch % 50 == 0) {
        say("train: epoch " + std::to_string(e.epoch) + " elbo " + format_number(e.train_elbo) + " dev ppl " +
            format_number(e.dev_perplexity));
      }
    });
    say("train: best epoch " + std::to_string(fitted.best_epoch) + " of " + std::to_string(fitted.log.size()));
    detail::StageWriter::write_atomic(log_file, emit_training_log(fitted.log));
    detail::StageWriter::write_atomic_with(model_file, [&](const auto& p) { save_checkpoint(fitted.state, p); });
    return fitted.state;
  });
  writer.emit("training_log.csv", read_file(log_file));
  if (last == Stage::train) return finish();

  // -- measures
  std::map<std::string, std::string> groups;
  std::string groups_hash;
  if (cfg.author_metadata) {
    groups = load_author_groups(*cfg.author_metadata);
    groups_hash = sha256_file(*cfg.author_metadata);
  }
  const std::string measure_key =
      detail::key_of(train_key, {{"measures", cfg.measures}, {"groups", groups_hash}});
  const auto measure_file = ckpt_dir / ("measures-" + measure_key + ".json");
  const MeasureOutput measures = stage(Stage::measure, [&] {
    if (cfg.resume && std::filesystem::exists(measure_file)) {
      say("measure: using checkpoint " + measure_file.filename().string());
      return measures_from_json(nlohmann::json::parse(read_file(measure_file)));
    }
    say("measure: scoring bimodality, change-points and novelty");
    auto m = compute_measures(state, corpus, cfg.measures, groups);
    detail::StageWriter::write_atomic(measure_file, measures_to_json(m).dump());
    return m;
  });
  if (last == Stage::measure) return finish();

  // -- reports
  stage(Stage::report, [&] {
    say("report: writing reports to " + out_dir.string());
    const auto ranking = word_ranking(measures.change_points, cfg.windows);
    writer.emit("word_ranking.csv", to_csv(ranking));
    writer.emit("author_ranking.csv", emit_author_ranking(measures.novelty.records, cfg.windows));
    std::set<std::string> group_names;
    for (const auto& [a, g] : groups) group_names.insert(g);
    const std::vector<std::string> group_list(group_names.begin(), group_names.end());
    writer.emit("novelty_histogram.csv", emit_novelty_histogram(measures.novelty.records, cfg.histogram_bins, group_list));
    writer.emit("window_deltas.csv",
                emit_window_deltas(summed_deltas_by_window(measures.change_points, corpus.window_count()), cfg.windows));

    const auto b = beta(state);
    const auto curves = word_topic_curves(corpus, infer_all_theta(state, corpus), b);
    const auto [words, topics] = detail::evolution_selection(cfg, ranking, curves, corpus.vocabulary, state.layout.K);
    std::vector<WordTopicCurve> selected;
    for (const auto& w : words) selected.push_back(curves.at(corpus.vocabulary.index(w)));
    const std::size_t n_words = std::min(cfg.words_per_topic, corpus.vocabulary.size());
    writer.emit("topic_evolution.json",
                emit_topic_evolution(b, corpus.vocabulary, cfg.windows, topics, n_words, selected).dump(2) + "\n");
  });
  return finish();
}

}  // namespace diachron
