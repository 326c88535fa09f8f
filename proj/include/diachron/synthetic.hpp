// Apache License, Version 2.0, refer to LICENSE.txt

// Synthetic corpora with planted structure: disjoint topic word sets, an
// optional word that migrates between two topics at a known window, and an
// optional author writing from a topic nobody else uses.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diachron/corpus.hpp"

namespace diachron::synthetic {

struct PlantedOptions {
  std::size_t windows = 6;
  int start_year = 0;
  int width_years = 50;
  std::size_t topics = 4;
  std::size_t words_per_topic = 40;
  std::size_t docs_per_window = 150;
  std::size_t tokens_per_doc = 60;
  std::size_t authors_per_window = 5;
  double doc_concentration = 0.2;  // symmetric Dirichlet over topics per document
  double zipf_exponent = 0.5;      // within-topic word weights 1 / (rank + 1)^s

  // Migrating word: a member of topic 0 before `shift_window`, of both topics
  // 0 and 1 in `shift_window`, of topic 1 afterwards.
  bool plant_shift = false;
  std::string shift_word = "migrans";
  std::size_t shift_window = 3;
  double shift_weight = 1.0;  // relative to the heaviest ordinary word

  // Novel author: writes only from an extra topic in `novel_window`.
  bool plant_novel_author = false;
  std::size_t novel_window = 4;
  std::size_t novel_docs = 40;
  // An ordinary author in `novel_window`, drawn from the same mixture as
  // every other window.
  std::size_t reference_docs = 40;

  std::uint64_t seed = 7;
};

struct PlantedCorpus {
  std::vector<Document> documents;
  WindowSpec spec;
  std::vector<std::vector<std::string>> topic_words;  // planted word sets (shift word excluded)
  std::map<std::string, std::string> groups;          // author -> group
  std::string shift_word;
  std::size_t shift_window = 0;
  std::string novel_author;
  std::string reference_author;
};

inline const std::string kNovelAuthor = "novus";
inline const std::string kReferenceAuthor = "exemplar";

namespace detail {

inline std::vector<double> dirichlet(std::size_t k, double concentration, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(concentration, 1.0);
  std::vector<double> out(k);
  double sum = 0;
  for (auto& v : out) {
    v = gamma(rng);
    sum += v;
  }
  if (sum <= 0) {
    out.assign(k, 0.0);
    out[std::uniform_int_distribution<std::size_t>(0, k - 1)(rng)] = 1.0;
    return out;
  }
  for (auto& v : out) v /= sum;
  return out;
}

inline std::string topic_word(std::size_t topic, std::size_t rank) {
  return "t" + std::to_string(topic) + "w" + std::to_string(rank);
}

}  // namespace detail

inline PlantedCorpus make_planted_corpus(const PlantedOptions& opt) {
  PlantedCorpus pc;
  pc.spec = {opt.start_year, opt.width_years, static_cast<int>(opt.windows)};
  pc.shift_word = opt.plant_shift ? opt.shift_word : "";
  pc.shift_window = opt.shift_window;
  std::mt19937_64 rng(opt.seed);

  const std::size_t total_topics = opt.topics + (opt.plant_novel_author ? 1 : 0);
  std::vector<double> base_weights(opt.words_per_topic);
  for (std::size_t r = 0; r < opt.words_per_topic; ++r) {
    base_weights[r] = 1.0 / std::pow(static_cast<double>(r + 1), opt.zipf_exponent);
  }
  for (std::size_t k = 0; k < total_topics; ++k) {
    std::vector<std::string> words;
    for (std::size_t r = 0; r < opt.words_per_topic; ++r) words.push_back(detail::topic_word(k, r));
    pc.topic_words.push_back(std::move(words));
  }

  // Word distribution of topic k in window t.
  auto topic_sampler = [&](std::size_t k, std::size_t t) {
    std::vector<std::string> words = pc.topic_words[k];
    std::vector<double> weights = base_weights;
    if (opt.plant_shift && k <= 1) {
      const bool member = (k == 0 && t <= opt.shift_window) || (k == 1 && t >= opt.shift_window);
      if (member) {
        words.push_back(opt.shift_word);
        weights.push_back(opt.shift_weight * base_weights[0]);
      }
    }
    return std::make_pair(words, std::discrete_distribution<std::size_t>(weights.begin(), weights.end()));
  };

  auto make_doc = [&](const std::string& author, int year, std::size_t t, const std::vector<double>& theta,
                      std::size_t serial) {
    std::vector<std::pair<std::vector<std::string>, std::discrete_distribution<std::size_t>>> samplers;
    for (std::size_t k = 0; k < theta.size(); ++k) samplers.push_back(topic_sampler(k, t));
    std::discrete_distribution<std::size_t> pick_topic(theta.begin(), theta.end());
    Document d;
    d.id = "w" + std::to_string(t) + "-" + author + "-" + std::to_string(serial);
    d.author = author;
    d.year = year;
    for (std::size_t n = 0; n < opt.tokens_per_doc; ++n) {
      auto& [words, dist] = samplers[pick_topic(rng)];
      d.tokens.push_back(words[dist(rng)]);
    }
    return d;
  };

  std::size_t serial = 0;
  for (std::size_t t = 0; t < opt.windows; ++t) {
    const int year0 = pc.spec.window_start(t);
    for (std::size_t i = 0; i < opt.docs_per_window; ++i) {
      const std::size_t a = i % opt.authors_per_window;
      const std::string author = "auctor" + std::to_string(t) + "_" + std::to_string(a);
      const int year = year0 + static_cast<int>((a * static_cast<std::size_t>(opt.width_years)) / opt.authors_per_window);
      auto theta = detail::dirichlet(opt.topics, opt.doc_concentration, rng);
      pc.documents.push_back(make_doc(author, year, t, theta, serial++));
      pc.groups[author] = "typical";
    }
    if (opt.plant_novel_author && t == opt.novel_window) {
      std::vector<double> novel(total_topics, 0.0);
      novel.back() = 1.0;
      for (std::size_t i = 0; i < opt.novel_docs; ++i) {
        pc.documents.push_back(make_doc(kNovelAuthor, year0 + opt.width_years / 2, t, novel, serial++));
      }
      for (std::size_t i = 0; i < opt.reference_docs; ++i) {
        auto theta = detail::dirichlet(opt.topics, opt.doc_concentration, rng);
        theta.push_back(0.0);
        pc.documents.push_back(make_doc(kReferenceAuthor, year0 + opt.width_years / 2, t, theta, serial++));
      }
      pc.novel_author = kNovelAuthor;
      pc.reference_author = kReferenceAuthor;
      pc.groups[kNovelAuthor] = "novel";
      pc.groups[kReferenceAuthor] = "typical";
    }
  }
  return pc;
}

inline void write_jsonl(const std::vector<Document>& docs, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& d : docs) {
    out << nlohmann::json{{"id", d.id}, {"author", d.author}, {"year", d.year}, {"tokens", d.tokens}}.dump() << '\n';
  }
}

inline void write_groups(const std::map<std::string, std::string>& groups, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "author,group\n";
  for (const auto& [a, g] : groups) out << a << ',' << g << '\n';
}

}  // namespace diachron::synthetic
