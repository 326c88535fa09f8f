// Apache License, Version 2.0, refer to LICENSE.txt

// Writes a planted synthetic corpus (JSONL) and its author,group table.

#include <iostream>

#include <CLI11.hpp>

#include "diachron/synthetic.hpp"

int main(int argc, char** argv) {
  namespace syn = diachron::synthetic;
  CLI::App app{"Generate a synthetic corpus with planted structure"};
  syn::PlantedOptions opt;
  opt.plant_shift = true;
  opt.plant_novel_author = true;
  std::string corpus_path = "planted.jsonl";
  std::string groups_path = "authors.csv";
  bool no_shift = false;
  bool no_novel = false;
  app.add_option("--corpus", corpus_path, "output JSONL path");
  app.add_option("--groups", groups_path, "output author,group CSV path");
  app.add_option("--windows", opt.windows);
  app.add_option("--start-year", opt.start_year);
  app.add_option("--width", opt.width_years);
  app.add_option("--topics", opt.topics);
  app.add_option("--words-per-topic", opt.words_per_topic);
  app.add_option("--docs-per-window", opt.docs_per_window);
  app.add_option("--tokens-per-doc", opt.tokens_per_doc);
  app.add_option("--shift-window", opt.shift_window);
  app.add_option("--shift-weight", opt.shift_weight, "weight of the migrating word relative to a topic's top word");
  app.add_option("--novel-window", opt.novel_window);
  app.add_option("--seed", opt.seed);
  app.add_flag("--no-shift", no_shift, "omit the migrating word");
  app.add_flag("--no-novel-author", no_novel, "omit the novel author");
  CLI11_PARSE(app, argc, argv);
  opt.plant_shift = !no_shift;
  opt.plant_novel_author = !no_novel;

  try {
    const auto pc = syn::make_planted_corpus(opt);
    syn::write_jsonl(pc.documents, corpus_path);
    syn::write_groups(pc.groups, groups_path);
    std::cout << pc.documents.size() << " documents, " << pc.groups.size() << " authors\n";
    if (!pc.shift_word.empty()) std::cout << "shift word " << pc.shift_word << " at window " << pc.shift_window << '\n';
    if (!pc.novel_author.empty()) std::cout << "novel author " << pc.novel_author << '\n';
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }
  return 0;
}
