// Apache License, Version 2.0, refer to LICENSE.txt

// Command-line driver. Every subcommand runs the pipeline up to its stage;
// `report` only re-emits from a trained checkpoint.
//
// Exit codes: 0 success, 1 configuration error, 2 stage failure.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "diachron/pipeline.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string output_dir;
  bool resume = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "pipeline configuration (.toml or .json)")->required();
  cmd->add_option("--seed", f.seed, "top-level random seed");
  cmd->add_option("--threads", f.threads, "worker threads for model training");
  cmd->add_option("--output-dir", f.output_dir, "directory for reports and checkpoints");
  cmd->add_flag("--resume", f.resume, "reuse checkpoints whose inputs are unchanged");
  cmd->add_flag("-q,--quiet", f.quiet, "suppress progress messages");
}

int run(const Flags& f, diachron::Stage last, bool reports_only, const std::string& query, std::size_t neighbours) {
  using namespace diachron;
  PipelineConfig cfg;
  try {
    cfg = load_pipeline_config(f.config);
    if (f.seed) {
      cfg.seed = *f.seed;
      cfg.apply_seed();
    }
    if (f.threads) cfg.threads = *f.threads;
    if (!f.output_dir.empty()) cfg.output_dir = f.output_dir;
    cfg.resume = f.resume;
    validate(cfg);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  }

  auto log = [&](std::string_view msg) {
    if (!f.quiet) std::cerr << msg << '\n';
  };
  try {
    const auto bundle = run_pipeline(cfg, last, log, reports_only);
    for (const auto& file : bundle.files) std::cout << file.sha256 << "  " << file.name << '\n';
    if (!query.empty()) {
      const auto rho = load_embeddings_binary(bundle.embeddings_checkpoint);
      for (const auto& n : nearest_neighbors(rho, query, neighbours)) {
        std::cout << n.word << ':' << format_number(n.similarity) << '\n';
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const StageError& e) {
    std::cerr << "stage " << e.stage() << " failed: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diachronic topic modelling and semantic-change measures"};
  app.require_subcommand(1);

  Flags flags;
  std::string query;
  std::size_t neighbours = 10;
  struct Cmd {
    const char* name;
    const char* help;
    diachron::Stage stage;
  };
  const Cmd cmds[] = {
      {"ingest", "read the corpus and build windowed sub-documents", diachron::Stage::ingest},
      {"embed", "train skip-gram word embeddings", diachron::Stage::embed},
      {"train", "fit the dynamic embedded topic model", diachron::Stage::train},
      {"measure", "compute bimodality, change-points and author novelty", diachron::Stage::measure},
      {"report", "emit reports from existing checkpoints", diachron::Stage::report},
      {"run", "run every stage", diachron::Stage::report},
  };
  std::optional<diachron::Stage> chosen;
  bool reports_only = false;
  for (const auto& c : cmds) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_common(sub, flags);
    if (std::string_view(c.name) == "embed") {
      sub->add_option("--query", query, "print nearest neighbours of this word");
      sub->add_option("--neighbours", neighbours, "number of neighbours to print")->check(CLI::PositiveNumber);
    }
    sub->callback([&, c] {
      chosen = c.stage;
      reports_only = std::string_view(c.name) == "report";
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  return run(flags, *chosen, reports_only, query, neighbours);
}
