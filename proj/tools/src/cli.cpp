#include "cli.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "assaysel/config.hpp"
#include "assaysel/error.hpp"
#include "assaysel/io.hpp"
#include "assaysel/pipeline.hpp"

namespace assaysel::cli {

namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config;
  std::string run_dir = "run";
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  bool force = false;
  std::vector<std::string> strategies;
  std::optional<std::string> target;
};

// Without --config, an existing run directory supplies its own snapshot.
RunConfig resolve_config(const Flags& flags) {
  RunConfig config;
  if (!flags.config.empty()) {
    config = load_config(flags.config);
  } else {
    const auto manifest = fs::path(flags.run_dir) / "manifest.json";
    if (!fs::exists(manifest)) {
      throw ConfigError("no --config given and " + manifest.string() + " does not exist");
    }
    const auto j = nlohmann::json::parse(io::read_file(manifest), nullptr, false);
    if (j.is_discarded() || !j.contains("config")) throw ConfigError(manifest.string() + " has no config snapshot");
    config = parse_config(j["config"].get<std::string>(), fs::path(flags.run_dir));
  }
  if (flags.seed) config.seed = *flags.seed;
  if (flags.target) config.target = *flags.target;
  if (!flags.strategies.empty()) {
    config.select.strategies.clear();
    for (const auto& s : flags.strategies) config.select.strategies.push_back(parse_strategy(s));
  }
  config.validate();
  return config;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attribution-guided assay selection: synth, trak, finetune, select, evaluate, analyze, report"};
  app.name("assaysel");
  Flags flags;
  app.add_option("--config", flags.config, "Run configuration (INI)");
  app.add_option("--run-dir", flags.run_dir, "Directory holding the run's artifacts")->capture_default_str();
  app.add_option("--seed", flags.seed, "Override [run] seed");
  app.add_option("--jobs", flags.jobs, "Worker threads; results do not depend on it")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_flag("--force", flags.force, "Rerun stages that are already complete");
  app.add_option("--strategy", flags.strategies,
                 "Restrict to these strategies (assaymatch, raw-embedding, random, bao-exact)")
      ->delimiter(',');
  app.add_option("--target", flags.target, "Restrict to one target id");
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::vector<std::string> commands;
  for (auto s : kAllStages) commands.emplace_back(to_string(s));
  commands.emplace_back("all");
  const char* help[] = {"Generate or import assay data and fix the train/test splits",
                        "Per-assay attribution scores for every split",
                        "Train the embedding head on attribution-ranked triplets",
                        "Rank training assays for each sampled test assay",
                        "Learning curves for every strategy",
                        "Clustering, heatmap, selection and embedding-shift diagnostics",
                        "Summary JSON and learning-curve plots",
                        "Every stage in order"};
  for (std::size_t i = 0; i < commands.size(); ++i) app.add_subcommand(commands[i], help[i]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    const auto config = resolve_config(flags);
    Pipeline pipeline(config, {flags.run_dir, flags.jobs, flags.force});
    std::vector<StageOutcome> outcomes;
    if (command == "all") {
      outcomes = pipeline.run_all();
    } else {
      outcomes.push_back(pipeline.run(parse_stage(command)));
    }
    for (const auto& o : outcomes) {
      out << to_string(o.stage) << ": " << (o.skipped ? "already complete, skipped" : "done") << '\n';
    }
    out << "manifest " << pipeline.manifest_hash() << " in " << flags.run_dir << '\n';
    return kOk;
  } catch (const MissingStageError& e) {
    err << "error: " << e.what() << '\n';
    return kMissingStage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const ComputeError& e) {
    err << "compute error: " << e.what() << '\n';
    return kComputeError;
  } catch (const std::exception& e) {
    err << "unexpected error: " << e.what() << '\n';
    return kUnexpected;
  }
}

}  // namespace assaysel::cli
