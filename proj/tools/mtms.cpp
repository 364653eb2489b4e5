// Command-line front end: one subcommand per pipeline stage.
#include <iostream>

#include "CLI11.hpp"
#include "mtms/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Multi-teacher distillation for k-space corruption detection"};
  app.require_subcommand(1);

  mtms::CommandOptions opts;
  std::uint64_t seed = 0;
  int jobs = 1;
  int folds = 5;

  struct Command {
    const char* name;
    const char* help;
  };
  const Command commands[] = {
      {"gen-data", "Synthesise the phantom domains"},
      {"train-teachers", "Train one teacher per source domain and the domain-adaptation teacher"},
      {"train-student", "Distil the teachers into a student for each labelled size"},
      {"evaluate", "Score teachers and students on the held-out split"},
      {"ablate", "Run the ablation grid"},
      {"export-embeddings", "Write teacher, student and aggregated embeddings as CSV"},
      {"cv", "Run k-fold cross-validation end to end"},
  };
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", opts.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Override the base seed");
    sub->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--force", opts.force, "Overwrite existing outputs");
    sub->add_option("--labelled-size", opts.labelled_sizes, "Labelled target size (repeatable)")
        ->check(CLI::PositiveNumber);
    if (std::string(c.name) == "cv") sub->add_option("--folds", folds, "Number of folds")->check(CLI::Range(2, 100));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return mtms::kExitConfig;
  }

  auto* sub = app.get_subcommands().front();
  if (sub->count("--seed")) opts.seed = seed;
  if (sub->count("--jobs")) opts.jobs = jobs;
  if (sub->get_name() == "cv" && sub->count("--folds")) opts.folds = folds;
  return mtms::run_command(sub->get_name(), opts, std::cerr);
}
