// subsidyctl: command surface over the pipeline.  Runs are deterministic
// given (config, seed); each command prints a one-line summary on success and
// writes a resolved-config copy next to its outputs.
//
// Seed precedence: the D3_SEED environment variable overrides --seed, which
// overrides the config file's `seed` key (default 1).
//
// Exit codes: 0 success, 2 validation failure, 3 invariant violation during a
// run, 4 I/O or missing-artifact failure.

#include <cstdio>
#include <cstdlib>
#include <string>

#include <CLI11.hpp>

#include "subsidy/pipeline.hpp"

namespace {

struct Flags {
  std::string config;
  std::string out;
  long seed = 0;
  bool seed_set = false;
  long jobs = 0;
  bool jobs_set = false;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "key=value config file");
  cmd->add_option("--out", f.out, "output directory (overrides the config's `out`)");
  cmd->add_option("--seed", f.seed, "seed (overrides the config's `seed`)")
      ->each([&f](const std::string&) { f.seed_set = true; });
  cmd->add_option("--jobs", f.jobs, "max worker threads for rollouts")
      ->each([&f](const std::string&) { f.jobs_set = true; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prefix-conditioned diffusion controller pipeline"};
  app.require_subcommand(1);

  const struct {
    const char* name;
    const char* help;
    std::string (*run)(const subsidy::KvMap&);
  } commands[] = {
      {"gen", "generate logged datasets for the train/test/cold splits", subsidy::run_gen},
      {"train-diffusion", "pretrain the trajectory denoiser", subsidy::run_train_diffusion},
      {"train-inverse", "train the action decoder against the denoiser's stats",
       subsidy::run_train_inverse},
      {"finetune", "adapt the decoder to one city with an anchor penalty",
       subsidy::run_finetune},
      {"rollout", "run the controller for one city over chosen days", subsidy::run_rollout},
      {"eval", "score policies on held-out days and emit CSV artifacts", subsidy::run_eval},
      {"sweep-gamma", "sweep the target-scaling knob and rank-correlate rides",
       subsidy::run_sweep_gamma},
      {"report", "re-emit figure CSVs from a finished evaluation", subsidy::run_report},
  };

  Flags flags;
  for (const auto& c : commands) add_common(app.add_subcommand(c.name, c.help), flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const CLI::App* sub = app.get_subcommands().front();
  try {
    subsidy::KvMap kv =
        flags.config.empty() ? subsidy::KvMap{} : subsidy::parse_kv_file(flags.config);
    if (flags.seed_set) kv["seed"] = std::to_string(flags.seed);
    if (const char* env = std::getenv("D3_SEED"); env && *env) kv["seed"] = env;
    if (flags.jobs_set) kv["jobs"] = std::to_string(flags.jobs);
    if (!flags.out.empty()) kv["out"] = flags.out;

    for (const auto& c : commands)
      if (sub->get_name() == c.name) {
        std::string summary = c.run(kv);
        std::printf("%s\n", summary.c_str());
        return 0;
      }
    std::fprintf(stderr, "subsidyctl: unknown command %s\n", sub->get_name().c_str());
    return 2;
  } catch (const subsidy::ValidationError& e) {
    std::fprintf(stderr, "subsidyctl %s: %s\n", sub->get_name().c_str(), e.what());
    return 2;
  } catch (const subsidy::IoError& e) {
    std::fprintf(stderr, "subsidyctl %s: %s\n", sub->get_name().c_str(), e.what());
    return 4;
  } catch (const std::exception& e) {
    // InvariantError and anything unexpected count as invariant violations
    std::fprintf(stderr, "subsidyctl %s: %s\n", sub->get_name().c_str(), e.what());
    return 3;
  }
}
