#include <cstdio>
#include <exception>
#include <functional>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "lapstrat/pipeline.hpp"

namespace {

void report(const lapstrat::pipeline::StageResult& result) {
  for (const auto& w : result.warnings)
    std::fprintf(stderr, "warning: %s\n", w.c_str());
  for (const auto& a : result.artifacts) std::printf("wrote %s\n", a.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"race strategy toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  int jobs = 0;
  app.add_option("--config", config_path, "key = value configuration file");
  app.add_option("--seed", seed, "seed for stochastic stages");
  app.add_option("--out", out_dir, "output directory (default: out)");
  app.add_option("--jobs", jobs, "worker threads (default: 1)");

  using Stage = std::function<lapstrat::pipeline::StageResult(
      const lapstrat::pipeline::RunConfig&)>;
  const std::map<std::string, std::pair<const char*, Stage>> stages{
      {"synth", {"generate a synthetic dataset", lapstrat::pipeline::cmd_synth}},
      {"ingest", {"parse and clean sector times", lapstrat::pipeline::cmd_ingest}},
      {"stats", {"competitor statistics from cleaned laps", lapstrat::pipeline::cmd_stats}},
      {"optimize", {"search lap strategies", lapstrat::pipeline::cmd_optimize}},
      {"simulate", {"Monte Carlo traffic traces", lapstrat::pipeline::cmd_simulate}},
      {"evaluate", {"expected time loss per strategy", lapstrat::pipeline::cmd_evaluate}},
      {"stint", {"multi-lap strategy adaptation", lapstrat::pipeline::cmd_stint}},
  };
  for (const auto& [name, entry] : stages) app.add_subcommand(name, entry.first);

  CLI11_PARSE(app, argc, argv);

  try {
    lapstrat::pipeline::RunConfig cfg;
    if (!config_path.empty()) cfg = lapstrat::pipeline::load_config(config_path);
    if (app.count("--seed")) cfg.seed = seed;
    if (app.count("--out")) cfg.out_dir = out_dir;
    if (app.count("--jobs")) cfg.jobs = jobs;

    auto* sub = app.get_subcommands().front();
    report(stages.at(sub->get_name()).second(cfg));
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
