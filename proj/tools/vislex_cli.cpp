#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vislex/config.hpp"
#include "vislex/errors.hpp"
#include "vislex/pipeline.hpp"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
  std::optional<int> threads;
  std::optional<int> n_samples, min_len, max_len;
  std::optional<double> top_p;
  std::vector<std::string> runs;
};

vislex::RunConfig resolve(const Options& o) {
  vislex::RunConfig cfg = o.config.empty() ? vislex::default_run_config() : vislex::RunConfig::load(o.config);
  vislex::apply_environment(cfg);
  if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  if (o.n_samples) cfg.sampling.n_samples = *o.n_samples;
  if (o.top_p) cfg.sampling.top_p = *o.top_p;
  if (o.min_len) cfg.sampling.min_len = *o.min_len;
  if (o.max_len) cfg.sampling.max_len = *o.max_len;
  return vislex::effective_config(cfg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vislex: textual explanations of frozen image classifiers"};
  app.require_subcommand(1);
  Options o;
  app.add_option("-c,--config", o.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("-s,--seed", o.seed, "Run seed");
  app.add_option("-o,--output-dir", o.output_dir, "Output directory (overrides config and VISLEX_OUTPUT_ROOT)");
  app.add_option("-j,--threads", o.threads, "Worker threads for sampling");

  std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "Generate the synthetic dataset"},
      {"pretrain", "Train the classifier and the language model, then freeze both"},
      {"train-translator", "Train the translator between the frozen models"},
      {"explain", "Sample explanation sets for train, test and occluded test images"},
      {"analyze", "Word profiles, spurious and shift reports, problematic-sample selection"},
      {"mitigate", "Saliency-masked fine-tuning and the random-mask baseline"},
      {"evaluate", "Subgroup and worst-group accuracy"},
      {"report", "Assemble reports and tables"},
      {"run", "Run every stage in order"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    if (name == "explain" || name == "run") {
      sub->add_option("--n-samples", o.n_samples, "Sentences per image (default 1000)");
      sub->add_option("--top-p", o.top_p, "Nucleus mass (default 0.95)");
      sub->add_option("--min-len", o.min_len, "Minimum words per sentence (default 20)");
      sub->add_option("--max-len", o.max_len, "Maximum words per sentence (default 30)");
    }
    if (name == "report") sub->add_option("--runs", o.runs, "Further run directories to pool into the tables");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const vislex::RunConfig cfg = resolve(o);
    std::cout << nlohmann::json{{"command", command}, {"seed", cfg.seed}, {"config_digest", cfg.digest()},
                                {"config", cfg.to_json()}}
                     .dump(2)
              << std::endl;
    nlohmann::json result;
    if (command == "run") {
      result = vislex::run_all(cfg);
    } else if (command == "report") {
      std::vector<std::filesystem::path> runs(o.runs.begin(), o.runs.end());
      result = vislex::run_report(cfg, runs);
    } else {
      result = vislex::run_command(command, cfg);
    }
    std::cout << result.dump(2) << std::endl;
    return 0;
  } catch (const vislex::ContractViolation& e) {
    std::cerr << "contract violation: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
}
