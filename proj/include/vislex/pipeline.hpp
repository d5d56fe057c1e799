#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vislex/config.hpp"

namespace vislex {

/// Fills every component seed from RunConfig::seed.
RunConfig effective_config(RunConfig cfg);

/// Provenance block embedded in every artifact.
nlohmann::json artifact_stamp(const RunConfig& cfg, const std::string& producer);

// Each command reads its inputs from and writes its outputs to
// cfg.output_dir. A missing or foreign upstream artifact raises ArtifactError
// naming the command that produces it. Return value is a short summary.
nlohmann::json run_gen_data(const RunConfig& cfg);
nlohmann::json run_pretrain(const RunConfig& cfg);
nlohmann::json run_train_translator(const RunConfig& cfg);
nlohmann::json run_explain(const RunConfig& cfg);
nlohmann::json run_analyze(const RunConfig& cfg);
nlohmann::json run_mitigate(const RunConfig& cfg);
nlohmann::json run_evaluate(const RunConfig& cfg);
/// Assembles cfg.output_dir/report. `extra_runs` are further output
/// directories (e.g. other seeds) whose subgroup results are pooled into the
/// comparison table; all must share cfg's config digest.
nlohmann::json run_report(const RunConfig& cfg, const std::vector<std::filesystem::path>& extra_runs = {});

/// Command names in pipeline order.
const std::vector<std::string>& pipeline_commands();
nlohmann::json run_command(const std::string& name, const RunConfig& cfg);
/// Runs every command in order.
nlohmann::json run_all(const RunConfig& cfg);

}  // namespace vislex
