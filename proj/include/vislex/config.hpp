#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vislex/analysis.hpp"
#include "vislex/decoder.hpp"
#include "vislex/encoder.hpp"
#include "vislex/explainer.hpp"
#include "vislex/mitigation.hpp"
#include "vislex/synthetic.hpp"

namespace vislex {

struct StageSchedule {
  int epochs = 20;
  double lr = 1e-3;
  int batch_size = 64;
};

/// Everything a pipeline run needs. Loaded from a JSON file; any field may be
/// omitted and takes its default.
struct RunConfig {
  std::filesystem::path output_dir = "runs/default";
  std::uint64_t seed = 0;
  int threads = 1;

  SyntheticSpec data;
  std::string train_split = "train";
  std::string test_split = "test";
  std::string caption_split = "captions";  // generic pairs for translator stage 1

  EncoderConfig encoder;
  ClassifierTrainConfig classifier;
  DecoderConfig decoder;  // vocab_size and memory_tokens are filled in at run time
  DecoderTrainConfig decoder_train;

  int translator_hidden = 0;
  StageSchedule stage1{20, 1e-3, 64};
  StageSchedule stage2{5, 1e-4, 64};
  int heldout_count = 200;  // taken from the test split

  SamplingConfig sampling;  // per-sample explanation sets
  std::optional<std::filesystem::path> stopwords;
  std::map<std::string, TermSet> class_terms;  // defaults to {shape: {shape}}
  long min_count = 0;                          // 0: default_min_count(N)

  double saliency_threshold = 0.6;
  FillPolicy fill = FillPolicy::DatasetMean;
  FinetuneConfig finetune;

  /// Throws ConfigError describing the first problem found.
  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);

  /// SHA-256 of the canonical JSON with the seed, output directory and
  /// thread count removed; runs that differ only in those share a digest.
  std::string digest() const;
  /// Class terms for label index k.
  TermSet terms_for(int label) const;
};

/// Environment variable that overrides RunConfig::output_dir.
inline constexpr const char* kOutputRootEnv = "VISLEX_OUTPUT_ROOT";

/// Default configuration used by the bundled synthetic experiment.
RunConfig default_run_config();
/// Applies VISLEX_OUTPUT_ROOT, if set, as the output directory.
void apply_environment(RunConfig& cfg);

}  // namespace vislex
