#include "vislex/config.hpp"

#include <cstdlib>
#include <fstream>

#include "vislex/digest.hpp"
#include "vislex/errors.hpp"

namespace vislex {

namespace {

nlohmann::json stage_json(const StageSchedule& s) {
  return {{"epochs", s.epochs}, {"lr", s.lr}, {"batch_size", s.batch_size}};
}

StageSchedule stage_from(const nlohmann::json& j, StageSchedule s) {
  s.epochs = j.value("epochs", s.epochs);
  s.lr = j.value("lr", s.lr);
  s.batch_size = j.value("batch_size", s.batch_size);
  return s;
}

}  // namespace

RunConfig default_run_config() {
  RunConfig c;
  c.data.splits = {{"train", 2000, 0.95, 0.1}, {"test", 800, 0.5, 0.0}, {"captions", 2000, 0.5, 0.2}};
  c.classifier.epochs = 15;
  return c;
}

void RunConfig::validate() const {
  try {
    data.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  auto has_split = [&](const std::string& name) {
    for (const auto& s : data.splits)
      if (s.name == name) return true;
    return false;
  };
  for (const auto* name : {&train_split, &test_split, &caption_split})
    if (!has_split(*name)) throw ConfigError("config: data has no split named '" + *name + "'");
  encoder.validate();
  if (encoder.num_classes != static_cast<int>(data.shapes.size()))
    throw ConfigError("config: encoder.num_classes must equal the number of shape classes");
  if (encoder.image_size != data.image_size)
    throw ConfigError("config: encoder.image_size must equal data.image_size");
  if (decoder.dim <= 0 || decoder.layers < 1 || decoder.heads < 1 || decoder.dim % decoder.heads != 0 ||
      decoder.max_context < 2)
    throw ConfigError("config: invalid decoder dimensions");
  if (threads < 1) throw ConfigError("config: threads must be >= 1");
  for (const auto* s : {&stage1, &stage2})
    if (s->epochs < 0 || !(s->lr > 0.0) || s->batch_size < 8)
      throw ConfigError("config: translator stages need epochs >= 0, lr > 0 and batch_size >= 8");
  if (classifier.epochs < 0 || classifier.batch_size < 1 || !(classifier.lr > 0.0))
    throw ConfigError("config: invalid classifier schedule");
  if (decoder_train.epochs < 0 || decoder_train.batch_size < 1 || !(decoder_train.lr > 0.0))
    throw ConfigError("config: invalid decoder schedule");
  if (heldout_count < 1) throw ConfigError("config: heldout_count must be >= 1");
  try {
    sampling.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  if (stopwords && !std::filesystem::exists(*stopwords))
    throw ConfigError("config: stopword file " + stopwords->string() + " does not exist");
  for (const auto& [cls, terms] : class_terms) {
    if (std::find(data.shapes.begin(), data.shapes.end(), cls) == data.shapes.end())
      throw ConfigError("config: class_terms names unknown class '" + cls + "'");
    if (terms.empty()) throw ConfigError("config: class_terms for '" + cls + "' is empty");
  }
  if (min_count < 0) throw ConfigError("config: min_count must be >= 0");
  if (!(saliency_threshold > 0.0 && saliency_threshold <= 1.0))
    throw ConfigError("config: saliency_threshold must be in (0, 1]");
  if (finetune.epochs < 0 || !(finetune.base_lr > 0.0) || !(finetune.lr_scale > 0.0) ||
      finetune.batch_size < 1)
    throw ConfigError("config: invalid fine-tune schedule");
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json terms = nlohmann::json::object();
  for (const auto& [k, v] : class_terms) terms[k] = std::vector<std::string>(v.begin(), v.end());
  nlohmann::json dec = {{"dim", decoder.dim},       {"layers", decoder.layers},
                        {"heads", decoder.heads},   {"mlp_ratio", decoder.mlp_ratio},
                        {"max_context", decoder.max_context}};
  return {
      {"output_dir", output_dir.string()},
      {"seed", seed},
      {"threads", threads},
      {"data", data.to_json()},
      {"splits", {{"train", train_split}, {"test", test_split}, {"captions", caption_split}}},
      {"encoder", encoder.to_json()},
      {"classifier", {{"epochs", classifier.epochs}, {"batch_size", classifier.batch_size}, {"lr", classifier.lr}}},
      {"decoder", dec},
      {"decoder_train",
       {{"epochs", decoder_train.epochs}, {"batch_size", decoder_train.batch_size}, {"lr", decoder_train.lr}}},
      {"translator",
       {{"hidden", translator_hidden},
        {"stage1", stage_json(stage1)},
        {"stage2", stage_json(stage2)},
        {"heldout_count", heldout_count}}},
      {"sampling", sampling.to_json()},
      {"stopwords", stopwords ? nlohmann::json(stopwords->string()) : nlohmann::json(nullptr)},
      {"class_terms", terms},
      {"min_count", min_count},
      {"mitigation",
       {{"saliency_threshold", saliency_threshold},
        {"fill", fill == FillPolicy::Zero ? "zero" : "dataset-mean"},
        {"finetune", finetune.to_json()}}},
  };
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c = default_run_config();
  try {
    c.output_dir = j.value("output_dir", c.output_dir.string());
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    if (j.contains("data")) {
      const auto d = SyntheticSpec::from_json(j.at("data"));
      const auto splits = c.data.splits;
      c.data = d;
      if (!j.at("data").contains("splits")) c.data.splits = splits;
    }
    if (j.contains("splits")) {
      const auto& s = j.at("splits");
      c.train_split = s.value("train", c.train_split);
      c.test_split = s.value("test", c.test_split);
      c.caption_split = s.value("captions", c.caption_split);
    }
    nlohmann::json enc = j.value("encoder", nlohmann::json::object());
    if (!enc.contains("num_classes")) enc["num_classes"] = static_cast<int>(c.data.shapes.size());
    if (!enc.contains("image_size")) enc["image_size"] = c.data.image_size;
    c.encoder = EncoderConfig::from_json(enc);
    if (j.contains("classifier")) {
      const auto& k = j.at("classifier");
      c.classifier.epochs = k.value("epochs", c.classifier.epochs);
      c.classifier.batch_size = k.value("batch_size", c.classifier.batch_size);
      c.classifier.lr = k.value("lr", c.classifier.lr);
    }
    if (j.contains("decoder")) {
      const auto& k = j.at("decoder");
      c.decoder.dim = k.value("dim", c.decoder.dim);
      c.decoder.layers = k.value("layers", c.decoder.layers);
      c.decoder.heads = k.value("heads", c.decoder.heads);
      c.decoder.mlp_ratio = k.value("mlp_ratio", c.decoder.mlp_ratio);
      c.decoder.max_context = k.value("max_context", c.decoder.max_context);
    }
    if (j.contains("decoder_train")) {
      const auto& k = j.at("decoder_train");
      c.decoder_train.epochs = k.value("epochs", c.decoder_train.epochs);
      c.decoder_train.batch_size = k.value("batch_size", c.decoder_train.batch_size);
      c.decoder_train.lr = k.value("lr", c.decoder_train.lr);
    }
    if (j.contains("translator")) {
      const auto& t = j.at("translator");
      c.translator_hidden = t.value("hidden", c.translator_hidden);
      if (t.contains("stage1")) c.stage1 = stage_from(t.at("stage1"), c.stage1);
      if (t.contains("stage2")) c.stage2 = stage_from(t.at("stage2"), c.stage2);
      c.heldout_count = t.value("heldout_count", c.heldout_count);
    }
    if (j.contains("sampling")) {
      nlohmann::json s = c.sampling.to_json();
      s.update(j.at("sampling"));
      c.sampling = SamplingConfig::from_json(s);
    }
    if (j.contains("stopwords") && !j.at("stopwords").is_null())
      c.stopwords = j.at("stopwords").get<std::string>();
    if (j.contains("class_terms"))
      for (const auto& [k, v] : j.at("class_terms").items()) {
        const auto words = v.get<std::vector<std::string>>();
        c.class_terms[k] = TermSet(words.begin(), words.end());
      }
    c.min_count = j.value("min_count", c.min_count);
    if (j.contains("mitigation")) {
      const auto& m = j.at("mitigation");
      c.saliency_threshold = m.value("saliency_threshold", c.saliency_threshold);
      const std::string fill = m.value("fill", std::string("dataset-mean"));
      if (fill == "zero") c.fill = FillPolicy::Zero;
      else if (fill == "dataset-mean") c.fill = FillPolicy::DatasetMean;
      else throw ConfigError("config: unknown fill policy '" + fill + "'");
      if (m.contains("finetune")) {
        nlohmann::json f = c.finetune.to_json();
        f.update(m.at("finetune"));
        c.finetune = FinetuneConfig::from_json(f);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  RunConfig c = from_json(j);
  // Relative stopword paths are resolved against the config file.
  if (c.stopwords && c.stopwords->is_relative()) c.stopwords = path.parent_path() / *c.stopwords;
  return c;
}

std::string RunConfig::digest() const {
  nlohmann::json j = to_json();
  j.erase("seed");
  j.erase("output_dir");
  j.erase("threads");
  j["data"].erase("seed");
  j["sampling"].erase("seed");
  j["mitigation"]["finetune"].erase("seed");
  return sha256_hex(j.dump());
}

TermSet RunConfig::terms_for(int label) const {
  const std::string& name = data.shapes.at(static_cast<size_t>(label));
  const auto it = class_terms.find(name);
  if (it != class_terms.end()) return it->second;
  return TermSet{name};
}

void apply_environment(RunConfig& cfg) {
  if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0')
    cfg.output_dir = root;
}

}  // namespace vislex
