#include "vislex/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "vislex/analysis.hpp"
#include "vislex/checkpoint.hpp"
#include "vislex/decoder.hpp"
#include "vislex/encoder.hpp"
#include "vislex/errors.hpp"
#include "vislex/explainer.hpp"
#include "vislex/manifest.hpp"
#include "vislex/metrics.hpp"
#include "vislex/mitigation.hpp"
#include "vislex/synthetic.hpp"
#include "vislex/translator.hpp"
#include "vislex/vocab.hpp"

namespace vislex {

namespace fs = std::filesystem;

namespace {

constexpr int kArtifactVersion = 1;

// Seed streams, one per component.
enum Stream : std::uint64_t {
  kData = 1,
  kEncoderInit,
  kClassifierTrain,
  kDecoderInit,
  kDecoderTrain,
  kTranslatorInit,
  kTranslatorTrain,
  kSampling,
  kFinetune,
  kRandMask,
};

// Explanation views, in the order they are produced.
const std::vector<std::string>& views() {
  static const std::vector<std::string> v{"train", "test", "test_occluded"};
  return v;
}

struct Paths {
  fs::path root;
  fs::path data() const { return root / "data"; }
  fs::path manifest() const { return data() / "manifest.jsonl"; }
  fs::path data_stamp() const { return data() / "artifact.json"; }
  fs::path models() const { return root / "models"; }
  fs::path encoder() const { return models() / "encoder"; }
  fs::path decoder() const { return models() / "decoder"; }
  fs::path vocab() const { return models() / "vocab.txt"; }
  fs::path pretrain_log() const { return models() / "pretrain.json"; }
  fs::path translator() const { return models() / "translator"; }
  fs::path translator_log() const { return models() / "translator_history.json"; }
  fs::path explanations(const std::string& view) const { return root / "explanations" / (view + ".jsonl"); }
  fs::path analysis() const { return root / "analysis" / "analysis.json"; }
  fs::path wordcloud_dir() const { return root / "analysis" / "wordclouds"; }
  fs::path selection() const { return root / "analysis" / "selection.json"; }
  fs::path mitigation() const { return root / "mitigation" / "mitigation.json"; }
  fs::path explainmask() const { return root / "mitigation" / "explainmask"; }
  fs::path randmask() const { return root / "mitigation" / "randmask"; }
  fs::path evaluation() const { return root / "eval" / "subgroups.json"; }
  fs::path report() const { return root / "report"; }
};

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

std::string missing(const fs::path& path, const std::string& producer) {
  return "missing artifact " + path.string() + "; run `vislex " + producer + "` first";
}

void check_stamp(const nlohmann::json& stamp, const RunConfig& cfg, const fs::path& path,
                 const std::string& producer) {
  if (!stamp.is_object() || stamp.value("config_digest", "") != cfg.digest() ||
      stamp.value("seed", std::uint64_t{0}) != cfg.seed)
    throw ArtifactError(path.string() + " was produced under a different config or seed; rerun `vislex " +
                        producer + "`");
}

nlohmann::json read_json(const fs::path& path, const std::string& producer) {
  std::ifstream in(path);
  if (!in) throw ArtifactError(missing(path, producer));
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("cannot parse " + path.string() + ": " + e.what());
  }
}

nlohmann::json read_stamped(const fs::path& path, const RunConfig& cfg, const std::string& producer) {
  nlohmann::json j = read_json(path, producer);
  check_stamp(j.value("stamp", nlohmann::json()), cfg, path, producer);
  return j;
}

ModelCheckpoint read_checkpoint(const fs::path& base, const RunConfig& cfg, const std::string& producer) {
  if (!fs::exists(base.string() + ".json") || !fs::exists(base.string() + ".bin"))
    throw ArtifactError(missing(base.string() + ".bin", producer));
  ModelCheckpoint c = load_checkpoint(base);
  check_stamp(c.meta.value("stamp", nlohmann::json()), cfg, base.string() + ".json", producer);
  return c;
}

struct LoadedData {
  DatasetManifest manifest;
  std::map<std::string, std::vector<size_t>> by_split;  // record indices
};

LoadedData load_data(const RunConfig& cfg) {
  const Paths P{cfg.output_dir};
  read_stamped(P.data_stamp(), cfg, "gen-data");
  if (!fs::exists(P.manifest())) throw ArtifactError(missing(P.manifest(), "gen-data"));
  LoadedData d;
  d.manifest = load_manifest(P.manifest());
  for (size_t i = 0; i < d.manifest.records.size(); ++i) d.by_split[d.manifest.records[i].split].push_back(i);
  return d;
}

std::vector<ImageTensor> load_images(const LoadedData& d, const std::vector<size_t>& idx, const RunConfig& cfg) {
  const Paths P{cfg.output_dir};
  std::vector<ImageTensor> out;
  out.reserve(idx.size());
  for (size_t i : idx) out.push_back(load_record_image(d.manifest.records[i], P.data()));
  return out;
}

const std::vector<size_t>& split_of(const LoadedData& d, const std::string& name) {
  static const std::vector<size_t> none;
  const auto it = d.by_split.find(name);
  return it == d.by_split.end() ? none : it->second;
}

// Records of a split that carry a foreground class.
std::vector<size_t> labelled(const LoadedData& d, const std::string& split) {
  std::vector<size_t> out;
  for (size_t i : split_of(d, split))
    if (d.manifest.records[i].label >= 0) out.push_back(i);
  return out;
}

std::vector<std::string> subgroup_names(const DatasetManifest& m) {
  std::vector<std::string> names;
  for (const auto& c : m.class_names)
    for (const auto& b : m.background_names) names.push_back(c + "/" + b);
  return names;
}

VisionEncoder load_erm(const RunConfig& cfg) {
  return VisionEncoder::from_checkpoint(read_checkpoint(Paths{cfg.output_dir}.encoder(), cfg, "pretrain"));
}

struct Stack {
  VisionEncoder encoder;
  TextDecoder decoder;
  Vocabulary vocab;
};

Stack load_stack(const RunConfig& cfg) {
  const Paths P{cfg.output_dir};
  VisionEncoder enc = load_erm(cfg);
  TextDecoder dec = TextDecoder::from_checkpoint(read_checkpoint(P.decoder(), cfg, "pretrain"));
  if (!fs::exists(P.vocab())) throw ArtifactError(missing(P.vocab(), "pretrain"));
  Vocabulary vocab = Vocabulary::load(P.vocab());
  enc.freeze();
  dec.freeze();
  return {std::move(enc), std::move(dec), std::move(vocab)};
}

StopwordSet stopwords_for(const RunConfig& cfg) {
  return cfg.stopwords ? load_stopwords(*cfg.stopwords) : default_stopwords();
}

struct ExplainedSample {
  std::string id;
  int label = -1;
  int background = -1;
  std::vector<std::string> sentences;
};

std::vector<ExplainedSample> read_explanations(const RunConfig& cfg, const std::string& view) {
  const fs::path path = Paths{cfg.output_dir}.explanations(view);
  std::ifstream in(path);
  if (!in) throw ArtifactError(missing(path, "explain"));
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + " is empty");
  const auto header = nlohmann::json::parse(line);
  if (header.value("format", "") != "vislex.explanation-view")
    throw FormatError(path.string() + ": unrecognised format");
  check_stamp(header.value("stamp", nlohmann::json()), cfg, path, "explain");
  std::vector<ExplainedSample> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    out.push_back(ExplainedSample{j.at("id").get<std::string>(), j.at("label").get<int>(),
                                  j.at("background").get<int>(),
                                  j.at("sentences").get<std::vector<std::string>>()});
  }
  if (out.size() != header.at("count").get<size_t>())
    throw FormatError(path.string() + ": record count does not match header");
  return out;
}

std::string wordcloud_tsv(const WordFrequencyProfile& p) {
  std::ostringstream out;
  out << "word\tcount\tfrequency\n";
  for (const auto& w : p.ranked) {
    const long c = p.counts.at(w);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", p.total > 0 ? static_cast<double>(c) / p.total : 0.0);
    out << w << '\t' << c << '\t' << buf << '\n';
  }
  return out.str();
}

FaithfulnessScores mean_scores(const std::vector<FaithfulnessScores>& xs) {
  FaithfulnessScores m;
  if (xs.empty()) return m;
  for (const auto& s : xs) {
    m.cosine += s.cosine;
    m.rouge_l += s.rouge_l;
    m.meteor_lite += s.meteor_lite;
  }
  const double n = static_cast<double>(xs.size());
  m.cosine /= n;
  m.rouge_l /= n;
  m.meteor_lite /= n;
  return m;
}

}  // namespace

RunConfig effective_config(RunConfig cfg) {
  cfg.data.seed = derive_seed(cfg.seed, kData);
  cfg.classifier.seed = derive_seed(cfg.seed, kClassifierTrain);
  cfg.decoder_train.seed = derive_seed(cfg.seed, kDecoderTrain);
  cfg.sampling.seed = derive_seed(cfg.seed, kSampling);
  cfg.finetune.seed = derive_seed(cfg.seed, kFinetune);
  cfg.finetune.base_lr = cfg.classifier.lr;
  cfg.validate();
  return cfg;
}

nlohmann::json artifact_stamp(const RunConfig& cfg, const std::string& producer) {
  return {{"producer", producer}, {"config_digest", cfg.digest()}, {"seed", cfg.seed},
          {"version", kArtifactVersion}};
}

nlohmann::json run_gen_data(const RunConfig& cfg) {
  const Paths P{cfg.output_dir};
  SyntheticDataset ds = generate_synthetic(cfg.data);
  for (size_t i = 0; i < ds.images.size(); ++i) {
    const fs::path img = P.data() / ds.manifest.records[i].image;
    fs::create_directories(img.parent_path());
    write_ppm(ds.images[i], img);
  }
  save_manifest(ds.manifest, P.manifest());
  std::map<std::string, long> counts;
  for (const auto& r : ds.manifest.records) ++counts[r.split];
  write_json(P.data_stamp(), {{"stamp", artifact_stamp(cfg, "gen-data")},
                              {"spec", cfg.data.to_json()},
                              {"records", ds.manifest.records.size()}});
  return {{"records", ds.manifest.records.size()}, {"splits", counts}};
}

nlohmann::json run_pretrain(const RunConfig& cfg) {
  const Paths P{cfg.output_dir};
  const LoadedData d = load_data(cfg);
  const auto train_idx = labelled(d, cfg.train_split);
  const auto images = load_images(d, train_idx, cfg);
  std::vector<int> labels;
  for (size_t i : train_idx) labels.push_back(d.manifest.records[i].label);

  VisionEncoder enc(cfg.encoder, derive_seed(cfg.seed, kEncoderInit));
  const TrainCurve enc_curve = pretrain_classifier(enc, images, labels, cfg.classifier);
  enc.freeze();

  std::vector<std::string> all_captions, corpus;
  for (const auto& r : d.manifest.records) all_captions.push_back(r.caption);
  for (const auto* split : {&cfg.caption_split, &cfg.train_split})
    for (size_t i : split_of(d, *split)) corpus.push_back(d.manifest.records[i].caption);
  const Vocabulary vocab = Vocabulary::build(all_captions);

  DecoderConfig dc = cfg.decoder;
  dc.vocab_size = vocab.size();
  dc.memory_tokens = cfg.encoder.tokens();
  TextDecoder dec(dc, derive_seed(cfg.seed, kDecoderInit));
  const DecoderTrainResult dec_result = pretrain_decoder(dec, corpus, vocab, cfg.decoder_train);
  dec.freeze();

  const nlohmann::json meta = {{"stamp", artifact_stamp(cfg, "pretrain")}};
  ModelCheckpoint ec = enc.to_checkpoint();
  ec.meta = meta;
  ModelCheckpoint dck = dec.to_checkpoint(vocab.hash());
  dck.meta = meta;
  fs::create_directories(P.models());
  save_checkpoint(ec, P.encoder());
  save_checkpoint(dck, P.decoder());
  vocab.save(P.vocab());

  const auto pred = enc.predict(images);
  long correct = 0;
  for (size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  const double train_acc = static_cast<double>(correct) / static_cast<double>(std::max<size_t>(1, pred.size()));
  write_json(P.pretrain_log(), {{"stamp", artifact_stamp(cfg, "pretrain")},
                                {"classifier_epoch_loss", enc_curve.epoch_loss},
                                {"classifier_train_accuracy", train_acc},
                                {"decoder_epoch_loss", dec_result.curve.epoch_loss},
                                {"decoder_warnings", dec_result.warnings},
                                {"encoder_digest", enc.digest()},
                                {"decoder_digest", dec.digest()},
                                {"vocab_size", vocab.size()}});
  return {{"classifier_train_accuracy", train_acc},
          {"classifier_final_loss", enc_curve.epoch_loss.empty() ? 0.0 : enc_curve.epoch_loss.back()},
          {"decoder_final_loss", dec_result.curve.epoch_loss.empty() ? 0.0 : dec_result.curve.epoch_loss.back()},
          {"vocab_size", vocab.size()}};
}

nlohmann::json run_train_translator(const RunConfig& cfg) {
  const Paths P{cfg.output_dir};
  const LoadedData d = load_data(cfg);
  Stack s = load_stack(cfg);
  const std::string enc_before = s.encoder.digest();
  const std::string dec_before = s.decoder.digest();

  auto pairs_for = [&](const std::vector<size_t>& idx) {
    std::vector<CaptionedImage> pairs;
    for (size_t i : idx)
      pairs.push_back(CaptionedImage{load_record_image(d.manifest.records[i], P.data()), d.manifest.records[i].caption});
    return pairs;
  };
  std::vector<TrainingStage> stages(2);
  stages[0].name = "generic";
  stages[0].pairs = pairs_for(split_of(d, cfg.caption_split));
  stages[1].name = "task";
  stages[1].pairs = pairs_for(split_of(d, cfg.train_split));
  for (size_t i = 0; i < 2; ++i) {
    const StageSchedule& sch = i == 0 ? cfg.stage1 : cfg.stage2;
    stages[i].epochs = sch.epochs;
    stages[i].lr = sch.lr;
    stages[i].batch_size = sch.batch_size;
  }
  auto test_idx = split_of(d, cfg.test_split);
  test_idx.resize(std::min(test_idx.size(), static_cast<size_t>(cfg.heldout_count)));
  const auto heldout = pairs_for(test_idx);

  TranslatorConfig tc;
  tc.tokens = cfg.encoder.tokens();
  tc.feature_dim = cfg.encoder.dim;
  tc.decoder_dim = s.decoder.config().dim;
  tc.hidden = cfg.translator_hidden;
  Translator tr(tc, derive_seed(cfg.seed, kTranslatorInit));
  const TrainingHistory hist = train_translator(tr, s.encoder, s.decoder, s.vocab, stages, heldout,
                                                derive_seed(cfg.seed, kTranslatorTrain));
  if (s.encoder.digest() != enc_before || s.decoder.digest() != dec_before)
    throw ContractViolation("frozen endpoint changed during translator training");

  ModelCheckpoint c = tr.to_checkpoint();
  c.meta = {{"stamp", artifact_stamp(cfg, "train-translator")}};
  save_checkpoint(c, P.translator());
  nlohmann::json h = hist.to_json();
  h["stamp"] = artifact_stamp(cfg, "train-translator");
  h["encoder_digest"] = enc_before;
  h["decoder_digest"] = dec_before;
  write_json(P.translator_log(), h);
  return {{"initial_train_loss", hist.initial_train_loss},
          {"final_train_loss", hist.step_loss.empty() ? 0.0 : hist.step_loss.back()},
          {"heldout_token_accuracy",
           hist.heldout_token_accuracy.empty() ? 0.0 : hist.heldout_token_accuracy.back()},
          {"failed", hist.failed}};
}

nlohmann::json run_explain(const RunConfig& cfg) {
  const Paths P{cfg.output_dir};
  const LoadedData d = load_data(cfg);
  const Stack s = load_stack(cfg);
  const Translator tr = Translator::from_checkpoint(read_checkpoint(P.translator(), cfg, "train-translator"),
                                                    s.encoder.config(), s.decoder.config());
  nlohmann::json summary = nlohmann::json::object();
  for (size_t v = 0; v < views().size(); ++v) {
    const std::string& view = views()[v];
    std::vector<size_t> idx = view == "train" ? labelled(d, cfg.train_split) : labelled(d, cfg.test_split);
    std::vector<ImageTensor> images = load_images(d, idx, cfg);
    if (view == "test_occluded")
      for (size_t i = 0; i < idx.size(); ++i) {
        const BBox box = *d.manifest.records[idx[i]].foreground;
        images[i] = occlude_foreground(images[i], box,
                                       background_region_for(box, images[i].height(), images[i].width()));
      }
    const auto features = s.encoder.encode_batch(images);
    std::ostringstream out;
    out << nlohmann::json{{"format", "vislex.explanation-view"},
                          {"version", kArtifactVersion},
                          {"view", view},
                          {"sampling", cfg.sampling.to_json()},
                          {"count", idx.size()},
                          {"stamp", artifact_stamp(cfg, "explain")}}
               .dump()
        << '\n';
    long sentences = 0;
    for (size_t i = 0; i < idx.size(); ++i) {
      const auto& rec = d.manifest.records[idx[i]];
      SamplingConfig sc = cfg.sampling;
      sc.seed = derive_seed(derive_seed(cfg.sampling.seed, v), i);
      const ExplanationSet set = explain(features[i], tr, s.decoder, s.vocab, sc, rec.id, cfg.threads);
      sentences += static_cast<long>(set.sentences.size());
      out << nlohmann::json{{"id", rec.id}, {"label", rec.label}, {"background", rec.background},
                            {"sentences", set.sentences}}
                 .dump()
          << '\n';
    }
    write_text(P.explanations(view), out.str());
    summary[view] = {{"samples", idx.size()}, {"sentences", sentences}};
  }
  return summary;
}

nlohmann::json run_analyze(const RunConfig& cfg) {
  const Paths P{cfg.output_dir};
  const LoadedData d = load_data(cfg);
  const StopwordSet stop = stopwords_for(cfg);
  const auto& classes = d.manifest.class_names;
  const auto& backgrounds = d.manifest.background_names;
  const long per_sample_min = cfg.min_count > 0 ? cfg.min_count : default_min_count(cfg.sampling.n_samples);

  std::map<int, TermSet> terms;
  for (size_t k = 0; k < classes.size(); ++k) terms[static_cast<int>(k)] = cfg.terms_for(static_cast<int>(k));

  nlohmann::json profiles_json = nlohmann::json::object();
  nlohmann::json spurious_json = nlohmann::json::object();
  std::map<std::string, std::map<int, WordFrequencyProfile>> class_profiles;
  std::vector<SampleProfile> train_samples;
  for (const auto& view : views()) {
    const auto samples = read_explanations(cfg, view);
    std::map<int, std::vector<WordFrequencyProfile>> raw;
    std::map<int, long> sentence_count;
    for (const auto& smp : samples) {
      WordFrequencyProfile p = word_profile(std::span<const std::string>(smp.sentences), stop, 1);
      raw[smp.label].push_back(p);
      sentence_count[smp.label] += static_cast<long>(smp.sentences.size());
      if (view == "train") train_samples.push_back(SampleProfile{smp.id, smp.label, apply_min_count(p, per_sample_min)});
    }
    nlohmann::json vp = nlohmann::json::object(), vs = nlohmann::json::array();
    for (auto& [label, ps] : raw) {
      const long mc = cfg.min_count > 0 ? cfg.min_count
                                        : default_min_count(static_cast<int>(sentence_count[label]));
      WordFrequencyProfile agg = apply_min_count(aggregate_class(ps), mc);
      const std::string& name = classes.at(static_cast<size_t>(label));
      write_text(P.wordcloud_dir() / (view + "_" + name + ".tsv"), wordcloud_tsv(agg));
      vp[name] = agg.to_json();
      vs.push_back(detect_spurious(agg, terms[label], name).to_json());
      class_profiles[view][label] = std::move(agg);
    }
    profiles_json[view] = vp;
    spurious_json[view] = vs;
  }

  nlohmann::json shifts = nlohmann::json::object();
  for (const auto& [label, p] : class_profiles["train"]) {
    const auto it = class_profiles["test"].find(label);
    if (it == class_profiles["test"].end() || (p.empty() && it->second.empty())) continue;
    shifts[classes.at(static_cast<size_t>(label))] = compare_profiles(p, it->second).to_json();
  }

  // Occluded-test rank check used by reports: is a background word rank-1?
  nlohmann::json occluded = nlohmann::json::object();
  for (const auto& [label, p] : class_profiles["test_occluded"]) {
    const std::string& shape = classes.at(static_cast<size_t>(label));
    const std::string top = p.ranked.empty() ? "" : p.ranked.front();
    const bool bg_top = std::find(backgrounds.begin(), backgrounds.end(), top) != backgrounds.end();
    occluded[shape] = {{"dominant_word", top}, {"background_dominant", bg_top}};
  }

  // Faithfulness of test explanations to their captions, per class.
  std::map<std::string, std::string> captions;
  for (const auto& r : d.manifest.records) captions[r.id] = r.caption;
  FaithfulnessReport faith;
  {
    const auto samples = read_explanations(cfg, "test");
    std::map<std::string, std::vector<FaithfulnessScores>> per;
    for (const auto& smp : samples) {
      const std::string& ref = captions.at(smp.id);
      const size_t n = std::min<size_t>(smp.sentences.size(), 5);
      for (size_t i = 0; i < n; ++i) {
        FaithfulnessScores sc;
        sc.cosine = bow_cosine(smp.sentences[i], ref, stop);
        sc.rouge_l = rouge_l(smp.sentences[i], ref);
        sc.meteor_lite = meteor_lite(smp.sentences[i], ref);
        per[classes.at(static_cast<size_t>(smp.label))].push_back(sc);
      }
    }
    std::vector<FaithfulnessScores> cats;
    for (const auto& [name, xs] : per) {
      faith.per_category[name] = mean_scores(xs);
      cats.push_back(faith.per_category[name]);
    }
    faith.macro = mean_scores(cats);
  }

  const Selection sel = select_problematic(train_samples, terms);
  nlohmann::json sel_json = sel.to_json();
  sel_json["stamp"] = artifact_stamp(cfg, "analyze");
  write_json(P.selection(), sel_json);

  write_json(P.analysis(), {{"stamp", artifact_stamp(cfg, "analyze")},
                            {"per_sample_min_count", per_sample_min},
                            {"class_profiles", profiles_json},
                            {"spurious", spurious_json},
                            {"shift", shifts},
                            {"occluded_dominance", occluded},
                            {"faithfulness", faith.to_json()},
                            {"faithfulness_table", faith.table()}});
  return {{"selected", sel.ids.size()}, {"selected_fraction", sel.fraction}, {"occluded_dominance", occluded}};
}

nlohmann::json run_mitigate(const RunConfig& cfg) {
  const Paths P{cfg.output_dir};
  const LoadedData d = load_data(cfg);
  const VisionEncoder erm = load_erm(cfg);
  const nlohmann::json sel = read_stamped(P.selection(), cfg, "analyze");
  const auto ids = sel.at("ids").get<std::vector<std::string>>();
  if (ids.empty())
    throw ArgumentError("mitigate: no problematic samples were selected, nothing to fine-tune on");

  const auto train_idx = labelled(d, cfg.train_split);
  const auto images = load_images(d, train_idx, cfg);
  std::vector<int> labels;
  std::map<std::string, size_t> pos;
  for (size_t i = 0; i < train_idx.size(); ++i) {
    labels.push_back(d.manifest.records[train_idx[i]].label);
    pos[d.manifest.records[train_idx[i]].id] = i;
  }
  const auto fill = dataset_mean(images);

  std::vector<ImageTensor> masked;
  std::vector<int> masked_labels;
  std::vector<std::string> consumed;
  double area = 0.0;
  long zero_maps = 0;
  for (const auto& id : ids) {
    const auto it = pos.find(id);
    if (it == pos.end()) throw ContractViolation("mitigate: selected id '" + id + "' is not a training sample");
    const ImageTensor& img = images[it->second];
    const int pred = erm.predict(std::span<const ImageTensor>(&img, 1)).front();
    const SaliencyMap map = saliency(erm, img, pred);
    zero_maps += map.zero;
    const MaskSpec m = mask_from_saliency(map, cfg.saliency_threshold, cfg.fill, fill);
    area += static_cast<double>(m.area()) / static_cast<double>(m.mask.size());
    masked.push_back(apply_mask(img, m));
    masked_labels.push_back(labels[it->second]);
    consumed.push_back(id);
  }
  const double mean_area = area / static_cast<double>(ids.size());
  const FinetuneResult ours = finetune_masked(erm, masked, masked_labels, cfg.finetune);

  const double fraction = static_cast<double>(ids.size()) / static_cast<double>(train_idx.size());
  const auto rand = random_mask_baseline(train_idx.size(), fraction, mean_area, cfg.data.image_size,
                                         cfg.data.image_size, derive_seed(cfg.seed, kRandMask), cfg.fill, fill);
  std::vector<ImageTensor> rand_images;
  std::vector<int> rand_labels;
  for (const auto& r : rand) {
    rand_images.push_back(apply_mask(images[r.index], r.mask));
    rand_labels.push_back(labels[r.index]);
  }
  const FinetuneResult baseline = finetune_masked(erm, rand_images, rand_labels, cfg.finetune);

  const nlohmann::json meta = {{"stamp", artifact_stamp(cfg, "mitigate")}};
  ModelCheckpoint a = ours.model.to_checkpoint();
  a.meta = meta;
  ModelCheckpoint b = baseline.model.to_checkpoint();
  b.meta = meta;
  fs::create_directories(P.explainmask().parent_path());
  save_checkpoint(a, P.explainmask());
  save_checkpoint(b, P.randmask());
  write_json(P.mitigation(), {{"stamp", artifact_stamp(cfg, "mitigate")},
                              {"consumed_ids", consumed},
                              {"masked_fraction", fraction},
                              {"mean_mask_area", mean_area},
                              {"zero_saliency_maps", zero_maps},
                              {"randmask_count", rand.size()},
                              {"finetune", cfg.finetune.to_json()},
                              {"explainmask_epoch_loss", ours.history.epoch_loss},
                              {"randmask_epoch_loss", baseline.history.epoch_loss},
                              {"erm_digest", erm.digest()}});
  return {{"masked_samples", ids.size()}, {"masked_fraction", fraction}, {"mean_mask_area", mean_area}};
}

nlohmann::json run_evaluate(const RunConfig& cfg) {
  const Paths P{cfg.output_dir};
  const LoadedData d = load_data(cfg);
  const nlohmann::json mit = read_stamped(P.mitigation(), cfg, "mitigate");
  const double fraction = mit.at("masked_fraction").get<double>();
  const auto test_idx = labelled(d, cfg.test_split);
  const auto images = load_images(d, test_idx, cfg);
  std::vector<int> labels, groups;
  for (size_t i : test_idx) {
    const auto& r = d.manifest.records[i];
    if (!r.subgroup) throw FormatError("evaluate: test record '" + r.id + "' has no subgroup label");
    labels.push_back(r.label);
    groups.push_back(*r.subgroup);
  }
  const auto names = subgroup_names(d.manifest);
  nlohmann::json methods = nlohmann::json::object();
  const std::pair<const char*, fs::path> models[] = {
      {"ERM", P.encoder()}, {"RandMask", P.randmask()}, {"ExplainMask", P.explainmask()}};
  nlohmann::json summary = nlohmann::json::object();
  for (const auto& [name, base] : models) {
    const std::string producer = std::string(name) == "ERM" ? "pretrain" : "mitigate";
    const VisionEncoder m = VisionEncoder::from_checkpoint(read_checkpoint(base, cfg, producer));
    SubgroupMetrics sm = eval_subgroups(m, images, labels, groups, names);
    sm.masked_fraction = std::string(name) == "ERM" ? 0.0 : fraction;
    methods[name] = sm.to_json();
    summary[name] = {{"worst_group", sm.worst_group}, {"average", sm.average}};
  }
  write_json(P.evaluation(), {{"stamp", artifact_stamp(cfg, "evaluate")}, {"methods", methods}});
  return summary;
}

nlohmann::json run_report(const RunConfig& cfg, const std::vector<fs::path>& extra_runs) {
  const Paths P{cfg.output_dir};
  const nlohmann::json analysis = read_stamped(P.analysis(), cfg, "analyze");
  const nlohmann::json sel = read_stamped(P.selection(), cfg, "analyze");
  const nlohmann::json mit = read_stamped(P.mitigation(), cfg, "mitigate");
  const nlohmann::json eval = read_stamped(P.evaluation(), cfg, "evaluate");
  const nlohmann::json history = read_stamped(P.translator_log(), cfg, "train-translator");
  if (sel.at("ids") != mit.at("consumed_ids"))
    throw ContractViolation("report: mitigation did not consume exactly the selected sample ids");

  // Pool subgroup metrics over this run and any extra runs with the same digest.
  const std::string digest = cfg.digest();
  std::vector<nlohmann::json> evals{eval};
  std::vector<std::uint64_t> seeds{cfg.seed};
  for (const auto& dir : extra_runs) {
    const nlohmann::json e = read_json(Paths{dir}.evaluation(), "evaluate");
    const auto stamp = e.value("stamp", nlohmann::json::object());
    if (stamp.value("config_digest", "") != digest)
      throw ArtifactError("report: " + Paths{dir}.evaluation().string() +
                          " comes from a different configuration (digest " +
                          stamp.value("config_digest", std::string("none")) + ")");
    evals.push_back(e);
    seeds.push_back(stamp.value("seed", std::uint64_t{0}));
  }
  std::vector<MethodRuns> table;
  for (const char* name : {"ERM", "RandMask", "ExplainMask"}) {
    MethodRuns m{name, {}};
    for (const auto& e : evals) m.runs.push_back(SubgroupMetrics::from_json(e.at("methods").at(name)));
    table.push_back(std::move(m));
  }
  const std::string subgroup_text = subgroup_table(table);

  const fs::path R = P.report();
  fs::create_directories(R / "wordclouds");
  for (const auto& entry : fs::directory_iterator(P.wordcloud_dir()))
    fs::copy_file(entry.path(), R / "wordclouds" / entry.path().filename(),
                  fs::copy_options::overwrite_existing);
  const nlohmann::json stamp = artifact_stamp(cfg, "report");
  write_json(R / "spurious.json", {{"stamp", stamp}, {"reports", analysis.at("spurious")}});
  write_json(R / "shift.json", {{"stamp", stamp}, {"reports", analysis.at("shift")}});
  write_json(R / "selection.json", sel);
  write_json(R / "faithfulness.json", {{"stamp", stamp}, {"scores", analysis.at("faithfulness")}});
  write_text(R / "faithfulness.txt", analysis.at("faithfulness_table").get<std::string>());
  write_json(R / "subgroups.json", {{"stamp", stamp}, {"seeds", seeds}, {"runs", evals}});
  write_text(R / "subgroups.txt", subgroup_text);

  std::ostringstream md;
  md << "# vislex run report\n\n";
  md << "config digest: " << digest << "\n";
  md << "seeds:";
  for (auto s : seeds) md << ' ' << s;
  md << "\n\n## Translator\n\n";
  const auto& acc = history.at("heldout_token_accuracy");
  md << "initial train loss: " << history.at("initial_train_loss").get<double>() << "\n";
  md << "held-out token accuracy: " << (acc.empty() ? 0.0 : acc.back().get<double>()) << "\n\n";
  md << "## Dominant words\n\n";
  for (const auto& [view, reports] : analysis.at("spurious").items())
    for (const auto& r : reports)
      md << "- " << view << " / " << r.at("label").get<std::string>() << ": "
         << r.at("dominant_word").get<std::string>() << (r.at("flagged").get<bool>() ? " (flagged)" : "")
         << "\n";
  md << "\n## Problematic samples\n\n";
  md << sel.at("ids").size() << " of " << sel.at("total").get<size_t>() << " training samples\n\n";
  md << "## Faithfulness\n\n```\n" << analysis.at("faithfulness_table").get<std::string>() << "```\n\n";
  md << "## Subgroup accuracy (%)\n\n```\n" << subgroup_text << "```\n";
  write_text(R / "summary.md", md.str());
  return {{"report_dir", R.string()}, {"runs", evals.size()}};
}

const std::vector<std::string>& pipeline_commands() {
  static const std::vector<std::string> c{"gen-data", "pretrain", "train-translator", "explain",
                                          "analyze",  "mitigate", "evaluate",         "report"};
  return c;
}

nlohmann::json run_command(const std::string& name, const RunConfig& cfg) {
  if (name == "gen-data") return run_gen_data(cfg);
  if (name == "pretrain") return run_pretrain(cfg);
  if (name == "train-translator") return run_train_translator(cfg);
  if (name == "explain") return run_explain(cfg);
  if (name == "analyze") return run_analyze(cfg);
  if (name == "mitigate") return run_mitigate(cfg);
  if (name == "evaluate") return run_evaluate(cfg);
  if (name == "report") return run_report(cfg);
  throw ArgumentError("unknown command '" + name + "'");
}

nlohmann::json run_all(const RunConfig& cfg) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& c : pipeline_commands()) out[c] = run_command(c, cfg);
  return out;
}

}  // namespace vislex
