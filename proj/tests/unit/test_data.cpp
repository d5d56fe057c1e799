#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "vislex/config.hpp"
#include "vislex/manifest.hpp"
#include "vislex/pipeline.hpp"
#include "vislex/synthetic.hpp"

using namespace vislex;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("vislex_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool contains_word(const std::string& text, const std::string& word) {
  for (const auto& w : split_words(text))
    if (w == word) return true;
  return false;
}

}  // namespace

TEST_CASE("fully correlated split pairs every class with its background") {
  SyntheticSpec s;
  s.splits = {{"train", 300, 1.0, 0.0}};
  const auto ds = generate_synthetic(s);
  CHECK(ds.images.size() == 300);
  for (const auto& r : ds.manifest.records) CHECK(r.background == r.label);
}

TEST_CASE("half correlated split concentrates around one half") {
  SyntheticSpec s;
  s.splits = {{"big", 10000, 0.5, 0.0}};
  s.seed = 3;
  const auto ds = generate_synthetic(s);
  long matched = 0;
  for (const auto& r : ds.manifest.records) matched += r.background == r.label;
  CHECK(std::abs(static_cast<double>(matched) / 10000.0 - 0.5) <= 0.02);
}

TEST_CASE("synthetic records carry consistent ground truth") {
  SyntheticSpec s;
  s.splits = {{"train", 400, 0.9, 0.1}, {"test", 200, 0.5, 0.0}};
  s.seed = 4;
  const auto ds = generate_synthetic(s);
  std::map<std::string, std::map<int, long>> groups;
  std::map<std::string, long> sizes;
  std::set<std::string> ids;
  for (size_t i = 0; i < ds.images.size(); ++i) {
    const auto& r = ds.manifest.records[i];
    ds.images[i].validate();
    CHECK(ids.insert(r.id).second);
    ++sizes[r.split];
    const std::string& bg = s.backgrounds[static_cast<size_t>(r.background)];
    CHECK(contains_word(r.caption, bg));
    if (r.label < 0) {
      CHECK_FALSE(r.subgroup.has_value());
      CHECK_FALSE(r.foreground.has_value());
      ++groups[r.split][-1];
      continue;
    }
    CHECK(contains_word(r.caption, s.shapes[static_cast<size_t>(r.label)]));
    REQUIRE(r.subgroup.has_value());
    CHECK(*r.subgroup == r.label * static_cast<int>(s.backgrounds.size()) + r.background);
    ++groups[r.split][*r.subgroup];
  }
  for (const auto& [split, g] : groups) {
    long total = 0;
    for (const auto& [k, n] : g) total += n;
    CHECK(total == sizes[split]);
  }
  CHECK(groups["test"].count(-1) == 0);
  CHECK(generate_synthetic(s).manifest == ds.manifest);
}

TEST_CASE("synthetic spec validation") {
  SyntheticSpec s;
  s.splits = {{"train", -1, 0.5, 0.0}};
  CHECK_THROWS_AS(generate_synthetic(s), ArgumentError);
  s.splits = {{"train", 10, 1.5, 0.0}};
  CHECK_THROWS_AS(s.validate(), ArgumentError);
  s.splits = {{"a", 10, 0.5, 0.0}, {"a", 10, 0.5, 0.0}};
  CHECK_THROWS_AS(s.validate(), ArgumentError);
  s.splits = {{"a", 10, 0.5, 0.0}};
  s.shapes = {"circle"};
  CHECK_THROWS_AS(s.validate(), ArgumentError);
  s.shapes = {"circle", "blob"};
  CHECK_THROWS_AS(s.validate(), ArgumentError);
  SyntheticSpec round;
  round.splits = {{"x", 5, 0.7, 0.2}};
  CHECK(SyntheticSpec::from_json(round.to_json()).to_json() == round.to_json());
}

TEST_CASE("occlude_foreground tiles the background region") {
  Rng rng(1);
  ImageTensor img(32, 32, 3);
  for (double& v : img.data()) v = uniform01(rng);
  const BBox fg{10, 12, 21, 20};
  const BBox src{0, 0, 4, 3};
  const auto out = occlude_foreground(img, fg, src);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) {
        if (fg.contains(x, y)) {
          const int sx = src.x0 + (x - fg.x0) % src.width();
          const int sy = src.y0 + (y - fg.y0) % src.height();
          CHECK(out.at(y, x, c) == img.at(sy, sx, c));
        } else {
          CHECK(out.at(y, x, c) == img.at(y, x, c));
        }
      }
  CHECK(occlude_foreground(img, BBox{}, src) == img);
  CHECK_THROWS_AS(occlude_foreground(img, BBox{0, 0, 32, 32}, src), ArgumentError);
  CHECK_THROWS_AS(occlude_foreground(img, fg, BBox{9, 11, 12, 14}), ArgumentError);
  CHECK_THROWS_AS(occlude_foreground(img, BBox{30, 30, 40, 40}, src), ArgumentError);
  CHECK_THROWS_AS(background_region_for(BBox{0, 0, 32, 32}, 32, 32), ArgumentError);
  const BBox auto_region = background_region_for(fg, 32, 32);
  CHECK_FALSE(auto_region.intersects(fg));
  CHECK_FALSE(auto_region.empty());
}

TEST_CASE("manifest round trip and load errors") {
  const auto dir = scratch("manifest");
  SyntheticSpec s;
  s.splits = {{"train", 6, 0.9, 0.3}};
  auto ds = generate_synthetic(s);
  fs::create_directories(dir / "images" / "train");
  for (size_t i = 0; i < ds.images.size(); ++i)
    write_ppm(ds.images[i], dir / ds.manifest.records[i].image);
  ds.manifest.records[0].pixels = ds.images[0];
  ds.manifest.records[0].image.clear();
  save_manifest(ds.manifest, dir / "m.jsonl");
  const auto back = load_manifest(dir / "m.jsonl");
  CHECK(back == ds.manifest);
  for (size_t i = 0; i < ds.images.size(); ++i) CHECK(load_record_image(back.records[i], dir) == ds.images[i]);

  save_manifest(DatasetManifest{}, dir / "empty.jsonl");
  CHECK(load_manifest(dir / "empty.jsonl").records.empty());

  auto dup = ds.manifest;
  dup.records[2].id = dup.records[1].id;
  save_manifest(dup, dir / "dup.jsonl");
  try {
    load_manifest(dir / "dup.jsonl");
    FAIL("duplicate id accepted");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(dup.records[1].id) != std::string::npos);
  }

  auto missing = ds.manifest;
  missing.records[3].image = "images/nope.ppm";
  save_manifest(missing, dir / "missing.jsonl");
  CHECK_THROWS_AS(load_manifest(dir / "missing.jsonl"), FormatError);

  {
    std::ofstream out(dir / "schema.jsonl");
    out << R"({"schema":"other","version":1})" << '\n';
  }
  CHECK_THROWS_AS(load_manifest(dir / "schema.jsonl"), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("ppm round trip is lossless on the 8-bit grid") {
  const auto dir = scratch("ppm");
  Rng rng(2);
  ImageTensor img(5, 7, 3);
  for (double& v : img.data()) v = uniform01(rng);
  quantize8(img);
  write_ppm(img, dir / "x.ppm");
  CHECK(read_ppm(dir / "x.ppm") == img);
  fs::remove_all(dir);
}

TEST_CASE("run config load, validation and digest") {
  const auto dir = scratch("config");
  {
    std::ofstream out(dir / "stop.txt");
    out << "the\n";
    std::ofstream cfg(dir / "run.json");
    cfg << R"({
      // comments are allowed
      "seed": 3,
      "output_dir": "out",
      "stopwords": "stop.txt",
      "sampling": {"n_samples": 12},
      "class_terms": {"circle": ["circle", "circles"]}
    })";
  }
  auto cfg = RunConfig::load(dir / "run.json");
  CHECK(cfg.seed == 3);
  CHECK(cfg.sampling.n_samples == 12);
  CHECK(cfg.sampling.top_p == 0.95);
  CHECK(*cfg.stopwords == dir / "stop.txt");
  CHECK(cfg.terms_for(0) == TermSet{"circle", "circles"});
  CHECK(cfg.terms_for(1) == TermSet{"triangle"});
  CHECK(RunConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());

  auto other = cfg;
  other.seed = 99;
  other.output_dir = "elsewhere";
  other.threads = 4;
  CHECK(other.digest() == cfg.digest());
  other.sampling.top_p = 0.9;
  CHECK(other.digest() != cfg.digest());

  auto bad = cfg;
  bad.saliency_threshold = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.stopwords = dir / "absent.txt";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.class_terms["hexagon"] = {"hexagon"};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.test_split = "nope";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(RunConfig::load(dir / "absent.json"), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("bundled config is valid") {
  const auto cfg = RunConfig::load(fs::path(VISLEX_SOURCE_DIR) / "configs" / "synthetic.json");
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.data.splits.size() == 3);
}

TEST_CASE("output root environment override") {
  auto cfg = default_run_config();
  ::setenv(kOutputRootEnv, "/tmp/vislex-env-root", 1);
  apply_environment(cfg);
  ::unsetenv(kOutputRootEnv);
  CHECK(cfg.output_dir == fs::path("/tmp/vislex-env-root"));
}

TEST_CASE("pipeline commands name the command behind a missing artifact") {
  auto cfg = default_run_config();
  cfg.output_dir = scratch("pipeline");
  for (const auto& cmd : pipeline_commands()) {
    if (cmd == "gen-data") continue;
    try {
      run_command(cmd, cfg);
      FAIL(cmd << " ran without inputs");
    } catch (const ArtifactError& e) {
      const std::string what = e.what();
      const std::string producer = cmd == "report" ? "analyze" : "gen-data";
      CHECK_MESSAGE(what.find("run `vislex " + producer + "` first") != std::string::npos, what);
    }
  }
  CHECK_THROWS_AS(run_command("bogus", cfg), ArgumentError);
  fs::remove_all(cfg.output_dir);
}

TEST_CASE("pipeline refuses artifacts from another configuration") {
  auto cfg = default_run_config();
  cfg.output_dir = scratch("foreign");
  cfg.data.splits = {{"train", 20, 0.95, 0.0}, {"test", 10, 0.5, 0.0}, {"captions", 20, 0.5, 0.2}};
  run_gen_data(cfg);
  auto changed = cfg;
  changed.sampling.top_p = 0.5;
  CHECK_THROWS_AS(run_pretrain(changed), ArtifactError);
  fs::remove_all(cfg.output_dir);
}

TEST_CASE("report refuses a mitigation that consumed other ids than were selected") {
  auto cfg = default_run_config();
  cfg.output_dir = scratch("provenance");
  auto put = [&](const std::string& rel, nlohmann::json j, const std::string& producer) {
    j["stamp"] = artifact_stamp(cfg, producer);
    fs::create_directories((cfg.output_dir / rel).parent_path());
    std::ofstream(cfg.output_dir / rel) << j.dump();
  };
  put("analysis/analysis.json", nlohmann::json::object(), "analyze");
  put("analysis/selection.json", {{"ids", {"train-000001"}}}, "analyze");
  put("mitigation/mitigation.json", {{"consumed_ids", {"train-000002"}}}, "mitigate");
  put("eval/subgroups.json", nlohmann::json::object(), "evaluate");
  put("models/translator_history.json", nlohmann::json::object(), "train-translator");
  CHECK_THROWS_AS(run_report(cfg), ContractViolation);
  fs::remove_all(cfg.output_dir);
}
