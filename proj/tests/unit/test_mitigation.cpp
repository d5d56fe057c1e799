#include <doctest.h>

#include <algorithm>
#include <array>
#include <set>

#include "vislex/mitigation.hpp"

using namespace vislex;

namespace {

ImageTensor noise_image(Rng& rng, double lo = 0.0, double hi = 1.0) {
  ImageTensor img(32, 32, 3);
  for (double& v : img.data()) v = lo + (hi - lo) * uniform01(rng);
  return img;
}

// Label is carried only by the colour of patch (row 1, col 2), red or green,
// so both classes have positive evidence there; every other pixel is noise.
constexpr int kPatchRow = 1, kPatchCol = 2;

ImageTensor patch_image(Rng& rng, int label) {
  ImageTensor img = noise_image(rng, 0.3, 0.7);
  for (int y = kPatchRow * 8; y < kPatchRow * 8 + 8; ++y)
    for (int x = kPatchCol * 8; x < kPatchCol * 8 + 8; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = c == label ? 0.95 : 0.05;
  return img;
}

size_t index_of(const ParameterSet& ps, const std::string& name) {
  for (size_t i = 0; i < ps.size(); ++i)
    if (ps[i].name == name) return i;
  FAIL("no parameter " << name);
  return 0;
}

SaliencyMap map_from(std::vector<double> values, int h, int w) {
  SaliencyMap m;
  m.height = h;
  m.width = w;
  m.values = std::move(values);
  return m;
}

SubgroupMetrics metrics(std::vector<std::pair<long, long>> groups) {
  SubgroupMetrics m;
  long n = 0, c = 0;
  m.worst_group = 1.0;
  int id = 0;
  for (auto [count, correct] : groups) {
    SubgroupAccuracy g{id, "Subgroup-" + std::to_string(id + 1), count, correct,
                       static_cast<double>(correct) / static_cast<double>(count)};
    ++id;
    m.groups.push_back(g);
    m.worst_group = std::min(m.worst_group, g.accuracy);
    n += count;
    c += correct;
  }
  m.average = static_cast<double>(c) / static_cast<double>(n);
  return m;
}

}  // namespace

TEST_CASE("saliency peaks on the single discriminative patch") {
  Rng rng(3);
  std::vector<ImageTensor> imgs;
  std::vector<int> labels;
  for (int i = 0; i < 300; ++i) {
    labels.push_back(i % 2);
    imgs.push_back(patch_image(rng, i % 2));
  }
  VisionEncoder enc(EncoderConfig{}, 4);
  ClassifierTrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 2;
  pretrain_classifier(enc, imgs, labels, cfg);
  enc.freeze();
  int hits = 0;
  const int trials = 20;
  std::array<double, 16> total{};
  for (int i = 0; i < trials; ++i) {
    const int label = i % 2;
    const auto img = patch_image(rng, label);
    const int pred = enc.classify(img, 1).top_k[0].first;
    REQUIRE(pred == label);
    const auto map = saliency(enc, img, pred);
    REQUIRE_FALSE(map.zero);
    std::array<double, 16> mass{};
    for (size_t k = 0; k < map.values.size(); ++k) mass[k / 32 / 8 * 4 + k % 32 / 8] += map.values[k];
    const auto at = std::max_element(mass.begin(), mass.end()) - mass.begin();
    hits += at == kPatchRow * 4 + kPatchCol;
    for (int k = 0; k < 16; ++k) total[k] += mass[k];
  }
  // Attention mixes neighbouring tokens, so single maps may peak next door.
  CHECK(std::max_element(total.begin(), total.end()) - total.begin() == kPatchRow * 4 + kPatchCol);
  CHECK(hits >= trials * 4 / 5);
}

TEST_CASE("saliency is normalised and deterministic") {
  Rng rng(5);
  VisionEncoder enc(EncoderConfig{}, 1);
  enc.freeze();
  for (int i = 0; i < 5; ++i) {
    const auto img = noise_image(rng);
    for (int k = 0; k < 2; ++k) {
      const auto a = saliency(enc, img, k);
      const auto b = saliency(enc, img, k);
      CHECK(a.values == b.values);
      CHECK(a.values.size() == 32u * 32u);
      if (a.zero) continue;
      CHECK(*std::max_element(a.values.begin(), a.values.end()) == 1.0);
      CHECK(*std::min_element(a.values.begin(), a.values.end()) >= 0.0);
    }
  }
  CHECK_THROWS_AS(saliency(enc, noise_image(rng), 2), ArgumentError);
}

TEST_CASE("vanishing gradients give a flagged zero map") {
  VisionEncoder enc(EncoderConfig{}, 1);
  enc.params().mutable_at(index_of(enc.params(), "head.w")).value.setZero();
  Rng rng(1);
  const auto map = saliency(enc, noise_image(rng), 0);
  CHECK(map.zero);
  CHECK(std::all_of(map.values.begin(), map.values.end(), [](double v) { return v == 0.0; }));
  CHECK(mask_from_saliency(map, 0.5).area() == 0);
}

TEST_CASE("mask_from_saliency thresholds") {
  std::vector<double> v(16, 0.3);
  v[5] = 1.0;
  v[6] = 0.7;
  const auto m = map_from(v, 4, 4);
  const auto top = mask_from_saliency(m, 1.0);
  CHECK(top.area() == 1);
  CHECK(top.at(1, 1));
  CHECK(mask_from_saliency(m, 0.6).area() == 2);
  CHECK(mask_from_saliency(m, 0.3).area() == 16);
  CHECK_THROWS_AS(mask_from_saliency(m, 0.0), ArgumentError);
  CHECK_THROWS_AS(mask_from_saliency(m, 1.5), ArgumentError);
}

TEST_CASE("apply_mask fills exactly the masked pixels") {
  Rng rng(2);
  const auto img = noise_image(rng);
  MaskSpec empty;
  empty.height = empty.width = 32;
  empty.mask.assign(32 * 32, 0);
  CHECK(apply_mask(img, empty) == img);

  MaskSpec full = empty;
  full.mask.assign(32 * 32, 1);
  full.fill = FillPolicy::Zero;
  full.fill_value = {0.4, 0.4, 0.4};
  CHECK(apply_mask(img, full) == ImageTensor(32, 32, 3, 0.0));

  MaskSpec checker = empty;
  checker.fill_value = {0.1, 0.2, 0.3};
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) checker.mask[static_cast<size_t>(y) * 32 + x] = (x + y) % 2;
  const auto out = apply_mask(img, checker);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c)
        CHECK(out.at(y, x, c) == ((x + y) % 2 ? checker.fill_value[static_cast<size_t>(c)] : img.at(y, x, c)));
  CHECK(apply_mask(out, checker) == out);

  MaskSpec wrong = empty;
  wrong.height = wrong.width = 16;
  wrong.mask.assign(256, 0);
  CHECK_THROWS_AS(apply_mask(img, wrong), ArgumentError);
}

TEST_CASE("dataset_mean is per channel") {
  std::vector<ImageTensor> imgs{ImageTensor(2, 2, 3, 0.2), ImageTensor(2, 2, 3, 0.6)};
  imgs[0].at(0, 0, 1) = 1.0;
  const auto m = dataset_mean(imgs);
  CHECK(m[0] == doctest::Approx(0.4));
  CHECK(m[1] == doctest::Approx((0.2 * 3 + 1.0 + 0.6 * 4) / 8));
}

TEST_CASE("finetune_masked changes only a copy of the classifier") {
  Rng rng(4);
  std::vector<ImageTensor> imgs;
  std::vector<int> labels;
  for (int i = 0; i < 32; ++i) {
    labels.push_back(i % 2);
    imgs.push_back(patch_image(rng, i % 2));
  }
  VisionEncoder enc(EncoderConfig{}, 6);
  enc.freeze();
  const std::string digest = enc.digest();

  FinetuneConfig cfg;
  cfg.epochs = 0;
  const auto idle = finetune_masked(enc, imgs, labels, cfg);
  CHECK(idle.model.digest() == digest);
  CHECK_FALSE(idle.model.frozen());

  cfg.epochs = 3;
  cfg.base_lr = 1e-2;
  const auto res = finetune_masked(enc, imgs, labels, cfg);
  CHECK(enc.digest() == digest);
  CHECK(res.model.digest() != digest);
  CHECK(res.samples == 32);
  REQUIRE(res.history.epoch_loss.size() == 3);
  CHECK(res.history.epoch_loss.back() < res.history.epoch_loss.front());

  CHECK_THROWS_AS(finetune_masked(enc, {}, {}, cfg), ArgumentError);
  std::vector<int> bad(32, 3);
  CHECK_THROWS_AS(finetune_masked(enc, imgs, bad, cfg), ArgumentError);
}

TEST_CASE("eval_subgroups accuracy and exclusions") {
  Rng rng(6);
  std::vector<ImageTensor> imgs;
  std::vector<int> labels, groups;
  VisionEncoder enc(EncoderConfig{}, 7);
  for (int i = 0; i < 40; ++i) imgs.push_back(noise_image(rng));
  const auto pred = enc.predict(imgs);
  for (int i = 0; i < 40; ++i) {
    labels.push_back(pred[static_cast<size_t>(i)]);
    groups.push_back(i % 3);
  }
  const std::vector<std::string> names{"g0", "g1", "g2", "g3"};
  const auto all = eval_subgroups(enc, imgs, labels, groups, names);
  CHECK(all.worst_group == 1.0);
  CHECK(all.average == 1.0);
  CHECK(all.groups.size() == 3);
  CHECK(all.excluded == std::vector<std::string>{"g3"});

  for (int i = 0; i < 40; i += 4) labels[static_cast<size_t>(i)] = 1 - labels[static_cast<size_t>(i)];
  const auto m = eval_subgroups(enc, imgs, labels, groups, names);
  double lo = 1.0, hi = 0.0;
  long n = 0;
  for (const auto& g : m.groups) {
    lo = std::min(lo, g.accuracy);
    hi = std::max(hi, g.accuracy);
    n += g.count;
  }
  CHECK(n == 40);
  CHECK(m.worst_group == lo);
  CHECK(m.worst_group <= m.average);
  CHECK(m.average <= hi);
  CHECK(m.average == doctest::Approx(30.0 / 40.0));
  CHECK(SubgroupMetrics::from_json(m.to_json()).to_json() == m.to_json());

  std::vector<int> out_of_range(40, 9);
  CHECK_THROWS_AS(eval_subgroups(enc, imgs, labels, out_of_range, names), ArgumentError);
}

TEST_CASE("random_mask_baseline matches count and area") {
  const auto a = random_mask_baseline(200, 0.15, 0.3, 32, 32, 9);
  CHECK(a.size() == 30);
  std::set<size_t> ids;
  for (const auto& r : a) {
    ids.insert(r.index);
    CHECK(r.index < 200);
    CHECK(r.mask.area() == static_cast<size_t>(0.3 * 1024 + 0.5));
    CHECK(r.mask.provenance == MaskProvenance::Random);
  }
  CHECK(ids.size() == 30);
  CHECK(std::is_sorted(a.begin(), a.end(), [](const auto& x, const auto& y) { return x.index < y.index; }));

  const auto b = random_mask_baseline(200, 0.15, 0.3, 32, 32, 9);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].index == b[i].index);
    CHECK(a[i].mask.mask == b[i].mask.mask);
  }
  const auto c = random_mask_baseline(200, 0.15, 0.3, 32, 32, 10);
  bool differs = false;
  for (size_t i = 0; i < a.size(); ++i) differs |= a[i].index != c[i].index;
  CHECK(differs);
  CHECK(random_mask_baseline(50, 1.0, 0.2, 32, 32, 1).size() == 50);
  CHECK_THROWS_AS(random_mask_baseline(50, 0.0, 0.2, 32, 32, 1), ArgumentError);
  CHECK_THROWS_AS(random_mask_baseline(50, 1.5, 0.2, 32, 32, 1), ArgumentError);
}

TEST_CASE("subgroup_table layout") {
  const auto erm = metrics({{100, 90}, {50, 40}, {80, 80}});
  const auto ours = metrics({{100, 95}, {50, 45}, {80, 79}});
  const std::string single = subgroup_table({{"ERM", {erm}}, {"ExplainMask", {ours}}});
  CHECK(single.find("Subgroup-1") != std::string::npos);
  CHECK(single.find("Worst-group") != std::string::npos);
  CHECK(single.find("Average") != std::string::npos);
  CHECK(single.find("Masked Samples") != std::string::npos);
  CHECK(single.find("80.00") != std::string::npos);
  CHECK(single.find("±") == std::string::npos);
  const std::string pooled = subgroup_table({{"ERM", {erm, ours}}});
  CHECK(pooled.find("±") != std::string::npos);
}
