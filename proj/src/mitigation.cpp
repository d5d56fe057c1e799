#include "vislex/mitigation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "vislex/errors.hpp"
#include "vislex/rng.hpp"

namespace vislex {

namespace {

// Bilinear upsampling of a (gh x gw) grid of cell centres to (h x w) pixels.
std::vector<double> upsample(const std::vector<double>& grid, int gh, int gw, int h, int w) {
  std::vector<double> out(static_cast<size_t>(h) * w);
  const double sy = static_cast<double>(gh) / h;
  const double sx = static_cast<double>(gw) / w;
  for (int y = 0; y < h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, gh - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, gh - 1);
    const double ty = fy - y0;
    for (int x = 0; x < w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, gw - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, gw - 1);
      const double tx = fx - x0;
      auto g = [&](int yy, int xx) { return grid[static_cast<size_t>(yy) * gw + xx]; };
      out[static_cast<size_t>(y) * w + x] = (1 - ty) * ((1 - tx) * g(y0, x0) + tx * g(y0, x1)) +
                                            ty * ((1 - tx) * g(y1, x0) + tx * g(y1, x1));
    }
  }
  return out;
}

std::string percent_cell(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  char buf[64];
  if (xs.size() < 2) {
    std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * mean);
    return buf;
  }
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  std::snprintf(buf, sizeof(buf), "%.2f ± %.2f", 100.0 * mean, 100.0 * std::sqrt(ss / (n - 1)));
  return buf;
}

// Display width, counting UTF-8 code points.
size_t display_width(const std::string& s) {
  size_t w = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++w;
  return w;
}

}  // namespace

size_t MaskSpec::area() const {
  return static_cast<size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

SaliencyMap saliency(const VisionEncoder& classifier, const ImageTensor& image, int target_class) {
  const auto& cfg = classifier.config();
  if (target_class < 0 || target_class >= cfg.num_classes)
    throw ArgumentError("saliency: target class " + std::to_string(target_class) + " outside [0, " +
                        std::to_string(cfg.num_classes) + ")");
  Tape t;
  const auto p = classifier.params().bind(t);
  const auto f = classifier.forward(t, p, std::span<const ImageTensor>(&image, 1), true);
  Mat onehot = Mat::Zero(cfg.num_classes, 1);
  onehot(target_class, 0) = 1.0;
  const Var score = matmul(t, f.logits, t.constant(onehot));
  t.backward(score);

  const Mat& act = t.value(f.last_block_input);
  const Mat& grad = t.grad(f.last_block_input);
  const int P = cfg.patches();
  // Row 0 is the summary token; GradCAM is over patch tokens only.
  const Mat a = act.bottomRows(P);
  const Mat g = grad.bottomRows(P);
  const RowVec alpha = g.colwise().mean();
  std::vector<double> cam(static_cast<size_t>(P));
  for (int i = 0; i < P; ++i) cam[static_cast<size_t>(i)] = std::max(0.0, a.row(i).dot(alpha));

  SaliencyMap map;
  map.height = image.height();
  map.width = image.width();
  map.target_class = target_class;
  map.values = upsample(cam, cfg.grid(), cfg.grid(), map.height, map.width);
  const double mx = *std::max_element(map.values.begin(), map.values.end());
  if (!(mx > 0.0) || !std::isfinite(mx)) {
    std::fill(map.values.begin(), map.values.end(), 0.0);
    map.zero = true;
  } else {
    for (double& v : map.values) v = std::min(1.0, v / mx);
  }
  return map;
}

MaskSpec mask_from_saliency(const SaliencyMap& map, double threshold, FillPolicy fill,
                            std::array<double, 3> fill_value) {
  if (!(threshold > 0.0 && threshold <= 1.0))
    throw ArgumentError("mask_from_saliency: threshold must be in (0, 1]");
  MaskSpec m;
  m.height = map.height;
  m.width = map.width;
  m.fill = fill;
  m.fill_value = fill_value;
  m.provenance = MaskProvenance::Saliency;
  m.mask.resize(map.values.size());
  for (size_t i = 0; i < map.values.size(); ++i) m.mask[i] = map.values[i] >= threshold ? 1 : 0;
  return m;
}

ImageTensor apply_mask(const ImageTensor& image, const MaskSpec& mask) {
  if (image.height() != mask.height || image.width() != mask.width)
    throw ArgumentError("apply_mask: mask " + std::to_string(mask.height) + "x" +
                        std::to_string(mask.width) + " does not match image " +
                        std::to_string(image.height()) + "x" + std::to_string(image.width()));
  if (image.channels() > 3) throw ArgumentError("apply_mask: at most three channels supported");
  ImageTensor out = image;
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      if (!mask.at(y, x)) continue;
      for (int c = 0; c < image.channels(); ++c)
        out.at(y, x, c) = mask.fill == FillPolicy::Zero ? 0.0 : mask.fill_value[static_cast<size_t>(c)];
    }
  return out;
}

std::array<double, 3> dataset_mean(std::span<const ImageTensor> images) {
  std::array<double, 3> sum{0.0, 0.0, 0.0};
  double n = 0.0;
  for (const auto& img : images) {
    const int ch = std::min(3, img.channels());
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x)
        for (int c = 0; c < ch; ++c) sum[static_cast<size_t>(c)] += img.at(y, x, c);
    n += static_cast<double>(img.height()) * img.width();
  }
  if (n > 0)
    for (double& s : sum) s /= n;
  return sum;
}

nlohmann::json FinetuneConfig::to_json() const {
  return {{"epochs", epochs}, {"base_lr", base_lr}, {"lr_scale", lr_scale},
          {"batch_size", batch_size}, {"seed", seed}};
}

FinetuneConfig FinetuneConfig::from_json(const nlohmann::json& j) {
  FinetuneConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.base_lr = j.value("base_lr", c.base_lr);
  c.lr_scale = j.value("lr_scale", c.lr_scale);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  return c;
}

FinetuneResult finetune_masked(const VisionEncoder& classifier, std::span<const ImageTensor> masked,
                               std::span<const int> labels, const FinetuneConfig& cfg) {
  if (masked.empty()) throw ArgumentError("finetune_masked: the masked sample set is empty");
  if (masked.size() != labels.size()) throw ArgumentError("finetune_masked: label count mismatch");
  if (cfg.epochs < 0 || !(cfg.base_lr > 0.0) || !(cfg.lr_scale > 0.0))
    throw ArgumentError("finetune_masked: epochs must be >= 0 and step sizes positive");
  for (int y : labels)
    if (y < 0 || y >= classifier.config().num_classes)
      throw ArgumentError("finetune_masked: label " + std::to_string(y) + " out of range");
  FinetuneResult r{classifier.thawed_copy(), {}, masked.size()};
  ClassifierTrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.lr = cfg.base_lr * cfg.lr_scale;
  tc.seed = cfg.seed;
  r.history = fit_classifier(r.model, masked, labels, tc);
  return r;
}

nlohmann::json SubgroupMetrics::to_json() const {
  nlohmann::json g = nlohmann::json::array();
  for (const auto& s : groups)
    g.push_back({{"id", s.id}, {"name", s.name}, {"count", s.count}, {"correct", s.correct},
                 {"accuracy", s.accuracy}});
  return {{"groups", g},
          {"excluded", excluded},
          {"worst_group", worst_group},
          {"average", average},
          {"masked_fraction", masked_fraction}};
}

SubgroupMetrics SubgroupMetrics::from_json(const nlohmann::json& j) {
  SubgroupMetrics m;
  for (const auto& e : j.at("groups"))
    m.groups.push_back(SubgroupAccuracy{e.at("id").get<int>(), e.at("name").get<std::string>(),
                                        e.at("count").get<long>(), e.at("correct").get<long>(),
                                        e.at("accuracy").get<double>()});
  m.excluded = j.at("excluded").get<std::vector<std::string>>();
  m.worst_group = j.at("worst_group").get<double>();
  m.average = j.at("average").get<double>();
  m.masked_fraction = j.at("masked_fraction").get<double>();
  return m;
}

SubgroupMetrics eval_subgroups(const VisionEncoder& classifier, std::span<const ImageTensor> images,
                               std::span<const int> labels, std::span<const int> subgroups,
                               const std::vector<std::string>& names) {
  if (images.size() != labels.size() || images.size() != subgroups.size())
    throw ArgumentError("eval_subgroups: images, labels and subgroups differ in length");
  const int G = static_cast<int>(names.size());
  for (int s : subgroups)
    if (s < 0 || s >= G)
      throw ArgumentError("eval_subgroups: subgroup " + std::to_string(s) + " outside [0, " +
                          std::to_string(G) + ")");
  const auto pred = classifier.predict(images);
  std::vector<long> count(static_cast<size_t>(G), 0), correct(static_cast<size_t>(G), 0);
  for (size_t i = 0; i < images.size(); ++i) {
    const auto g = static_cast<size_t>(subgroups[i]);
    ++count[g];
    if (pred[i] == labels[i]) ++correct[g];
  }
  SubgroupMetrics m;
  long total = 0, total_correct = 0;
  for (int g = 0; g < G; ++g) {
    const auto gi = static_cast<size_t>(g);
    if (count[gi] == 0) {
      m.excluded.push_back(names[gi]);
      continue;
    }
    const double acc = static_cast<double>(correct[gi]) / static_cast<double>(count[gi]);
    m.groups.push_back(SubgroupAccuracy{g, names[gi], count[gi], correct[gi], acc});
    total += count[gi];
    total_correct += correct[gi];
  }
  if (m.groups.empty()) throw ArgumentError("eval_subgroups: no samples");
  m.worst_group = 1.0;
  for (const auto& s : m.groups) m.worst_group = std::min(m.worst_group, s.accuracy);
  m.average = static_cast<double>(total_correct) / static_cast<double>(total);
  return m;
}

std::vector<RandomMasked> random_mask_baseline(size_t n, double fraction, double area_fraction,
                                               int height, int width, std::uint64_t seed,
                                               FillPolicy fill, std::array<double, 3> fill_value) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ArgumentError("random_mask_baseline: fraction must be in (0, 1]");
  if (!(area_fraction >= 0.0 && area_fraction <= 1.0))
    throw ArgumentError("random_mask_baseline: area fraction must be in [0, 1]");
  if (height <= 0 || width <= 0) throw ArgumentError("random_mask_baseline: empty image size");
  Rng rng(seed);
  const auto k = std::min(n, static_cast<size_t>(std::llround(fraction * static_cast<double>(n))));
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (size_t i = 0; i < k; ++i) std::swap(order[i], order[i + uniform_index(rng, n - i)]);
  std::vector<size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(chosen.begin(), chosen.end());

  const size_t pixels = static_cast<size_t>(height) * width;
  const auto target = static_cast<size_t>(std::llround(area_fraction * static_cast<double>(pixels)));
  constexpr int kGrid = 4;
  std::vector<RandomMasked> out;
  out.reserve(k);
  for (size_t idx : chosen) {
    std::vector<double> grid(kGrid * kGrid);
    for (double& v : grid) v = uniform01(rng);
    const auto field = upsample(grid, kGrid, kGrid, height, width);
    std::vector<size_t> rank(pixels);
    std::iota(rank.begin(), rank.end(), 0);
    std::stable_sort(rank.begin(), rank.end(), [&](size_t a, size_t b) { return field[a] > field[b]; });
    MaskSpec m;
    m.height = height;
    m.width = width;
    m.fill = fill;
    m.fill_value = fill_value;
    m.provenance = MaskProvenance::Random;
    m.mask.assign(pixels, 0);
    for (size_t i = 0; i < target; ++i) m.mask[rank[i]] = 1;
    out.push_back(RandomMasked{idx, std::move(m)});
  }
  return out;
}

std::string subgroup_table(const std::vector<MethodRuns>& methods) {
  if (methods.empty()) return "";
  for (const auto& m : methods)
    if (m.runs.empty()) throw ArgumentError("subgroup_table: method '" + m.method + "' has no runs");

  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{""};
  for (const auto& m : methods) header.push_back(m.method);
  rows.push_back(header);

  // Subgroup rows follow the first method's group order.
  for (const auto& g : methods.front().runs.front().groups) {
    std::vector<std::string> row{g.name};
    for (const auto& m : methods) {
      std::vector<double> xs;
      for (const auto& r : m.runs)
        for (const auto& s : r.groups)
          if (s.id == g.id) xs.push_back(s.accuracy);
      row.push_back(xs.empty() ? "-" : percent_cell(xs));
    }
    rows.push_back(row);
  }
  auto metric_row = [&](const std::string& name, auto get) {
    std::vector<std::string> row{name};
    for (const auto& m : methods) {
      std::vector<double> xs;
      for (const auto& r : m.runs) xs.push_back(get(r));
      row.push_back(percent_cell(xs));
    }
    rows.push_back(row);
  };
  metric_row("Worst-group", [](const SubgroupMetrics& r) { return r.worst_group; });
  metric_row("Average", [](const SubgroupMetrics& r) { return r.average; });
  metric_row("Masked Samples", [](const SubgroupMetrics& r) { return r.masked_fraction; });

  std::vector<size_t> widths(header.size(), 0);
  for (const auto& row : rows)
    for (size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], display_width(row[c]));
  std::string out;
  for (size_t r = 0; r < rows.size(); ++r) {
    for (size_t c = 0; c < rows[r].size(); ++c) {
      const std::string& cell = rows[r][c];
      const std::string pad(widths[c] - display_width(cell), ' ');
      out += c == 0 ? cell + pad : " | " + pad + cell;
    }
    out += '\n';
    if (r == 0) {
      for (size_t c = 0; c < widths.size(); ++c) out += (c == 0 ? "" : "-+-") + std::string(widths[c], '-');
      out += '\n';
    }
  }
  return out;
}

}  // namespace vislex
