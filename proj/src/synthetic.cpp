#include "vislex/synthetic.hpp"

#include "vislex/errors.hpp"

#include <cmath>
#include <cstdio>

namespace vislex {

namespace {

constexpr double kTwoPi = 6.283185307179586;

bool in_shape(const std::string& shape, double u, double v) {
  if (shape == "circle") return (u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5) <= 0.25;
  if (shape == "triangle") return v >= 0.05 && std::abs(u - 0.5) <= 0.5 * v;
  if (shape == "square") return u >= 0.1 && u <= 0.9 && v >= 0.1 && v <= 0.9;
  if (shape == "diamond") return std::abs(u - 0.5) + std::abs(v - 0.5) <= 0.5;
  if (shape == "cross") return std::abs(u - 0.5) <= 0.17 || std::abs(v - 0.5) <= 0.17;
  throw ArgumentError("unknown shape '" + shape + "'");
}

const std::string& pick(const std::vector<std::string>& options, Rng& rng) {
  return options[uniform_index(rng, options.size())];
}

}  // namespace

const std::vector<std::string>& known_shapes() {
  static const std::vector<std::string> s{"circle", "triangle", "square", "diamond", "cross"};
  return s;
}

const std::vector<std::string>& known_backgrounds() {
  static const std::vector<std::string> b{"water", "grass", "sand", "sky"};
  return b;
}

std::array<double, 3> color_rgb(const std::string& color) {
  if (color == "red") return {0.85, 0.15, 0.15};
  if (color == "yellow") return {0.92, 0.85, 0.2};
  if (color == "white") return {0.93, 0.93, 0.93};
  if (color == "orange") return {0.95, 0.55, 0.1};
  if (color == "purple") return {0.55, 0.2, 0.65};
  if (color == "black") return {0.08, 0.08, 0.08};
  throw ArgumentError("unknown color '" + color + "'");
}

void SyntheticSpec::validate() const {
  if (shapes.size() < 2) throw ArgumentError("synthetic spec: need at least two shape classes");
  if (backgrounds.size() < shapes.size())
    throw ArgumentError("synthetic spec: need at least one background per class");
  if (colors.empty()) throw ArgumentError("synthetic spec: need at least one color");
  for (const auto& s : shapes)
    if (std::find(known_shapes().begin(), known_shapes().end(), s) == known_shapes().end())
      throw ArgumentError("synthetic spec: unknown shape '" + s + "'");
  for (const auto& b : backgrounds)
    if (std::find(known_backgrounds().begin(), known_backgrounds().end(), b) == known_backgrounds().end())
      throw ArgumentError("synthetic spec: unknown background '" + b + "'");
  for (const auto& c : colors) color_rgb(c);
  if (image_size < 8 || shape_min < 3 || shape_min > shape_max || shape_max > image_size)
    throw ArgumentError("synthetic spec: impossible shape/image sizes");
  for (const auto& sp : splits) {
    if (sp.name.empty() || sp.count < 0)
      throw ArgumentError("synthetic spec: split needs a name and a nonnegative count");
    if (!(sp.correlation >= 0.0 && sp.correlation <= 1.0))
      throw ArgumentError("synthetic spec: correlation must be within [0, 1]");
    if (!(sp.empty_fraction >= 0.0 && sp.empty_fraction <= 1.0))
      throw ArgumentError("synthetic spec: empty_fraction must be within [0, 1]");
  }
  for (size_t i = 0; i < splits.size(); ++i)
    for (size_t j = i + 1; j < splits.size(); ++j)
      if (splits[i].name == splits[j].name) throw ArgumentError("synthetic spec: duplicate split name");
}

nlohmann::json SyntheticSpec::to_json() const {
  nlohmann::json sp = nlohmann::json::array();
  for (const auto& s : splits)
    sp.push_back({{"name", s.name}, {"count", s.count}, {"correlation", s.correlation},
                  {"empty_fraction", s.empty_fraction}});
  return {{"shapes", shapes},         {"backgrounds", backgrounds},     {"colors", colors},
          {"splits", sp},             {"image_size", image_size},       {"shape_min", shape_min},
          {"shape_max", shape_max},   {"texture_noise", texture_noise}, {"synonym_rate", synonym_rate},
          {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  s.shapes = j.value("shapes", s.shapes);
  s.backgrounds = j.value("backgrounds", s.backgrounds);
  s.colors = j.value("colors", s.colors);
  s.image_size = j.value("image_size", s.image_size);
  s.shape_min = j.value("shape_min", s.shape_min);
  s.shape_max = j.value("shape_max", s.shape_max);
  s.texture_noise = j.value("texture_noise", s.texture_noise);
  s.synonym_rate = j.value("synonym_rate", s.synonym_rate);
  s.seed = j.value("seed", s.seed);
  if (j.contains("splits"))
    for (const auto& e : j.at("splits"))
      s.splits.push_back(SplitSpec{e.at("name").get<std::string>(), e.at("count").get<int>(),
                                   e.value("correlation", 0.5), e.value("empty_fraction", 0.0)});
  return s;
}

ImageTensor render_background(const std::string& background, int size, double noise, Rng& rng) {
  ImageTensor img(size, size, 3);
  std::array<double, 3> base;
  if (background == "water") base = {0.12, 0.32, 0.72};
  else if (background == "grass") base = {0.22, 0.55, 0.18};
  else if (background == "sand") base = {0.82, 0.72, 0.48};
  else if (background == "sky") base = {0.55, 0.75, 0.95};
  else throw ArgumentError("unknown background '" + background + "'");
  const double phase = uniform01(rng) * kTwoPi;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double tex = 0.0;
      if (background == "water") tex = 0.1 * std::sin(kTwoPi * y / 6.0 + phase + 0.6 * std::sin(x / 4.0));
      else if (background == "grass") tex = 0.1 * std::sin(kTwoPi * x / 3.0 + phase) * (0.6 + 0.4 * std::sin(y / 3.0));
      else if (background == "sky") tex = 0.15 * (static_cast<double>(y) / size - 0.5);
      const double shared = tex + (uniform01(rng) * 2.0 - 1.0) * noise;
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = std::clamp(base[static_cast<size_t>(c)] + shared, 0.0, 1.0);
    }
  return img;
}

int draw_shape(ImageTensor& img, const std::string& shape, const std::string& color, const BBox& bbox) {
  const auto rgb = color_rgb(color);
  int painted = 0;
  for (int y = std::max(0, bbox.y0); y < std::min(img.height(), bbox.y1); ++y)
    for (int x = std::max(0, bbox.x0); x < std::min(img.width(), bbox.x1); ++x) {
      const double u = (x + 0.5 - bbox.x0) / bbox.width();
      const double v = (y + 0.5 - bbox.y0) / bbox.height();
      if (!in_shape(shape, u, v)) continue;
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[static_cast<size_t>(c)];
      ++painted;
    }
  return painted;
}

std::string caption_for(const std::string& shape, const std::string& color, const std::string& background,
                        double synonym_rate, Rng& rng) {
  const std::string verb = uniform01(rng) < synonym_rate ? "rests" : "sits";
  const std::string size = uniform01(rng) < synonym_rate ? "little" : "small";
  return "a " + color + " " + shape + " on " + background + " . the " + shape + " is " + color +
         " . the " + shape + " " + verb + " on the " + background + " . a " + size + " " + shape +
         " in the image .";
}

std::string empty_caption_for(const std::string& background) {
  return "a plain " + background + " scene . only " + background + " in the image . the " + background +
         " is empty . nothing on the " + background + " . just " + background + " here .";
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticDataset ds;
  ds.manifest.class_names = spec.shapes;
  ds.manifest.background_names = spec.backgrounds;
  const int n_cls = static_cast<int>(spec.shapes.size());
  const int n_bg = static_cast<int>(spec.backgrounds.size());
  for (size_t si = 0; si < spec.splits.size(); ++si) {
    const auto& sp = spec.splits[si];
    Rng rng(derive_seed(spec.seed, si));
    for (int i = 0; i < sp.count; ++i) {
      const bool empty = uniform01(rng) < sp.empty_fraction;
      const int label = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(n_cls)));
      const bool matched = uniform01(rng) < sp.correlation;
      int bg = label;
      if (!matched) {
        bg = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(n_bg - 1)));
        if (bg >= label) ++bg;
      }
      const std::string& color = pick(spec.colors, rng);
      const int size = spec.shape_min + static_cast<int>(uniform_index(
                                            rng, static_cast<std::uint64_t>(spec.shape_max - spec.shape_min + 1)));
      const int x0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(spec.image_size - size + 1)));
      const int y0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(spec.image_size - size + 1)));
      const BBox box{x0, y0, x0 + size, y0 + size};

      ImageTensor img = render_background(spec.backgrounds[static_cast<size_t>(bg)], spec.image_size,
                                          spec.texture_noise, rng);
      ManifestRecord rec;
      char idbuf[64];
      std::snprintf(idbuf, sizeof(idbuf), "%s-%06d", sp.name.c_str(), i);
      rec.id = idbuf;
      rec.image = "images/" + sp.name + "/" + rec.id + ".ppm";
      rec.split = sp.name;
      rec.background = bg;
      if (empty) {
        rec.label = -1;
        rec.caption = empty_caption_for(spec.backgrounds[static_cast<size_t>(bg)]);
      } else {
        draw_shape(img, spec.shapes[static_cast<size_t>(label)], color, box);
        rec.label = label;
        rec.subgroup = label * n_bg + bg;
        rec.foreground = box;
        rec.caption = caption_for(spec.shapes[static_cast<size_t>(label)], color,
                                  spec.backgrounds[static_cast<size_t>(bg)], spec.synonym_rate, rng);
      }
      quantize8(img);
      ds.manifest.records.push_back(std::move(rec));
      ds.images.push_back(std::move(img));
    }
  }
  return ds;
}

ImageTensor occlude_foreground(const ImageTensor& image, const BBox& bbox, const BBox& region) {
  if (bbox.empty()) return image;
  auto inside = [&](const BBox& b) {
    return b.x0 >= 0 && b.y0 >= 0 && b.x1 <= image.width() && b.y1 <= image.height();
  };
  if (!inside(bbox)) throw ArgumentError("occlude_foreground: bbox outside the image");
  if (region.empty() || !inside(region)) throw ArgumentError("occlude_foreground: invalid background region");
  if (bbox.intersects(region)) throw ArgumentError("occlude_foreground: background region overlaps the bbox");
  ImageTensor out = image;
  for (int y = bbox.y0; y < bbox.y1; ++y)
    for (int x = bbox.x0; x < bbox.x1; ++x) {
      const int sy = region.y0 + (y - bbox.y0) % region.height();
      const int sx = region.x0 + (x - bbox.x0) % region.width();
      for (int c = 0; c < image.channels(); ++c) out.at(y, x, c) = image.at(sy, sx, c);
    }
  return out;
}

BBox background_region_for(const BBox& bbox, int height, int width) {
  // Candidate strips: left, right, above, below.
  const BBox strips[4] = {{0, 0, bbox.x0, height},
                          {bbox.x1, 0, width, height},
                          {0, 0, width, bbox.y0},
                          {0, bbox.y1, width, height}};
  BBox best{};
  long best_area = 0;
  for (const auto& s : strips) {
    if (s.empty()) continue;
    const int w = std::min(s.width(), bbox.width());
    const int h = std::min(s.height(), bbox.height());
    const long area = static_cast<long>(w) * h;
    if (area > best_area) {
      best_area = area;
      best = BBox{s.x0, s.y0, s.x0 + w, s.y0 + h};
    }
  }
  if (best.empty()) throw ArgumentError("background_region_for: no background remains outside the bbox");
  return best;
}

}  // namespace vislex
