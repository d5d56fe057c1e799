#include "vislex/manifest.hpp"

#include <fstream>
#include <set>

namespace vislex {

std::vector<const ManifestRecord*> DatasetManifest::split(const std::string& name) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records)
    if (r.split == name) out.push_back(&r);
  return out;
}

namespace {

nlohmann::json record_json(const ManifestRecord& r) {
  nlohmann::json j = {{"id", r.id},   {"caption", r.caption},       {"label", r.label},
                      {"split", r.split}, {"background", r.background}};
  if (r.pixels) {
    j["pixels"] = {{"height", r.pixels->height()},
                   {"width", r.pixels->width()},
                   {"channels", r.pixels->channels()},
                   {"data", r.pixels->data()}};
  } else {
    j["image"] = r.image;
  }
  j["subgroup"] = r.subgroup ? nlohmann::json(*r.subgroup) : nlohmann::json(nullptr);
  if (r.foreground) {
    const auto& b = *r.foreground;
    j["foreground"] = {b.x0, b.y0, b.x1, b.y1};
  } else {
    j["foreground"] = nullptr;
  }
  return j;
}

ManifestRecord record_from(const nlohmann::json& j) {
  ManifestRecord r;
  r.id = j.at("id").get<std::string>();
  r.caption = j.at("caption").get<std::string>();
  r.label = j.at("label").get<int>();
  r.split = j.at("split").get<std::string>();
  r.background = j.value("background", -1);
  if (j.contains("pixels")) {
    const auto& p = j.at("pixels");
    ImageTensor img(p.at("height").get<int>(), p.at("width").get<int>(), p.at("channels").get<int>());
    img.data() = p.at("data").get<std::vector<double>>();
    img.validate();
    r.pixels = std::move(img);
  } else {
    r.image = j.at("image").get<std::string>();
  }
  if (!j.at("subgroup").is_null()) r.subgroup = j.at("subgroup").get<int>();
  if (!j.at("foreground").is_null()) {
    const auto b = j.at("foreground").get<std::vector<int>>();
    if (b.size() != 4) throw FormatError("record " + r.id + ": foreground needs 4 coordinates");
    r.foreground = BBox{b[0], b[1], b[2], b[3]};
  }
  return r;
}

}  // namespace

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write manifest " + path.string());
  nlohmann::json header = {{"schema", "vislex.manifest"},
                           {"version", kManifestVersion},
                           {"count", m.records.size()},
                           {"class_names", m.class_names},
                           {"background_names", m.background_names}};
  out << header.dump() << '\n';
  for (const auto& r : m.records) out << record_json(r).dump() << '\n';
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("manifest " + path.string() + " has no header");
  DatasetManifest m;
  size_t expected = 0;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.value("schema", "") != "vislex.manifest")
      throw FormatError("manifest " + path.string() + ": unknown schema '" + header.value("schema", "") + "'");
    if (header.value("version", 0) != kManifestVersion)
      throw FormatError("manifest " + path.string() + ": unsupported schema version " +
                        std::to_string(header.value("version", 0)));
    expected = header.at("count").get<size_t>();
    m.class_names = header.value("class_names", std::vector<std::string>{});
    m.background_names = header.value("background_names", std::vector<std::string>{});
    std::set<std::string> seen;
    size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      ManifestRecord r = record_from(nlohmann::json::parse(line));
      if (!seen.insert(r.id).second)
        throw FormatError("manifest " + path.string() + ": duplicate sample id '" + r.id + "' on line " +
                          std::to_string(lineno));
      if (!r.pixels && !std::filesystem::exists(path.parent_path() / r.image))
        throw FormatError("manifest " + path.string() + ": image '" + r.image + "' for sample '" + r.id +
                          "' not found");
      m.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  if (m.records.size() != expected)
    throw FormatError("manifest " + path.string() + ": header count " + std::to_string(expected) +
                      " but " + std::to_string(m.records.size()) + " records");
  return m;
}

ImageTensor load_record_image(const ManifestRecord& rec, const std::filesystem::path& root) {
  if (rec.pixels) return *rec.pixels;
  return read_ppm(root / rec.image);
}

}  // namespace vislex
