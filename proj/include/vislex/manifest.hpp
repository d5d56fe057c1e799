#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vislex/image.hpp"

namespace vislex {

inline constexpr int kManifestVersion = 1;

/// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct BBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool empty() const { return x1 <= x0 || y1 <= y0; }
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  bool intersects(const BBox& o) const {
    return !empty() && !o.empty() && x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1;
  }
  bool operator==(const BBox&) const = default;
};

struct ManifestRecord {
  std::string id;
  std::string image;                  // path relative to the manifest directory
  std::optional<ImageTensor> pixels;  // inline image, used instead of `image`
  std::string caption;
  int label = -1;  // -1: no foreground class
  std::optional<int> subgroup;
  std::string split;
  int background = -1;
  std::optional<BBox> foreground;

  bool operator==(const ManifestRecord&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::vector<std::string> class_names;
  std::vector<std::string> background_names;

  std::vector<const ManifestRecord*> split(const std::string& name) const;
  bool operator==(const DatasetManifest&) const = default;
};

/// JSON-lines: a header object with schema name and version, then one record per line.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
/// Rejects unknown schemas, duplicate ids and unresolvable image files.
DatasetManifest load_manifest(const std::filesystem::path& path);
/// Resolves a record's image (inline or file relative to `root`).
ImageTensor load_record_image(const ManifestRecord& rec, const std::filesystem::path& root);

}  // namespace vislex
