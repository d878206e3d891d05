#include "fseg/annotations.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fseg::annot {

namespace {

using Json = nlohmann::ordered_json;

struct DiskOffsets {
  std::vector<Coord> offsets;
};

DiskOffsets disk_offsets(int radius) {
  DiskOffsets disk;
  const int r2 = radius * radius;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dx * dx + dy * dy <= r2) disk.offsets.push_back({dx, dy});
  return disk;
}

void validate_annotation(const SparseAnnotation& a, int height, int width,
                         int num_classes) {
  if (a.class_id < 0 || a.class_id >= num_classes)
    throw ValidationError("annotation: class_id " + std::to_string(a.class_id) +
                          " outside [0, " + std::to_string(num_classes) + ")");
  const size_t n = a.coords.size();
  if (a.kind == Kind::kPoint && n != 1)
    throw ValidationError("annotation: point needs exactly 1 coordinate");
  if (a.kind == Kind::kLine && n < 2)
    throw ValidationError("annotation: line needs at least 2 coordinates");
  if (a.kind == Kind::kPolygon && n < 3)
    throw ValidationError("annotation: polygon needs at least 3 coordinates");
  for (const Coord& c : a.coords)
    if (c.x < 0 || c.x >= width || c.y < 0 || c.y >= height)
      throw ValidationError("annotation: coordinate (" + std::to_string(c.x) +
                            "," + std::to_string(c.y) + ") outside " +
                            std::to_string(width) + "x" + std::to_string(height));
}

// Even-odd interior plus exact boundary points. Scanline crossings use the
// half-open vertex rule and exact rational comparison, so the result matches
// a brute-force integer point-in-polygon check bit for bit.
void fill_polygon(const std::vector<Coord>& poly, int height, int width,
                  std::vector<uint8_t>& mask) {
  const size_t n = poly.size();
  int min_x = poly[0].x, max_x = poly[0].x, min_y = poly[0].y, max_y = poly[0].y;
  for (const Coord& c : poly) {
    min_x = std::min(min_x, c.x);
    max_x = std::max(max_x, c.x);
    min_y = std::min(min_y, c.y);
    max_y = std::max(max_y, c.y);
  }
  min_x = std::max(min_x, 0);
  min_y = std::max(min_y, 0);
  max_x = std::min(max_x, width - 1);
  max_y = std::min(max_y, height - 1);

  for (int y = min_y; y <= max_y; ++y) {
    // Crossings at this scanline as exact fractions num/den with den > 0.
    std::vector<std::pair<int64_t, int64_t>> crossings;
    for (size_t i = 0; i < n; ++i) {
      const Coord a = poly[i];
      const Coord b = poly[(i + 1) % n];
      if (a.y == b.y) continue;
      const int lo = std::min(a.y, b.y), hi = std::max(a.y, b.y);
      if (y < lo || y >= hi) continue;  // half-open: top vertex excluded
      int64_t num = static_cast<int64_t>(a.x) * (b.y - a.y) +
                    static_cast<int64_t>(y - a.y) * (b.x - a.x);
      int64_t den = b.y - a.y;
      if (den < 0) {
        num = -num;
        den = -den;
      }
      crossings.emplace_back(num, den);
    }
    for (int x = min_x; x <= max_x; ++x) {
      int parity = 0;
      for (const auto& [num, den] : crossings)
        if (num < static_cast<int64_t>(x) * den) ++parity;
      if (parity & 1) mask[static_cast<size_t>(y) * width + x] = 1;
    }
  }

  // Boundary: exact integer points of each closed edge.
  for (size_t i = 0; i < n; ++i) {
    const Coord a = poly[i];
    const Coord b = poly[(i + 1) % n];
    const int dx = b.x - a.x, dy = b.y - a.y;
    const int g = std::max(std::gcd(std::abs(dx), std::abs(dy)), 1);
    for (int k = 0; k <= g; ++k) {
      const int px = a.x + k * dx / g;
      const int py = a.y + k * dy / g;
      if (px >= 0 && px < width && py >= 0 && py < height)
        mask[static_cast<size_t>(py) * width + px] = 1;
    }
  }
}

}  // namespace

std::string kind_name(Kind kind) {
  switch (kind) {
    case Kind::kPoint: return "point";
    case Kind::kLine: return "line";
    case Kind::kPolygon: return "polygon";
  }
  throw ValidationError("annotation: unknown kind");
}

Kind kind_from_name(const std::string& name) {
  if (name == "point") return Kind::kPoint;
  if (name == "line") return Kind::kLine;
  if (name == "polygon") return Kind::kPolygon;
  throw ValidationError("annotation: unknown kind \"" + name + "\"");
}

std::vector<Coord> bresenham(Coord a, Coord b) {
  std::vector<Coord> points;
  const int dx = std::abs(b.x - a.x), dy = -std::abs(b.y - a.y);
  const int sx = a.x < b.x ? 1 : -1, sy = a.y < b.y ? 1 : -1;
  int err = dx + dy;
  int x = a.x, y = a.y;
  while (true) {
    points.push_back({x, y});
    if (x == b.x && y == b.y) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y += sy;
    }
  }
  return points;
}

std::vector<uint8_t> dilate_disk(const std::vector<uint8_t>& mask, int height,
                                 int width, int radius) {
  if (radius < 0) throw ValidationError("dilate_disk: radius must be >= 0");
  if (static_cast<size_t>(height) * width != mask.size())
    throw ValidationError("dilate_disk: mask size does not match dims");
  if (radius == 0) return mask;

  const DiskOffsets disk = disk_offsets(radius);
  std::vector<uint8_t> out(mask.size(), 0);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (!mask[static_cast<size_t>(y) * width + x]) continue;
      for (const Coord& d : disk.offsets) {
        const int xx = x + d.x, yy = y + d.y;
        if (xx >= 0 && xx < width && yy >= 0 && yy < height)
          out[static_cast<size_t>(yy) * width + xx] = 1;
      }
    }
  }
  return out;
}

RasterizeResult rasterize(const std::vector<SparseAnnotation>& annotations,
                          int height, int width, int num_classes,
                          int dilation_radius) {
  if (height <= 0 || width <= 0)
    throw ValidationError("rasterize: raster dims must be positive");
  if (num_classes < 1 || num_classes > LabelMap::kMaxClasses)
    throw ValidationError("rasterize: num_classes must be in [1, 254]");
  if (dilation_radius < 0)
    throw ValidationError("rasterize: dilation radius must be >= 0");

  RasterizeResult result;
  result.labels = LabelMap(height, width);
  std::vector<uint8_t> mask(static_cast<size_t>(height) * width);

  for (const SparseAnnotation& a : annotations) {
    validate_annotation(a, height, width, num_classes);
    std::fill(mask.begin(), mask.end(), 0);
    switch (a.kind) {
      case Kind::kPoint:
        mask[static_cast<size_t>(a.coords[0].y) * width + a.coords[0].x] = 1;
        mask = dilate_disk(mask, height, width, dilation_radius);
        break;
      case Kind::kLine:
        for (size_t i = 0; i + 1 < a.coords.size(); ++i)
          for (const Coord& p : bresenham(a.coords[i], a.coords[i + 1]))
            mask[static_cast<size_t>(p.y) * width + p.x] = 1;
        mask = dilate_disk(mask, height, width, dilation_radius);
        break;
      case Kind::kPolygon:
        fill_polygon(a.coords, height, width, mask);
        break;
    }
    const uint8_t cls = static_cast<uint8_t>(a.class_id);
    for (size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) continue;
      const uint8_t prev = result.labels.values[i];
      if (prev != LabelMap::kUnlabeled && prev != cls) ++result.conflicts;
      result.labels.values[i] = cls;
    }
  }
  return result;
}

LabelCounts count_labeled(const LabelMap& map, int num_classes) {
  LabelCounts counts;
  counts.per_class.assign(static_cast<size_t>(num_classes), 0);
  for (uint8_t v : map.values) {
    if (v == LabelMap::kUnlabeled) continue;
    if (v >= num_classes)
      throw ValidationError("count_labeled: label " + std::to_string(v) +
                            " outside [0, " + std::to_string(num_classes) + ")");
    ++counts.per_class[v];
    ++counts.total;
  }
  return counts;
}

std::string annotations_to_json(const std::vector<SparseAnnotation>& annotations) {
  Json out = Json::array();
  for (const SparseAnnotation& a : annotations) {
    Json entry;
    entry["kind"] = kind_name(a.kind);
    entry["class_id"] = a.class_id;
    Json coords = Json::array();
    for (const Coord& c : a.coords) coords.push_back(Json::array({c.x, c.y}));
    entry["coords"] = std::move(coords);
    out.push_back(std::move(entry));
  }
  return out.dump(2) + "\n";
}

std::vector<SparseAnnotation> annotations_from_json(const std::string& text) {
  Json parsed;
  try {
    parsed = Json::parse(text);
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("annotations: invalid JSON: ") + e.what());
  }
  if (!parsed.is_array())
    throw ValidationError("annotations: top-level JSON value must be an array");

  std::vector<SparseAnnotation> annotations;
  for (const Json& entry : parsed) {
    if (!entry.is_object())
      throw ValidationError("annotations: entries must be objects");
    for (const auto& [key, _] : entry.items())
      if (key != "kind" && key != "class_id" && key != "coords")
        throw ValidationError("annotations: unknown key \"" + key + "\"");
    if (!entry.contains("kind") || !entry.contains("class_id") ||
        !entry.contains("coords"))
      throw ValidationError("annotations: entry missing kind/class_id/coords");

    SparseAnnotation a;
    a.kind = kind_from_name(entry["kind"].get<std::string>());
    if (!entry["class_id"].is_number_integer())
      throw ValidationError("annotations: class_id must be an integer");
    a.class_id = entry["class_id"].get<int>();
    for (const Json& pair : entry["coords"]) {
      if (!pair.is_array() || pair.size() != 2 ||
          !pair[0].is_number_integer() || !pair[1].is_number_integer())
        throw ValidationError("annotations: coords must be [x,y] integer pairs");
      a.coords.push_back({pair[0].get<int>(), pair[1].get<int>()});
    }
    annotations.push_back(std::move(a));
  }
  return annotations;
}

void save_annotations(const std::string& path,
                      const std::vector<SparseAnnotation>& annotations) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("annotations: cannot create " + path);
  out << annotations_to_json(annotations);
  if (!out) throw Error("annotations: write failed for " + path);
}

std::vector<SparseAnnotation> load_annotations(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("annotations: cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return annotations_from_json(buffer.str());
}

}  // namespace fseg::annot
