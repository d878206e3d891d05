#pragma once

#include <string>
#include <vector>

#include "fseg/image.hpp"

namespace fseg::annot {

enum class Kind { kPoint, kLine, kPolygon };

std::string kind_name(Kind kind);
Kind kind_from_name(const std::string& name);

struct Coord {
  int x = 0;
  int y = 0;
  bool operator==(const Coord&) const = default;
};

// A geometric scribble primitive: a single pixel, a polyline, or a closed
// polygon, all with integer pixel coordinates.
struct SparseAnnotation {
  Kind kind = Kind::kPoint;
  int class_id = 0;
  std::vector<Coord> coords;
};

struct RasterizeResult {
  LabelMap labels;
  // Pixels a later annotation overwrote with a different class id.
  int64_t conflicts = 0;
};

// Burns annotations into a label map. Points and lines are dilated with the
// lattice disk {dx^2+dy^2 <= r^2}; polygons are filled (even-odd rule,
// boundary pixels included) and never dilated. Later annotations win
// conflicts.
RasterizeResult rasterize(const std::vector<SparseAnnotation>& annotations,
                          int height, int width, int num_classes,
                          int dilation_radius = 3);

struct LabelCounts {
  std::vector<int64_t> per_class;
  int64_t total = 0;
};

// Counts labeled pixels per class; the unlabeled value never counts.
LabelCounts count_labeled(const LabelMap& map, int num_classes);

// Morphological dilation of a binary mask by the lattice disk of `radius`,
// clipped at the borders. Radius 0 is the identity.
std::vector<uint8_t> dilate_disk(const std::vector<uint8_t>& mask, int height,
                                 int width, int radius);

// 8-connected Bresenham segment, endpoints included.
std::vector<Coord> bresenham(Coord a, Coord b);

// Annotation JSON: array of {"kind": ..., "class_id": ..., "coords": [[x,y],...]}.
std::string annotations_to_json(const std::vector<SparseAnnotation>& annotations);
std::vector<SparseAnnotation> annotations_from_json(const std::string& text);
void save_annotations(const std::string& path, const std::vector<SparseAnnotation>& annotations);
std::vector<SparseAnnotation> load_annotations(const std::string& path);

}  // namespace fseg::annot
