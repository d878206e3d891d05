#pragma once

#include <string>
#include <vector>

#include "fseg/annotations.hpp"
#include "fseg/image.hpp"

namespace fseg::synth {

// Deterministic stand-in for aerial imagery: a Voronoi partition with
// per-class mean colors, one class stamped as scattered small rectangles,
// plus i.i.d. Gaussian pixel noise.
struct SceneSpec {
  uint64_t seed = 0;
  int height = 128;
  int width = 128;
  int num_classes = 5;
  double noise_sigma = 8.0;
  int min_region = 24;  // pixels every class must occupy

  void validate() const;
};

struct Scene {
  ImageU8 image;          // 3-channel, 8-bit
  LabelMap dense_labels;  // fully labeled
};

Scene generate_scene(const SceneSpec& spec);

struct ScribblePolicy {
  annot::Kind level = annot::Kind::kLine;
  int objects_per_class = -1;  // -1 picks the per-level default: 7 / 5 / 3
  int boundary_margin = 2;
  uint64_t seed = 0;

  int resolved_objects_per_class() const;
  void validate() const;
};

struct ScribbleResult {
  std::vector<annot::SparseAnnotation> annotations;
  std::vector<std::string> warnings;  // classes that contributed nothing
};

// Simulates annotator scribbles on a fully labeled map: per class, up to
// objects_per_class connected components chosen by farthest-point sampling
// of centroids; points sit at the distance-transform argmax, lines connect
// two interior points, polygons trace the eroded component outline. Line and
// polygon placement keeps the dilated raster footprint inside the component.
ScribbleResult simulate_scribbles(const LabelMap& dense_labels,
                                  const ScribblePolicy& policy);

// Exact squared Euclidean distance to the nearest zero pixel (off-image
// counts as zero). Used for scribble placement; brute-force testable.
std::vector<int32_t> distance_transform_sq(const std::vector<uint8_t>& mask,
                                           int height, int width);

}  // namespace fseg::synth
