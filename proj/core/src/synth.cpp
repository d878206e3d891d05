#include "fseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

#include "fseg/rng.hpp"

namespace fseg::synth {

namespace {

constexpr uint64_t kRetrySalt = 0x9e3779b97f4a7c15ull;

struct Component {
  std::vector<int> pixels;  // linear indices, discovery order
  double cx = 0.0, cy = 0.0;
};

std::vector<Component> connected_components(const LabelMap& labels, uint8_t cls) {
  const int h = labels.height, w = labels.width;
  std::vector<uint8_t> seen(labels.values.size(), 0);
  std::vector<Component> components;
  for (int start = 0; start < h * w; ++start) {
    if (seen[static_cast<size_t>(start)] ||
        labels.values[static_cast<size_t>(start)] != cls)
      continue;
    Component comp;
    std::queue<int> frontier;
    frontier.push(start);
    seen[static_cast<size_t>(start)] = 1;
    while (!frontier.empty()) {
      const int p = frontier.front();
      frontier.pop();
      comp.pixels.push_back(p);
      const int y = p / w, x = p % w;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const int q = yy * w + xx;
          if (seen[static_cast<size_t>(q)] ||
              labels.values[static_cast<size_t>(q)] != cls)
            continue;
          seen[static_cast<size_t>(q)] = 1;
          frontier.push(q);
        }
      }
    }
    for (int p : comp.pixels) {
      comp.cx += p % w;
      comp.cy += p / w;
    }
    comp.cx /= static_cast<double>(comp.pixels.size());
    comp.cy /= static_cast<double>(comp.pixels.size());
    components.push_back(std::move(comp));
  }
  return components;
}

// Largest first, then greedy farthest-point over centroids.
std::vector<int> spread_selection(const std::vector<Component>& components,
                                  int want) {
  const int n = static_cast<int>(components.size());
  std::vector<int> selected;
  if (n == 0 || want <= 0) return selected;

  int first = 0;
  for (int i = 1; i < n; ++i)
    if (components[static_cast<size_t>(i)].pixels.size() >
        components[static_cast<size_t>(first)].pixels.size())
      first = i;
  selected.push_back(first);

  std::vector<uint8_t> used(static_cast<size_t>(n), 0);
  used[static_cast<size_t>(first)] = 1;
  while (static_cast<int>(selected.size()) < std::min(want, n)) {
    int best = -1;
    double best_dist = -1.0;
    size_t best_area = 0;
    for (int i = 0; i < n; ++i) {
      if (used[static_cast<size_t>(i)]) continue;
      double min_d = std::numeric_limits<double>::max();
      for (int s : selected) {
        const double dx = components[static_cast<size_t>(i)].cx -
                          components[static_cast<size_t>(s)].cx;
        const double dy = components[static_cast<size_t>(i)].cy -
                          components[static_cast<size_t>(s)].cy;
        min_d = std::min(min_d, dx * dx + dy * dy);
      }
      const size_t area = components[static_cast<size_t>(i)].pixels.size();
      if (min_d > best_dist || (min_d == best_dist && area > best_area)) {
        best = i;
        best_dist = min_d;
        best_area = area;
      }
    }
    selected.push_back(best);
    used[static_cast<size_t>(best)] = 1;
  }
  return selected;
}

// --- exact EDT (squared), off-image treated as zero --------------------------

void edt_envelope(const std::vector<double>& f, int n, std::vector<double>& d,
                  std::vector<int>& v, std::vector<double>& z) {
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s;
    while (true) {
      const int p = v[static_cast<size_t>(k)];
      s = ((f[static_cast<size_t>(q)] + q * q) - (f[static_cast<size_t>(p)] + p * p)) /
          (2.0 * (q - p));
      if (s > z[static_cast<size_t>(k)]) break;
      --k;
    }
    ++k;
    v[static_cast<size_t>(k)] = q;
    z[static_cast<size_t>(k)] = s;
    z[static_cast<size_t>(k) + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<size_t>(k) + 1] < q) ++k;
    const int p = v[static_cast<size_t>(k)];
    d[static_cast<size_t>(q)] = (q - p) * (q - p) + f[static_cast<size_t>(p)];
  }
}

}  // namespace

std::vector<int32_t> distance_transform_sq(const std::vector<uint8_t>& mask,
                                           int height, int width) {
  if (static_cast<size_t>(height) * width != mask.size())
    throw ValidationError("distance_transform: mask size does not match dims");
  // Pad with a zero ring so the image border acts as background.
  const int ph = height + 2, pw = width + 2;
  const double inf = 1e12;
  std::vector<double> grid(static_cast<size_t>(ph) * pw, 0.0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      grid[static_cast<size_t>(y + 1) * pw + (x + 1)] =
          mask[static_cast<size_t>(y) * width + x] ? inf : 0.0;

  const int n_max = std::max(ph, pw);
  std::vector<double> f(static_cast<size_t>(n_max)), d(static_cast<size_t>(n_max));
  std::vector<int> v(static_cast<size_t>(n_max));
  std::vector<double> z(static_cast<size_t>(n_max) + 1);

  for (int x = 0; x < pw; ++x) {  // columns
    for (int y = 0; y < ph; ++y) f[static_cast<size_t>(y)] = grid[static_cast<size_t>(y) * pw + x];
    edt_envelope(f, ph, d, v, z);
    for (int y = 0; y < ph; ++y) grid[static_cast<size_t>(y) * pw + x] = d[static_cast<size_t>(y)];
  }
  for (int y = 0; y < ph; ++y) {  // rows
    for (int x = 0; x < pw; ++x) f[static_cast<size_t>(x)] = grid[static_cast<size_t>(y) * pw + x];
    edt_envelope(f, pw, d, v, z);
    for (int x = 0; x < pw; ++x) grid[static_cast<size_t>(y) * pw + x] = d[static_cast<size_t>(x)];
  }

  std::vector<int32_t> out(mask.size());
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      out[static_cast<size_t>(y) * width + x] = static_cast<int32_t>(
          std::llround(grid[static_cast<size_t>(y + 1) * pw + (x + 1)]));
  return out;
}

void SceneSpec::validate() const {
  if (num_classes < 2 || num_classes > 12)
    throw ValidationError("scene: num_classes must be in [2, 12]");
  if (height < 16 || width < 16)
    throw ValidationError("scene: dims must be at least 16x16");
  if (noise_sigma < 0) throw ValidationError("scene: noise_sigma must be >= 0");
  if (min_region < 1) throw ValidationError("scene: min_region must be >= 1");
}

Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  const int h = spec.height, w = spec.width, k = spec.num_classes;
  const int car_class = k - 1;  // stamped as scattered rectangles

  for (int attempt = 0; attempt < 32; ++attempt) {
    Rng rng(spec.seed + kRetrySalt * static_cast<uint64_t>(attempt));

    // Class mean colors, pairwise separated; the threshold relaxes if the
    // palette gets crowded.
    std::vector<std::array<double, 3>> colors;
    double min_dist = 70.0;
    int tries = 0;
    while (static_cast<int>(colors.size()) < k) {
      std::array<double, 3> c = {rng.uniform(20.0, 235.0), rng.uniform(20.0, 235.0),
                                 rng.uniform(20.0, 235.0)};
      bool ok = true;
      for (const auto& other : colors) {
        const double d = std::sqrt((c[0] - other[0]) * (c[0] - other[0]) +
                                   (c[1] - other[1]) * (c[1] - other[1]) +
                                   (c[2] - other[2]) * (c[2] - other[2]));
        if (d < min_dist) {
          ok = false;
          break;
        }
      }
      if (ok) colors.push_back(c);
      if (++tries > 400) {
        min_dist *= 0.8;
        tries = 0;
      }
    }

    // Voronoi sites for the area classes (everything but the car class).
    const int area_classes = k - 1;
    const int n_sites =
        std::max(2 * area_classes, std::min(40, h * w / 800));
    std::vector<int> site_x(static_cast<size_t>(n_sites));
    std::vector<int> site_y(static_cast<size_t>(n_sites));
    std::vector<uint8_t> site_class(static_cast<size_t>(n_sites));
    for (int s = 0; s < n_sites; ++s) {
      site_x[static_cast<size_t>(s)] = rng.uniform_int(w);
      site_y[static_cast<size_t>(s)] = rng.uniform_int(h);
      site_class[static_cast<size_t>(s)] =
          s < area_classes ? static_cast<uint8_t>(s)
                           : static_cast<uint8_t>(rng.uniform_int(area_classes));
    }

    LabelMap labels(h, w);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        int best = 0;
        int64_t best_d = std::numeric_limits<int64_t>::max();
        for (int s = 0; s < n_sites; ++s) {
          const int64_t dx = x - site_x[static_cast<size_t>(s)];
          const int64_t dy = y - site_y[static_cast<size_t>(s)];
          const int64_t d = dx * dx + dy * dy;
          if (d < best_d) {
            best_d = d;
            best = s;
          }
        }
        labels.at(y, x) = site_class[static_cast<size_t>(best)];
      }
    }

    // Small-object class: scattered rectangles, fully inside the frame.
    const int n_rects = std::max(4, h * w / 2048);
    for (int r = 0; r < n_rects; ++r) {
      const int rw = 3 + rng.uniform_int(4);
      const int rh = 3 + rng.uniform_int(4);
      const int x0 = rng.uniform_int(std::max(1, w - rw));
      const int y0 = rng.uniform_int(std::max(1, h - rh));
      for (int y = y0; y < y0 + rh; ++y)
        for (int x = x0; x < x0 + rw; ++x)
          labels.at(y, x) = static_cast<uint8_t>(car_class);
    }

    // Color + noise, pixel order fixed for reproducibility.
    ImageU8 image(h, w, 3);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const auto& mean = colors[labels.at(y, x)];
        for (int c = 0; c < 3; ++c) {
          double value = mean[static_cast<size_t>(c)];
          if (spec.noise_sigma > 0) value += spec.noise_sigma * rng.normal();
          image.at(y, x, c) =
              static_cast<uint8_t>(std::clamp(std::lround(value), 0l, 255l));
        }
      }
    }

    std::vector<int64_t> counts(static_cast<size_t>(k), 0);
    for (uint8_t v : labels.values) ++counts[v];
    const bool ok = std::all_of(counts.begin(), counts.end(), [&](int64_t n) {
      return n >= spec.min_region;
    });
    if (ok) return Scene{std::move(image), std::move(labels)};
  }
  throw ValidationError(
      "scene: constraints unsatisfiable after 32 attempts; lower min_region");
}

int ScribblePolicy::resolved_objects_per_class() const {
  if (objects_per_class > 0) return objects_per_class;
  switch (level) {
    case annot::Kind::kPoint: return 7;
    case annot::Kind::kLine: return 5;
    case annot::Kind::kPolygon: return 3;
  }
  throw ValidationError("scribble: unknown level");
}

void ScribblePolicy::validate() const {
  if (objects_per_class == 0 || objects_per_class < -1)
    throw ValidationError("scribble: objects_per_class must be positive (or -1 for default)");
  if (boundary_margin < 0)
    throw ValidationError("scribble: boundary_margin must be >= 0");
}

namespace {

// Dilated points and lines must stay inside the component; their placement
// region is eroded by margin plus the default dilation radius.
constexpr int kPlacementDilation = 3;

annot::SparseAnnotation point_annotation(const std::vector<int32_t>& dt, int h,
                                         int w, int cls) {
  int best = 0;
  for (int p = 1; p < h * w; ++p)
    if (dt[static_cast<size_t>(p)] > dt[static_cast<size_t>(best)]) best = p;
  annot::SparseAnnotation a;
  a.kind = annot::Kind::kPoint;
  a.class_id = cls;
  a.coords = {{best % w, best / w}};
  return a;
}

std::vector<int> threshold_pixels(const std::vector<int32_t>& dt, int min_dist) {
  std::vector<int> out;
  const int32_t limit = static_cast<int32_t>(min_dist) * min_dist;
  for (size_t p = 0; p < dt.size(); ++p)
    if (dt[p] > limit) out.push_back(static_cast<int>(p));
  return out;
}

// Moore boundary tracing of the region containing `start` (the region's
// first pixel in row-major order). Returns the closed outer contour.
std::vector<annot::Coord> trace_boundary(const std::vector<uint8_t>& mask,
                                         int h, int w, int start) {
  const auto inside = [&](int x, int y) {
    return x >= 0 && x < w && y >= 0 && y < h &&
           mask[static_cast<size_t>(y) * w + x] != 0;
  };
  // clockwise Moore neighborhood starting west
  static constexpr int dx8[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
  static constexpr int dy8[8] = {0, -1, -1, -1, 0, 1, 1, 1};

  const int sx = start % w, sy = start / w;
  std::vector<annot::Coord> contour;
  contour.push_back({sx, sy});

  int cx = sx, cy = sy;
  int backtrack = 0;  // came from the west (row-major scan guarantees it)
  const size_t guard = mask.size() * 4 + 16;
  for (size_t step = 0; step < guard; ++step) {
    int found = -1;
    for (int i = 0; i < 8; ++i) {
      const int dir = (backtrack + 1 + i) % 8;
      const int nx = cx + dx8[dir], ny = cy + dy8[dir];
      if (inside(nx, ny)) {
        found = dir;
        break;
      }
    }
    if (found < 0) break;  // isolated pixel
    cx += dx8[found];
    cy += dy8[found];
    if (cx == sx && cy == sy) break;
    contour.push_back({cx, cy});
    backtrack = (found + 4) % 8;
  }
  return contour;
}

double point_segment_dist(annot::Coord p, annot::Coord a, annot::Coord b) {
  const double abx = b.x - a.x, aby = b.y - a.y;
  const double apx = p.x - a.x, apy = p.y - a.y;
  const double len_sq = abx * abx + aby * aby;
  double t = len_sq > 0 ? (apx * abx + apy * aby) / len_sq : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = apx - t * abx, dy = apy - t * aby;
  return std::sqrt(dx * dx + dy * dy);
}

void douglas_peucker(const std::vector<annot::Coord>& points, size_t lo,
                     size_t hi, double tol, std::vector<uint8_t>& keep) {
  if (hi <= lo + 1) return;
  double worst = -1.0;
  size_t at = lo;
  for (size_t i = lo + 1; i < hi; ++i) {
    const double d = point_segment_dist(points[i], points[lo], points[hi]);
    if (d > worst) {
      worst = d;
      at = i;
    }
  }
  if (worst > tol) {
    keep[at] = 1;
    douglas_peucker(points, lo, at, tol, keep);
    douglas_peucker(points, at, hi, tol, keep);
  }
}

std::vector<annot::Coord> simplify_contour(const std::vector<annot::Coord>& contour,
                                           double tol, int max_vertices) {
  const size_t n = contour.size();
  if (static_cast<int>(n) <= max_vertices) return contour;

  // Split the closed contour at its two mutually farthest anchor points.
  size_t far_idx = n / 2;
  double far_d = -1.0;
  for (size_t i = 1; i < n; ++i) {
    const double dx = contour[i].x - contour[0].x;
    const double dy = contour[i].y - contour[0].y;
    if (dx * dx + dy * dy > far_d) {
      far_d = dx * dx + dy * dy;
      far_idx = i;
    }
  }
  std::vector<uint8_t> keep(n, 0);
  keep[0] = keep[far_idx] = 1;
  douglas_peucker(contour, 0, far_idx, tol, keep);
  std::vector<annot::Coord> wrapped(contour.begin() + static_cast<long>(far_idx),
                                    contour.end());
  wrapped.push_back(contour[0]);
  std::vector<uint8_t> keep2(wrapped.size(), 0);
  keep2.front() = keep2.back() = 1;
  douglas_peucker(wrapped, 0, wrapped.size() - 1, tol, keep2);
  for (size_t i = 1; i + 1 < wrapped.size(); ++i)
    if (keep2[i]) keep[far_idx + i] = 1;

  std::vector<annot::Coord> result;
  for (size_t i = 0; i < n; ++i)
    if (keep[i]) result.push_back(contour[i]);
  if (static_cast<int>(result.size()) > max_vertices) {
    // uniform subsample as a last resort
    std::vector<annot::Coord> sub;
    for (int i = 0; i < max_vertices; ++i)
      sub.push_back(result[static_cast<size_t>(i) * result.size() /
                           static_cast<size_t>(max_vertices)]);
    result = std::move(sub);
  }
  return result;
}

}  // namespace

ScribbleResult simulate_scribbles(const LabelMap& dense_labels,
                                  const ScribblePolicy& policy) {
  policy.validate();
  if (!dense_labels.fully_labeled())
    throw ValidationError("scribble: dense labels must be fully labeled");

  const int h = dense_labels.height, w = dense_labels.width;
  int num_classes = 0;
  for (uint8_t v : dense_labels.values) num_classes = std::max(num_classes, v + 1);

  Rng rng(policy.seed);
  const int objects = policy.resolved_objects_per_class();
  const int margin = policy.boundary_margin;
  const int degrade_area = (2 * margin + 1) * (2 * margin + 1);

  ScribbleResult result;
  for (int cls = 0; cls < num_classes; ++cls) {
    const auto components =
        connected_components(dense_labels, static_cast<uint8_t>(cls));
    if (components.empty()) {
      result.warnings.push_back("class " + std::to_string(cls) +
                                " absent from dense labels");
      continue;
    }
    for (int idx : spread_selection(components, objects)) {
      const Component& comp = components[static_cast<size_t>(idx)];
      std::vector<uint8_t> mask(static_cast<size_t>(h) * w, 0);
      for (int p : comp.pixels) mask[static_cast<size_t>(p)] = 1;
      const std::vector<int32_t> dt = distance_transform_sq(mask, h, w);

      annot::Kind level = policy.level;
      if (static_cast<int>(comp.pixels.size()) < degrade_area)
        level = annot::Kind::kPoint;

      if (level == annot::Kind::kLine) {
        const std::vector<int> interior =
            threshold_pixels(dt, margin + kPlacementDilation);
        // Stroke budget keeps line-level annotations sparse: target ~4% of
        // pixels across all classes, with a dilated line of length L
        // covering about 29 + 6.5 L pixels at radius 3.
        const double budget =
            0.04 * h * w / (static_cast<double>(num_classes) * objects);
        const double max_len = std::max(3.0, (budget - 29.0) / 6.5);
        const double max_len_sq = max_len * max_len;
        annot::SparseAnnotation line;
        line.kind = annot::Kind::kLine;
        line.class_id = cls;
        bool placed = false;
        if (interior.size() >= 2) {
          for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
            const int a = interior[static_cast<size_t>(
                rng.uniform_int(static_cast<int>(interior.size())))];
            const int b = interior[static_cast<size_t>(
                rng.uniform_int(static_cast<int>(interior.size())))];
            if (a == b) continue;
            const annot::Coord ca{a % w, a / w}, cb{b % w, b / w};
            const double len_sq =
                static_cast<double>(ca.x - cb.x) * (ca.x - cb.x) +
                static_cast<double>(ca.y - cb.y) * (ca.y - cb.y);
            if (len_sq > max_len_sq) continue;
            bool fully_interior = true;
            for (const annot::Coord& p : annot::bresenham(ca, cb)) {
              const int32_t limit = (margin + kPlacementDilation) *
                                    (margin + kPlacementDilation);
              if (dt[static_cast<size_t>(p.y) * w + p.x] <= limit) {
                fully_interior = false;
                break;
              }
            }
            if (fully_interior) {
              line.coords = {ca, cb};
              placed = true;
            }
          }
        }
        if (placed) {
          result.annotations.push_back(std::move(line));
          continue;
        }
        level = annot::Kind::kPoint;  // degrade
      }

      if (level == annot::Kind::kPolygon) {
        bool placed = false;
        const std::vector<int> eroded_pixels = threshold_pixels(dt, margin);
        if (!eroded_pixels.empty()) {
          std::vector<uint8_t> eroded(static_cast<size_t>(h) * w, 0);
          for (int p : eroded_pixels) eroded[static_cast<size_t>(p)] = 1;
          // trace the eroded region that contains its first pixel
          const std::vector<annot::Coord> contour =
              trace_boundary(eroded, h, w, eroded_pixels.front());
          if (contour.size() >= 3) {
            // keep the simplification tolerance below the margin so chords
            // cannot leave the component
            const double tol = std::max(0.5, margin - 0.5);
            std::vector<annot::Coord> poly = simplify_contour(contour, tol, 16);
            if (poly.size() >= 3) {
              annot::SparseAnnotation polygon;
              polygon.kind = annot::Kind::kPolygon;
              polygon.class_id = cls;
              polygon.coords = poly;
              // certainty check: the filled raster must stay inside the
              // component
              const auto raster = annot::rasterize({polygon}, h, w,
                                                   std::max(num_classes, cls + 1), 0);
              bool contained = true;
              for (size_t p = 0; p < raster.labels.values.size(); ++p) {
                if (raster.labels.values[p] != LabelMap::kUnlabeled &&
                    !mask[p]) {
                  contained = false;
                  break;
                }
              }
              if (contained) {
                result.annotations.push_back(std::move(polygon));
                placed = true;
              }
            }
          }
        }
        if (placed) continue;
        level = annot::Kind::kPoint;  // degrade
      }

      result.annotations.push_back(point_annotation(dt, h, w, cls));
    }
  }
  return result;
}

}  // namespace fseg::synth
