#include "fseg/crf.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <thread>
#include <unordered_map>

namespace fseg::crf {

namespace {

void check_dims(const ProbMap& probs, const ImageU8& image) {
  if (probs.height != image.height || probs.width != image.width)
    throw ValidationError("crf: probability map and image dims differ");
  if (image.channels != 1 && image.channels != 3)
    throw ValidationError("crf: image must have 1 or 3 channels");
  if (probs.num_classes < 2)
    throw ValidationError("crf: need at least 2 classes");
}

// --- exact-path kernel tables ----------------------------------------------

struct KernelTables {
  std::vector<double> spatial1;  // exp(-(dx^2+dy^2)/(2 t1^2)), index |dy|*W+|dx|
  std::vector<double> spatial2;  // same for t3
  std::vector<double> color;     // exp(-d2/(2 t2^2)), index = squared distance
  int width = 0;
};

KernelTables build_tables(int height, int width, int channels,
                          const CrfParams& params) {
  KernelTables t;
  t.width = width;
  t.spatial1.resize(static_cast<size_t>(height) * width);
  t.spatial2.resize(static_cast<size_t>(height) * width);
  const double inv1 = 1.0 / (2.0 * params.theta1 * params.theta1);
  const double inv3 = 1.0 / (2.0 * params.theta3 * params.theta3);
  for (int dy = 0; dy < height; ++dy) {
    for (int dx = 0; dx < width; ++dx) {
      const double d2 = static_cast<double>(dy) * dy + static_cast<double>(dx) * dx;
      t.spatial1[static_cast<size_t>(dy) * width + dx] = std::exp(-d2 * inv1);
      t.spatial2[static_cast<size_t>(dy) * width + dx] = std::exp(-d2 * inv3);
    }
  }
  const int max_color_d2 = channels * 255 * 255;
  t.color.resize(static_cast<size_t>(max_color_d2) + 1);
  const double inv2 = 1.0 / (2.0 * params.theta2 * params.theta2);
  for (int d2 = 0; d2 <= max_color_d2; ++d2)
    t.color[static_cast<size_t>(d2)] = std::exp(-d2 * inv2);
  return t;
}

int color_dist_sq(const ImageU8& image, int i, int j) {
  const uint8_t* a = image.data.data() + static_cast<size_t>(i) * image.channels;
  const uint8_t* b = image.data.data() + static_cast<size_t>(j) * image.channels;
  int d2 = 0;
  for (int c = 0; c < image.channels; ++c) {
    const int d = static_cast<int>(a[c]) - static_cast<int>(b[c]);
    d2 += d * d;
  }
  return d2;
}

// Q <- softmax(messages - unary) per pixel, computed in double.
void apply_update(const std::vector<double>& unary,
                  const std::vector<double>& messages, int n, int k,
                  std::vector<double>& q) {
  for (int i = 0; i < n; ++i) {
    const double* u = unary.data() + static_cast<size_t>(i) * k;
    const double* m = messages.data() + static_cast<size_t>(i) * k;
    double* qi = q.data() + static_cast<size_t>(i) * k;
    double best = m[0] - u[0];
    for (int l = 1; l < k; ++l) best = std::max(best, m[l] - u[l]);
    double sum = 0.0;
    for (int l = 0; l < k; ++l) {
      qi[l] = std::exp(m[l] - u[l] - best);
      sum += qi[l];
    }
    for (int l = 0; l < k; ++l) qi[l] /= sum;
  }
}

ProbMap to_probmap(const std::vector<double>& q, int height, int width, int k) {
  ProbMap out(height, width, k);
  for (size_t i = 0; i < out.p.size(); ++i) out.p[i] = static_cast<float>(q[i]);
  return out;
}

// --- sparse bilateral grid ---------------------------------------------------
//
// Downsampled grid over (x, y, color...). Splatting uses multilinear corner
// weights; blur and slice are fused into a per-pixel gather whose
// per-dimension weight is the tap array linearly interpolated at the
// continuous offset, which reproduces hat * taps * hat, the effective kernel
// of the blur-then-multilinear-slice pipeline. The tap sigma is
// variance-corrected for the two interpolation hats and scaled so the
// composite kernel integrates like the true Gaussian.
//
// Cells are theta/4. The doubly-interpolated composite is piecewise linear
// per grid cell, which caps its accuracy at max|G''| h^2/8 of the peak;
// theta/2 cells leave a 3.6% kernel error that flips near-tie pixels against
// the exact path, theta/4 brings it under 1%.

constexpr int kTapRadius = 14;
constexpr double kSigmaCells = 4.0;  // theta / (theta/4)

struct Taps {
  std::array<double, 2 * kTapRadius + 1> t{};

  Taps() {
    const double var_b = kSigmaCells * kSigmaCells - 1.0 / 3.0;
    double sum = 0.0;
    for (int d = -kTapRadius; d <= kTapRadius; ++d) {
      t[static_cast<size_t>(d + kTapRadius)] = std::exp(-d * d / (2.0 * var_b));
      sum += t[static_cast<size_t>(d + kTapRadius)];
    }
    const double target_integral =
        std::sqrt(2.0 * 3.14159265358979323846) * kSigmaCells;
    for (double& v : t) v *= target_integral / sum;
  }

  double at(int d) const {
    return std::abs(d) <= kTapRadius ? t[static_cast<size_t>(d + kTapRadius)] : 0.0;
  }

  // hat * taps evaluated at continuous offset u.
  double lerp(double u) const {
    if (u < -(kTapRadius + 1) || u > kTapRadius + 1) return 0.0;
    const double f = std::floor(u);
    const int d = static_cast<int>(f);
    return at(d) + (u - f) * (at(d + 1) - at(d));
  }
};

class BilateralGrid {
 public:
  BilateralGrid(const ImageU8& image, double theta1, double theta2)
      : n_(image.height * image.width), range_dims_(image.channels) {
    ndims_ = 2 + range_dims_;
    const double h_space = theta1 / kSigmaCells;
    const double h_range = theta2 / kSigmaCells;

    coords_.resize(static_cast<size_t>(n_) * ndims_);
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        const int i = y * image.width + x;
        double* f = coords_.data() + static_cast<size_t>(i) * ndims_;
        f[0] = x / h_space;
        f[1] = y / h_space;
        for (int c = 0; c < range_dims_; ++c)
          f[2 + c] = image.at(y, x, c) / h_range;
      }
    }

    // Occupied cells from the multilinear splat corners. Range coordinates
    // pack into one key, 10 bits per dimension.
    const int corners = 1 << ndims_;
    corner_cell_.resize(static_cast<size_t>(n_) * corners);
    corner_w_.resize(static_cast<size_t>(n_) * corners);
    std::unordered_map<uint64_t, int> cell_index;
    std::vector<int> cell_gx, cell_gy;
    std::vector<uint32_t> cell_key;
    for (int i = 0; i < n_; ++i) {
      const double* f = coords_.data() + static_cast<size_t>(i) * ndims_;
      int base[5];
      double frac[5];
      for (int d = 0; d < ndims_; ++d) {
        base[d] = static_cast<int>(std::floor(f[d]));
        frac[d] = f[d] - base[d];
      }
      for (int c = 0; c < corners; ++c) {
        double w = 1.0;
        int cell[5];
        for (int d = 0; d < ndims_; ++d) {
          const int hi = (c >> d) & 1;
          cell[d] = base[d] + hi;
          w *= hi ? frac[d] : 1.0 - frac[d];
        }
        uint32_t range_key = 0;
        for (int d = 2; d < ndims_; ++d) {
          if (cell[d] < 0 || cell[d] > 1023)
            throw ValidationError(
                "crf: bilateral grid range resolution overflow; theta2 is too "
                "small for the fast path, use mean_field_exact");
          range_key = range_key << 10 | static_cast<uint32_t>(cell[d]);
        }
        const uint64_t key =
            (static_cast<uint64_t>(cell[1]) << 48) |
            (static_cast<uint64_t>(cell[0]) << 32) | range_key;
        auto [it, inserted] = cell_index.emplace(key, static_cast<int>(cell_key.size()));
        if (inserted) {
          cell_gx.push_back(cell[0]);
          cell_gy.push_back(cell[1]);
          cell_key.push_back(range_key);
        }
        corner_cell_[static_cast<size_t>(i) * corners + c] = it->second;
        corner_w_[static_cast<size_t>(i) * corners + c] = w;
      }
    }
    n_cells_ = static_cast<int>(cell_key.size());

    grid_w_ = 0;
    grid_h_ = 0;
    for (int c = 0; c < n_cells_; ++c) {
      grid_w_ = std::max(grid_w_, cell_gx[static_cast<size_t>(c)] + 1);
      grid_h_ = std::max(grid_h_, cell_gy[static_cast<size_t>(c)] + 1);
    }

    // Sort cells by (column, range key) into one packed layout: per column a
    // contiguous run of ascending range keys, scanned linearly by the gather.
    std::vector<int> order(static_cast<size_t>(n_cells_));
    for (int c = 0; c < n_cells_; ++c) order[static_cast<size_t>(c)] = c;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      const uint64_t ka = (static_cast<uint64_t>(cell_gy[static_cast<size_t>(a)]) << 48) |
                          (static_cast<uint64_t>(cell_gx[static_cast<size_t>(a)]) << 32) |
                          cell_key[static_cast<size_t>(a)];
      const uint64_t kb = (static_cast<uint64_t>(cell_gy[static_cast<size_t>(b)]) << 48) |
                          (static_cast<uint64_t>(cell_gx[static_cast<size_t>(b)]) << 32) |
                          cell_key[static_cast<size_t>(b)];
      return ka < kb;
    });
    std::vector<int> position(static_cast<size_t>(n_cells_));
    keys_.resize(static_cast<size_t>(n_cells_));
    for (int p = 0; p < n_cells_; ++p) {
      position[static_cast<size_t>(order[static_cast<size_t>(p)])] = p;
      keys_[static_cast<size_t>(p)] = cell_key[static_cast<size_t>(order[static_cast<size_t>(p)])];
    }
    for (auto& c : corner_cell_) c = position[static_cast<size_t>(c)];

    col_start_.assign(static_cast<size_t>(grid_w_) * grid_h_ + 1, 0);
    for (int c = 0; c < n_cells_; ++c) {
      const int col = cell_gy[static_cast<size_t>(c)] * grid_w_ + cell_gx[static_cast<size_t>(c)];
      ++col_start_[static_cast<size_t>(col) + 1];
    }
    for (size_t c = 1; c < col_start_.size(); ++c) col_start_[c] += col_start_[c - 1];

    // Composite self-weight per pixel: its own splat corners gathered back.
    self_weight_.resize(static_cast<size_t>(n_));
    for (int i = 0; i < n_; ++i) {
      const double* f = coords_.data() + static_cast<size_t>(i) * ndims_;
      double acc = 0.0;
      for (int c = 0; c < corners; ++c) {
        const int cell = corner_cell_[static_cast<size_t>(i) * corners + c];
        double w = corner_w_[static_cast<size_t>(i) * corners + c] *
                   taps_.lerp(f[0] - cell_gx[static_cast<size_t>(order[static_cast<size_t>(cell)])]) *
                   taps_.lerp(f[1] - cell_gy[static_cast<size_t>(order[static_cast<size_t>(cell)])]);
        uint32_t key = keys_[static_cast<size_t>(cell)];
        for (int d = ndims_ - 1; d >= 2; --d) {
          w *= taps_.lerp(f[d] - static_cast<int>(key & 0x3FF));
          key >>= 10;
        }
        acc += w;
      }
      self_weight_[static_cast<size_t>(i)] = acc;
    }
  }

  double self_weight(int pixel) const { return self_weight_[static_cast<size_t>(pixel)]; }

  // out[i*k+l] ~= sum_j k1(i,j) q[j*k+l], self included.
  void filter(const std::vector<double>& q, int k, std::vector<double>& out) const {
    const int corners = 1 << ndims_;
    std::vector<float> cell_values(static_cast<size_t>(n_cells_) * k, 0.0f);
    for (int i = 0; i < n_; ++i) {
      const double* qi = q.data() + static_cast<size_t>(i) * k;
      for (int c = 0; c < corners; ++c) {
        const int cell = corner_cell_[static_cast<size_t>(i) * corners + c];
        const float w = static_cast<float>(corner_w_[static_cast<size_t>(i) * corners + c]);
        float* cv = cell_values.data() + static_cast<size_t>(cell) * k;
        for (int l = 0; l < k; ++l) cv[l] += w * static_cast<float>(qi[l]);
      }
    }

    out.assign(static_cast<size_t>(n_) * k, 0.0);
    // Each pixel's output depends only on read-shared state, so rows split
    // across threads without changing any result.
    const int hw_threads = static_cast<int>(std::thread::hardware_concurrency());
    const int n_threads = std::clamp(hw_threads, 1, 8);
    std::vector<std::thread> workers;
    const auto run_range = [&](int begin, int end) {
      gather_range(cell_values, k, begin, end, out);
    };
    if (n_threads == 1 || n_ < 4096) {
      run_range(0, n_);
    } else {
      const int chunk = (n_ + n_threads - 1) / n_threads;
      for (int t = 0; t < n_threads; ++t)
        workers.emplace_back(run_range, t * chunk, std::min(n_, (t + 1) * chunk));
      for (auto& w : workers) w.join();
    }
  }

 private:
  void gather_range(const std::vector<float>& cell_values, int k, int begin,
                    int end, std::vector<double>& out) const {
    const int reach = kTapRadius + 1;
    std::vector<double> wr((2 * reach + 1) * static_cast<size_t>(range_dims_));
    std::vector<int> r_lo(static_cast<size_t>(range_dims_));
    std::vector<double> acc(static_cast<size_t>(k));
    for (int i = begin; i < end; ++i) {
      const double* f = coords_.data() + static_cast<size_t>(i) * ndims_;
      std::fill(acc.begin(), acc.end(), 0.0);

      // per-dimension tap values cached over the pixel's integer window
      for (int d = 0; d < range_dims_; ++d) {
        const double fd = f[2 + d];
        const int lo = static_cast<int>(std::ceil(fd)) - reach;
        r_lo[static_cast<size_t>(d)] = lo;
        for (int g = 0; g <= 2 * reach; ++g)
          wr[static_cast<size_t>(d) * (2 * reach + 1) + g] = taps_.lerp(fd - (lo + g));
      }

      const int x_lo = std::max(0, static_cast<int>(std::ceil(f[0])) - reach);
      const int x_hi = std::min(grid_w_ - 1, static_cast<int>(std::floor(f[0])) + reach);
      const int y_lo = std::max(0, static_cast<int>(std::ceil(f[1])) - reach);
      const int y_hi = std::min(grid_h_ - 1, static_cast<int>(std::floor(f[1])) + reach);
      for (int gy = y_lo; gy <= y_hi; ++gy) {
        const double wy = taps_.lerp(f[1] - gy);
        if (wy == 0.0) continue;
        for (int gx = x_lo; gx <= x_hi; ++gx) {
          const double wxy = wy * taps_.lerp(f[0] - gx);
          if (wxy == 0.0) continue;
          const int col = gy * grid_w_ + gx;
          int p = static_cast<int>(col_start_[static_cast<size_t>(col)]);
          const int p_end = static_cast<int>(col_start_[static_cast<size_t>(col) + 1]);
          if (range_dims_ == 1) {
            for (; p < p_end; ++p) {
              const int g0 = static_cast<int>(keys_[static_cast<size_t>(p)]) - r_lo[0];
              if (g0 < 0 || g0 > 2 * reach) continue;
              const double w = wxy * wr[static_cast<size_t>(g0)];
              if (w == 0.0) continue;
              const float* cv = cell_values.data() + static_cast<size_t>(p) * k;
              for (int l = 0; l < k; ++l) acc[static_cast<size_t>(l)] += w * cv[l];
            }
          } else {
            // keys ascend within a column: jump to the window start, stop
            // once past its end
            const uint32_t first = static_cast<uint32_t>(std::max(0, r_lo[0])) << 20;
            p = static_cast<int>(std::lower_bound(keys_.begin() + p,
                                                  keys_.begin() + p_end, first) -
                                 keys_.begin());
            for (; p < p_end; ++p) {
              const uint32_t key = keys_[static_cast<size_t>(p)];
              const int g0 = static_cast<int>(key >> 20) - r_lo[0];
              if (g0 > 2 * reach) break;
              const int g1 = static_cast<int>((key >> 10) & 0x3FF) - r_lo[1];
              if (g1 < 0 || g1 > 2 * reach) continue;
              const int g2 = static_cast<int>(key & 0x3FF) - r_lo[2];
              if (g2 < 0 || g2 > 2 * reach) continue;
              const double w =
                  wxy * wr[static_cast<size_t>(g0)] *
                  wr[static_cast<size_t>(2 * reach + 1 + g1)] *
                  wr[static_cast<size_t>(2 * (2 * reach + 1) + g2)];
              if (w == 0.0) continue;
              const float* cv = cell_values.data() + static_cast<size_t>(p) * k;
              for (int l = 0; l < k; ++l) acc[static_cast<size_t>(l)] += w * cv[l];
            }
          }
        }
      }
      double* oi = out.data() + static_cast<size_t>(i) * k;
      for (int l = 0; l < k; ++l) oi[l] = acc[static_cast<size_t>(l)];
    }
  }

  int n_ = 0;
  int range_dims_ = 0;
  int ndims_ = 0;
  int n_cells_ = 0;
  int grid_w_ = 0, grid_h_ = 0;
  Taps taps_;
  std::vector<double> coords_;
  std::vector<uint32_t> keys_;          // packed range coords, column-sorted
  std::vector<size_t> col_start_;       // per spatial column, offsets into keys_
  std::vector<int> corner_cell_;        // pixel splat corners (packed positions)
  std::vector<double> corner_w_;
  std::vector<double> self_weight_;
};

// Separable unnormalized spatial Gaussian, zero beyond the borders,
// truncated at five sigma. Self tap is exactly one.
void spatial_filter(const std::vector<double>& q, int height, int width, int k,
                    double theta, std::vector<double>& out) {
  const int radius = std::min(std::max(height, width) - 1,
                              static_cast<int>(std::ceil(5.0 * theta)));
  std::vector<double> taps(static_cast<size_t>(radius) + 1);
  for (int d = 0; d <= radius; ++d)
    taps[static_cast<size_t>(d)] = std::exp(-d * d / (2.0 * theta * theta));

  std::vector<double> tmp(q.size(), 0.0);
  // horizontal
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double* o = tmp.data() + (static_cast<size_t>(y) * width + x) * k;
      const int lo = std::max(0, x - radius), hi = std::min(width - 1, x + radius);
      for (int xx = lo; xx <= hi; ++xx) {
        const double w = taps[static_cast<size_t>(std::abs(xx - x))];
        const double* v = q.data() + (static_cast<size_t>(y) * width + xx) * k;
        for (int l = 0; l < k; ++l) o[l] += w * v[l];
      }
    }
  }
  // vertical
  out.assign(q.size(), 0.0);
  for (int y = 0; y < height; ++y) {
    const int lo = std::max(0, y - radius), hi = std::min(height - 1, y + radius);
    for (int x = 0; x < width; ++x) {
      double* o = out.data() + (static_cast<size_t>(y) * width + x) * k;
      for (int yy = lo; yy <= hi; ++yy) {
        const double w = taps[static_cast<size_t>(std::abs(yy - y))];
        const double* v = tmp.data() + (static_cast<size_t>(yy) * width + x) * k;
        for (int l = 0; l < k; ++l) o[l] += w * v[l];
      }
    }
  }
}

}  // namespace

void CrfParams::validate() const {
  if (theta1 <= 0 || theta2 <= 0 || theta3 <= 0)
    throw ValidationError("crf: theta parameters must be > 0");
  if (w1 < 0 || w2 < 0) throw ValidationError("crf: kernel weights must be >= 0");
  if (iterations < 1) throw ValidationError("crf: iterations must be >= 1");
}

void ProbMap::validate(double tolerance) const {
  if (height <= 0 || width <= 0 || num_classes <= 0)
    throw ValidationError("probmap: dims must be positive");
  if (p.size() != static_cast<size_t>(height) * width * num_classes)
    throw ValidationError("probmap: payload size does not match dims");
  for (int i = 0; i < height * width; ++i) {
    double sum = 0.0;
    for (int l = 0; l < num_classes; ++l) {
      const float v = p[static_cast<size_t>(i) * num_classes + l];
      if (!std::isfinite(v) || v < 0.0f)
        throw ValidationError("probmap: probabilities must be finite and >= 0");
      sum += v;
    }
    if (std::abs(sum - 1.0) > tolerance)
      throw ValidationError("probmap: pixel distribution sums to " + std::to_string(sum));
  }
}

std::vector<double> unary_from_probs(const ProbMap& probs, double floor) {
  std::vector<double> unary(probs.p.size());
  for (size_t i = 0; i < probs.p.size(); ++i)
    unary[i] = -std::log(std::max(static_cast<double>(probs.p[i]), floor));
  return unary;
}

double energy(const LabelMap& labeling, const ProbMap& probs,
              const ImageU8& image, const CrfParams& params) {
  params.validate();
  probs.validate();
  check_dims(probs, image);
  if (labeling.height != probs.height || labeling.width != probs.width)
    throw ValidationError("crf: labeling dims differ from probabilities");
  if (!labeling.fully_labeled())
    throw ValidationError("crf: energy requires a fully labeled map");

  const int n = probs.height * probs.width;
  const int k = probs.num_classes;
  const std::vector<double> unary = unary_from_probs(probs);
  double e = 0.0;
  for (int i = 0; i < n; ++i) {
    const uint8_t l = labeling.values[static_cast<size_t>(i)];
    if (l >= k) throw ValidationError("crf: label outside [0, K)");
    e += unary[static_cast<size_t>(i) * k + l];
  }

  const KernelTables tables = build_tables(probs.height, probs.width,
                                           image.channels, params);
  const int w = probs.width;
  for (int i = 0; i < n; ++i) {
    const uint8_t li = labeling.values[static_cast<size_t>(i)];
    for (int j = i + 1; j < n; ++j) {
      if (labeling.values[static_cast<size_t>(j)] == li) continue;  // Potts
      const int dy = std::abs(i / w - j / w);
      const int dx = std::abs(i % w - j % w);
      const double k1 = tables.spatial1[static_cast<size_t>(dy) * w + dx] *
                        tables.color[static_cast<size_t>(color_dist_sq(image, i, j))];
      const double k2 = tables.spatial2[static_cast<size_t>(dy) * w + dx];
      // ordered pairs: (i,j) and (j,i) both contribute
      e += 2.0 * (params.w1 * k1 + params.w2 * k2);
    }
  }
  return e;
}

ProbMap mean_field_exact(const ProbMap& probs, const ImageU8& image,
                         const CrfParams& params) {
  params.validate();
  probs.validate();
  check_dims(probs, image);
  const int n = probs.height * probs.width;
  if (n > 4096)
    throw ValidationError(
        "crf: exact mean field is capped at 4096 pixels; use the fast path");

  const int k = probs.num_classes;
  const int w = probs.width;
  const std::vector<double> unary = unary_from_probs(probs);
  const KernelTables tables = build_tables(probs.height, probs.width,
                                           image.channels, params);

  std::vector<double> q(static_cast<size_t>(n) * k);
  std::vector<double> messages(static_cast<size_t>(n) * k, 0.0);
  apply_update(unary, messages, n, k, q);  // Q0 from the unaries alone

  for (int iter = 0; iter < params.iterations; ++iter) {
    std::fill(messages.begin(), messages.end(), 0.0);
    for (int i = 0; i < n; ++i) {
      const double* qi = q.data() + static_cast<size_t>(i) * k;
      double* mi = messages.data() + static_cast<size_t>(i) * k;
      for (int j = i + 1; j < n; ++j) {
        const int dy = i / w - j / w;
        const int dx = std::abs(i % w - j % w);
        const double kij =
            params.w1 * tables.spatial1[static_cast<size_t>(-dy) * w + dx] *
                tables.color[static_cast<size_t>(color_dist_sq(image, i, j))] +
            params.w2 * tables.spatial2[static_cast<size_t>(-dy) * w + dx];
        const double* qj = q.data() + static_cast<size_t>(j) * k;
        double* mj = messages.data() + static_cast<size_t>(j) * k;
        for (int l = 0; l < k; ++l) {
          mi[l] += kij * qj[l];
          mj[l] += kij * qi[l];
        }
      }
    }
    apply_update(unary, messages, n, k, q);
  }
  return to_probmap(q, probs.height, probs.width, k);
}

ProbMap mean_field_fast(const ProbMap& probs, const ImageU8& image,
                        const CrfParams& params) {
  params.validate();
  probs.validate();
  check_dims(probs, image);

  const int n = probs.height * probs.width;
  const int k = probs.num_classes;
  const std::vector<double> unary = unary_from_probs(probs);

  std::vector<double> q(static_cast<size_t>(n) * k);
  std::vector<double> messages(static_cast<size_t>(n) * k, 0.0);
  apply_update(unary, messages, n, k, q);

  const bool need_bilateral = params.w1 > 0.0;
  const bool need_spatial = params.w2 > 0.0;
  std::unique_ptr<BilateralGrid> grid;
  if (need_bilateral)
    grid = std::make_unique<BilateralGrid>(image, params.theta1, params.theta2);

  std::vector<double> appearance, smoothness;
  for (int iter = 0; iter < params.iterations; ++iter) {
    std::fill(messages.begin(), messages.end(), 0.0);
    if (need_bilateral) {
      grid->filter(q, k, appearance);
      for (int i = 0; i < n; ++i) {
        const double self = grid->self_weight(i);
        for (int l = 0; l < k; ++l)
          messages[static_cast<size_t>(i) * k + l] +=
              params.w1 * (appearance[static_cast<size_t>(i) * k + l] -
                           self * q[static_cast<size_t>(i) * k + l]);
      }
    }
    if (need_spatial) {
      spatial_filter(q, probs.height, probs.width, k, params.theta3, smoothness);
      for (size_t i = 0; i < messages.size(); ++i)
        messages[i] += params.w2 * (smoothness[i] - q[i]);
    }
    apply_update(unary, messages, n, k, q);
  }
  return to_probmap(q, probs.height, probs.width, k);
}

LabelMap argmax_labels(const ProbMap& probs) {
  LabelMap labels(probs.height, probs.width);
  for (int i = 0; i < probs.height * probs.width; ++i) {
    const float* p = probs.p.data() + static_cast<size_t>(i) * probs.num_classes;
    int best = 0;
    for (int l = 1; l < probs.num_classes; ++l)
      if (p[l] > p[best]) best = l;  // ties keep the smallest id
    labels.values[static_cast<size_t>(i)] = static_cast<uint8_t>(best);
  }
  return labels;
}

LabelMap refine(const ProbMap& probs, const ImageU8& image,
                const CrfParams& params) {
  return argmax_labels(mean_field_fast(probs, image, params));
}

ProbMap probs_from_logits(std::span<const float> logits, int height, int width,
                          int num_classes) {
  if (logits.size() != static_cast<size_t>(height) * width * num_classes)
    throw ValidationError("probs_from_logits: size does not match dims");
  ProbMap out(height, width, num_classes);
  for (int i = 0; i < height * width; ++i) {
    const float* row = logits.data() + static_cast<size_t>(i) * num_classes;
    double best = row[0];
    for (int l = 1; l < num_classes; ++l) best = std::max(best, static_cast<double>(row[l]));
    double sum = 0.0;
    for (int l = 0; l < num_classes; ++l)
      sum += std::exp(static_cast<double>(row[l]) - best);
    for (int l = 0; l < num_classes; ++l)
      out.p[static_cast<size_t>(i) * num_classes + l] =
          static_cast<float>(std::exp(static_cast<double>(row[l]) - best) / sum);
  }
  return out;
}

// --- PMAP I/O -----------------------------------------------------------------

namespace {
template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}
template <typename T>
T read_pod(std::istream& in, const char* what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw ValidationError(std::string("pmap: truncated while reading ") + what);
  return value;
}
static_assert(std::endian::native == std::endian::little,
              "pmap I/O assumes a little-endian host");
}  // namespace

void write_pmap(const std::string& path, const ProbMap& probs) {
  probs.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("pmap: cannot create " + path);
  out.write("PMAP", 4);
  write_pod<uint32_t>(out, kProbMapVersion);
  write_pod<uint32_t>(out, static_cast<uint32_t>(probs.height));
  write_pod<uint32_t>(out, static_cast<uint32_t>(probs.width));
  write_pod<uint32_t>(out, static_cast<uint32_t>(probs.num_classes));
  out.write(reinterpret_cast<const char*>(probs.p.data()),
            static_cast<std::streamsize>(probs.p.size() * sizeof(float)));
  if (!out) throw Error("pmap: write failed for " + path);
}

ProbMap read_pmap(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("pmap: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "PMAP", 4) != 0)
    throw ValidationError("pmap: bad magic in " + path);
  const uint32_t version = read_pod<uint32_t>(in, "version");
  if (version != kProbMapVersion)
    throw ValidationError("pmap: unsupported version " + std::to_string(version));
  const uint32_t h = read_pod<uint32_t>(in, "height");
  const uint32_t w = read_pod<uint32_t>(in, "width");
  const uint32_t k = read_pod<uint32_t>(in, "classes");
  if (h == 0 || w == 0 || k == 0 || h > 1u << 16 || w > 1u << 16 || k > 4096)
    throw ValidationError("pmap: implausible dims in " + path);
  ProbMap probs(static_cast<int>(h), static_cast<int>(w), static_cast<int>(k));
  in.read(reinterpret_cast<char*>(probs.p.data()),
          static_cast<std::streamsize>(probs.p.size() * sizeof(float)));
  if (!in) throw ValidationError("pmap: truncated payload in " + path);
  probs.validate();
  return probs;
}

}  // namespace fseg::crf
