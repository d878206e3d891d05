#pragma once

#include <span>
#include <string>
#include <vector>

#include "fseg/image.hpp"

namespace fseg::crf {

// Pairwise energy: mu(l_i, l_j) * (w1 * k1 + w2 * k2) with
//   k1 = exp(-|p_i-p_j|^2 / (2 theta1^2) - |I_i-I_j|^2 / (2 theta2^2))
//   k2 = exp(-|p_i-p_j|^2 / (2 theta3^2))
// over raw 0..255 intensities and Potts compatibility.
struct CrfParams {
  double theta1 = 30.0;  // appearance kernel, spatial scale (pixels)
  double theta2 = 10.0;  // appearance kernel, color scale (intensity units)
  double theta3 = 10.0;  // smoothness kernel, spatial scale (pixels)
  double w1 = 1.0;
  double w2 = 1.0;
  int iterations = 5;

  void validate() const;
};

// Per-pixel class distributions, row-major, class-fastest.
struct ProbMap {
  int height = 0;
  int width = 0;
  int num_classes = 0;
  std::vector<float> p;

  ProbMap() = default;
  ProbMap(int h, int w, int k)
      : height(h), width(w), num_classes(k),
        p(static_cast<size_t>(h) * w * k, 0.0f) {}

  float& at(int y, int x, int c) {
    return p[(static_cast<size_t>(y) * width + x) * num_classes + c];
  }
  float at(int y, int x, int c) const {
    return p[(static_cast<size_t>(y) * width + x) * num_classes + c];
  }

  // Non-negative entries summing to one per pixel within `tolerance`.
  void validate(double tolerance = 1e-5) const;
};

// ProbMap file: magic "PMAP", u32 version, u32 H, u32 W, u32 K, then
// little-endian float32, row-major, class-fastest.
inline constexpr uint32_t kProbMapVersion = 1;
void write_pmap(const std::string& path, const ProbMap& probs);
ProbMap read_pmap(const std::string& path);

// Unary costs -log(max(P, floor)), same layout as the ProbMap.
std::vector<double> unary_from_probs(const ProbMap& probs, double floor = 1e-12);

// Exact evaluation of the energy of a full labeling: unary costs plus the
// pairwise term summed over ordered pairs i != j.
double energy(const LabelMap& labeling, const ProbMap& probs,
              const ImageU8& image, const CrfParams& params);

// Mean-field refinement, synchronous updates. The exact path sums every
// pixel pair and is capped at 4096 pixels; it is the oracle for the fast
// path, which uses a truncated separable convolution for the smoothness
// kernel and a downsampled bilateral grid (spatial cell theta1/2, range cell
// theta2/2, multilinear splat/slice) for the appearance kernel.
ProbMap mean_field_exact(const ProbMap& probs, const ImageU8& image,
                         const CrfParams& params);
ProbMap mean_field_fast(const ProbMap& probs, const ImageU8& image,
                        const CrfParams& params);

// Runs the fast path and takes the per-pixel argmax; ties go to the
// smallest class id.
LabelMap refine(const ProbMap& probs, const ImageU8& image,
                const CrfParams& params);

LabelMap argmax_labels(const ProbMap& probs);

// Softmax over a [H,W,K] logit field (row-major, class-fastest).
ProbMap probs_from_logits(std::span<const float> logits, int height, int width,
                          int num_classes);

}  // namespace fseg::crf
