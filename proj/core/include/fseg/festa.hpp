#pragma once

#include <optional>
#include <span>
#include <vector>

#include "fseg/image.hpp"
#include "fseg/tensor.hpp"

namespace fseg::festa {

enum class Normalization { kMean, kSum };

struct FestaConfig {
  double alpha = 0.5;   // pull toward the feature-space neighbor
  double beta = 1.5;    // pull toward the most similar spatial neighbor
  double gamma = 1.0;   // push away from the least similar feature
  double lambda = 0.1;  // weight of the relational term in the combined loss
  int n_max = 4096;     // anchor budget; larger grids are stride-subsampled
  Normalization normalization = Normalization::kMean;
  double epsilon = 1e-8;

  void validate() const;
};

// Frozen partner choices for each anchor; indices are linear positions in
// the h*w feature grid. Selection is a hard argmin/argmax and carries no
// gradient.
struct NeighborSelection {
  int grid_height = 0;
  int grid_width = 0;
  std::vector<int> anchors;    // linear positions, ascending
  std::vector<int> nf;         // most similar candidate (excluding self)
  std::vector<int> ff;         // least similar candidate
  std::vector<int> ns;         // most similar of the true 8-neighborhood
};

double cosine_similarity(std::span<const double> a, std::span<const double> b,
                         double epsilon = 1e-8);
double euclidean_distance(std::span<const double> a, std::span<const double> b);

// Chooses nf/ff by cosine similarity over the anchor set (all positions when
// h*w <= n_max, otherwise a uniform-stride grid subsample) and ns over the
// full-resolution 8-neighborhood. Ties break to the smallest linear index.
template <typename T>
NeighborSelection select_neighbors(const T* features, int height, int width,
                                   int channels, int n_max);

template <typename T>
NeighborSelection select_neighbors(ad::Tensor<T> features, int n_max);

// Relational loss over a [h,w,C] feature grid:
//   alpha * sum_i D(x_i, x_nf) + beta * sum_i D(x_i, x_ns)
//   + gamma * sum_i S(x_i, x_ff),
// divided by the anchor count under mean normalization. Gradients flow to
// both endpoints of every selected pair, never through the selection itself.
template <typename T>
ad::Tensor<T> festa_loss(ad::Tensor<T> features, const FestaConfig& config);

// Same loss over a caller-supplied selection (e.g. frozen across finite
// difference probes).
template <typename T>
ad::Tensor<T> festa_loss(ad::Tensor<T> features, const FestaConfig& config,
                         const NeighborSelection& selection);

// Mean over labeled pixels of w_c * (-log softmax(logits)_c); pixels at the
// unlabeled value contribute nothing. Empty class_weights means unit weights.
template <typename T>
ad::Tensor<T> masked_cross_entropy(ad::Tensor<T> logits, const LabelMap& labels,
                                   std::span<const double> class_weights = {});

// L = L_ce + lambda * L_FESTA. With lambda == 0 the relational term is not
// evaluated and the result is exactly the masked cross-entropy.
template <typename T>
ad::Tensor<T> combined_loss(ad::Tensor<T> logits, const LabelMap& labels,
                            ad::Tensor<T> features, const FestaConfig& config,
                            std::span<const double> class_weights = {});

// Inverse-frequency weights w_c = total / (K_present * (count_c + smoothing)),
// rescaled to mean one over present classes; absent classes get zero.
std::vector<double> class_weights_from_labels(const LabelMap& labels,
                                              int num_classes,
                                              double smoothing = 1.0);

}  // namespace fseg::festa
