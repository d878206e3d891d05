#pragma once

#include <set>
#include <string>
#include <vector>

#include "fseg/image.hpp"

namespace fseg::metrics {

// K x K counts; entry (r, c) is the number of pixels with ground truth r
// predicted as c. Unlabeled ground truth never counts.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<int64_t> counts;

  explicit ConfusionMatrix(int k)
      : num_classes(k), counts(static_cast<size_t>(k) * k, 0) {}

  int64_t& at(int gt, int pred) {
    return counts[static_cast<size_t>(gt) * num_classes + pred];
  }
  int64_t at(int gt, int pred) const {
    return counts[static_cast<size_t>(gt) * num_classes + pred];
  }
  int64_t total() const;

  // Tile-wise accumulation merges by addition.
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
};

// Counts pixels whose ground truth is labeled and not excluded. The
// prediction must be fully labeled.
ConfusionMatrix accumulate(const LabelMap& gt, const LabelMap& pred,
                           int num_classes, const std::set<int>& exclude = {});

struct Scores {
  std::vector<double> f1;  // per class; 0 when 2TP+FP+FN == 0
  double mean_f1 = 0.0;    // over classes present in gt or predictions
  double overall_accuracy = 0.0;
};

Scores scores(const ConfusionMatrix& cm);

std::string scores_to_json(const Scores& scores);
std::string scores_table(const Scores& scores);

}  // namespace fseg::metrics
