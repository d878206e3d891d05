#include "fseg/metrics.hpp"

#include <iomanip>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fseg::metrics {

int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), int64_t{0});
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.num_classes != num_classes)
    throw ValidationError("confusion matrix: class count mismatch");
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  return *this;
}

ConfusionMatrix accumulate(const LabelMap& gt, const LabelMap& pred,
                           int num_classes, const std::set<int>& exclude) {
  if (gt.height != pred.height || gt.width != pred.width)
    throw ValidationError("metrics: gt and prediction dims differ");
  if (num_classes < 1 || num_classes > LabelMap::kMaxClasses)
    throw ValidationError("metrics: num_classes must be in [1, 254]");

  ConfusionMatrix cm(num_classes);
  for (size_t i = 0; i < gt.values.size(); ++i) {
    const uint8_t p = pred.values[i];
    if (p == LabelMap::kUnlabeled)
      throw ValidationError("metrics: prediction must be fully labeled");
    const uint8_t g = gt.values[i];
    if (g == LabelMap::kUnlabeled) continue;
    if (g >= num_classes || p >= num_classes)
      throw ValidationError("metrics: label outside [0, num_classes)");
    if (exclude.contains(g)) continue;
    ++cm.at(g, p);
  }
  return cm;
}

Scores scores(const ConfusionMatrix& cm) {
  const int64_t total = cm.total();
  if (total == 0) throw ValidationError("metrics: empty confusion matrix");

  const int k = cm.num_classes;
  Scores out;
  out.f1.assign(static_cast<size_t>(k), 0.0);

  int64_t trace = 0;
  double f1_sum = 0.0;
  int evaluated = 0;
  for (int c = 0; c < k; ++c) {
    int64_t tp = cm.at(c, c);
    int64_t gt_count = 0, pred_count = 0;
    for (int j = 0; j < k; ++j) {
      gt_count += cm.at(c, j);
      pred_count += cm.at(j, c);
    }
    trace += tp;
    const int64_t fp = pred_count - tp;
    const int64_t fn = gt_count - tp;
    const int64_t denom = 2 * tp + fp + fn;
    if (denom > 0)
      out.f1[static_cast<size_t>(c)] = 2.0 * static_cast<double>(tp) / denom;
    // Classes appearing in neither gt nor predictions stay out of the mean.
    if (gt_count > 0 || pred_count > 0) {
      f1_sum += out.f1[static_cast<size_t>(c)];
      ++evaluated;
    }
  }
  out.mean_f1 = evaluated > 0 ? f1_sum / evaluated : 0.0;
  out.overall_accuracy = static_cast<double>(trace) / static_cast<double>(total);
  return out;
}

std::string scores_to_json(const Scores& scores) {
  nlohmann::ordered_json out;
  nlohmann::ordered_json f1;
  for (size_t c = 0; c < scores.f1.size(); ++c)
    f1[std::to_string(c)] = scores.f1[c];
  out["f1"] = std::move(f1);
  out["mean_f1"] = scores.mean_f1;
  out["oa"] = scores.overall_accuracy;
  return out.dump(2) + "\n";
}

std::string scores_table(const Scores& scores) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "class    F1\n";
  for (size_t c = 0; c < scores.f1.size(); ++c)
    out << std::setw(5) << c << "    " << scores.f1[c] << "\n";
  out << "mean F1  " << scores.mean_f1 << "\n";
  out << "OA       " << scores.overall_accuracy << "\n";
  return out.str();
}

}  // namespace fseg::metrics
