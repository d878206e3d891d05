#pragma once

#include <span>
#include <string>
#include <vector>

#include "fseg/checkpoint.hpp"
#include "fseg/crf.hpp"
#include "fseg/festa.hpp"
#include "fseg/image.hpp"
#include "fseg/model.hpp"

namespace fseg::train {

struct TrainConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 5;
  int crop = 64;
  int stride = 16;
  int max_steps = 200;
  int eval_interval = 20;      // steps between validation evaluations
  int plateau_patience = 10;   // evals without improvement before a decay
  double plateau_delta = 1e-4;
  double lr_decay_factor = 10.0;
  uint64_t seed = 0;

  void validate() const;
};

// Per-parameter Nadam moments.
struct OptState {
  ad::ParamStore m;
  ad::ParamStore v;
  int64_t t = 0;

  static OptState init(const ad::ParamStore& params);
};

using GradView = std::vector<std::pair<std::string, std::span<const float>>>;

// One Nadam update:
//   t += 1; m = b1 m + (1-b1) g; v = b2 v + (1-b2) g^2
//   m^ = m/(1-b1^t); v^ = v/(1-b2^t)
//   params -= lr (b1 m^ + (1-b1) g/(1-b1^t)) / (sqrt(v^) + eps)
// Non-finite gradients abort with a diagnostic naming the parameter.
void nadam_step(ad::ParamStore& params, const GradView& grads, OptState& state,
                const TrainConfig& config, double lr);

struct Sample {
  ImageU8 image;
  LabelMap labels;
};

// Sliding-window corners at stride multiples plus right/bottom-aligned rows
// and columns, so the union of crops covers every pixel. Row-major order.
std::vector<std::pair<int, int>> crop_corners(int height, int width, int crop,
                                              int stride);
std::vector<Sample> make_crops(const Sample& sample, int crop, int stride);

struct HistoryRow {
  int64_t step = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool has_val = false;
  double lr = 0.0;
};

struct TrainResult {
  ad::ParamStore params;
  std::vector<HistoryRow> history;
};

// Mini-batch training of the segmentation net under the combined loss.
// Crops without a single labeled pixel are skipped up front; validation loss
// is the masked cross-entropy alone so the plateau schedule tracks the
// supervised objective. The learning rate decays by lr_decay_factor after
// plateau_patience evaluations without improvement, at most twice.
TrainResult train(const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set,
                  const model::ModelConfig& model_config,
                  const festa::FestaConfig& festa_config,
                  const TrainConfig& train_config,
                  std::span<const double> class_weights = {});

// History CSV: step,train_loss,val_loss,lr with val_loss blank between
// evaluations.
void save_history(const std::string& path, const std::vector<HistoryRow>& history);

// [H,W,3] image scaled to [0,1].
ad::ArrayF image_to_array(const ImageU8& image);

// Softmax class probabilities of the network on a full image.
crf::ProbMap predict(const ImageU8& image, const ad::ParamStore& params,
                     const model::ModelConfig& config);

}  // namespace fseg::train
