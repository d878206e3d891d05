#include "fseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "fseg/rng.hpp"

namespace fseg::train {

void TrainConfig::validate() const {
  if (lr < 0) throw ValidationError("train: lr must be >= 0");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw ValidationError("train: betas must lie in [0, 1)");
  if (eps <= 0) throw ValidationError("train: eps must be > 0");
  if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
  if (crop < 8 || crop % 8 != 0)
    throw ValidationError("train: crop must be a positive multiple of 8");
  if (stride < 1) throw ValidationError("train: stride must be >= 1");
  if (max_steps < 1) throw ValidationError("train: max_steps must be >= 1");
  if (eval_interval < 1) throw ValidationError("train: eval_interval must be >= 1");
  if (plateau_patience < 1) throw ValidationError("train: plateau_patience must be >= 1");
  if (plateau_delta < 0) throw ValidationError("train: plateau_delta must be >= 0");
  if (lr_decay_factor <= 1) throw ValidationError("train: lr_decay_factor must be > 1");
}

OptState OptState::init(const ad::ParamStore& params) {
  OptState state;
  for (const auto& [name, array] : params) {
    state.m.emplace(name, ad::ArrayF(array.shape));
    state.v.emplace(name, ad::ArrayF(array.shape));
  }
  state.t = 0;
  return state;
}

void nadam_step(ad::ParamStore& params, const GradView& grads, OptState& state,
                const TrainConfig& config, double lr) {
  state.t += 1;
  const double b1 = config.beta1, b2 = config.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(state.t));

  for (const auto& [name, grad] : grads) {
    auto pit = params.find(name);
    if (pit == params.end())
      throw ValidationError("nadam: unknown parameter \"" + name + "\"");
    ad::ArrayF& p = pit->second;
    if (grad.size() != p.data.size())
      throw ValidationError("nadam: gradient size mismatch for \"" + name + "\"");
    ad::ArrayF& m = state.m.at(name);
    ad::ArrayF& v = state.v.at(name);

    for (size_t i = 0; i < grad.size(); ++i) {
      const double g = grad[i];
      if (!std::isfinite(g))
        throw TrainingError("nadam: non-finite gradient in \"" + name +
                            "\" at element " + std::to_string(i));
      const double mi = b1 * m.data[i] + (1.0 - b1) * g;
      const double vi = b2 * v.data[i] + (1.0 - b2) * g * g;
      m.data[i] = static_cast<float>(mi);
      v.data[i] = static_cast<float>(vi);
      const double m_hat = mi / bias1;
      const double v_hat = vi / bias2;
      const double step =
          lr * (b1 * m_hat + (1.0 - b1) * g / bias1) / (std::sqrt(v_hat) + config.eps);
      p.data[i] = static_cast<float>(p.data[i] - step);
    }
  }
}

std::vector<std::pair<int, int>> crop_corners(int height, int width, int crop,
                                              int stride) {
  if (height < crop || width < crop)
    throw ValidationError("crops: image smaller than the crop size");
  if (stride < 1 || stride > crop)
    throw ValidationError("crops: stride must lie in [1, crop] to cover every pixel");
  const auto axis = [&](int extent) {
    std::vector<int> corners;
    for (int c = 0; c + crop <= extent; c += stride) corners.push_back(c);
    if (corners.back() != extent - crop) corners.push_back(extent - crop);
    return corners;
  };
  std::vector<std::pair<int, int>> corners;
  for (int y : axis(height))
    for (int x : axis(width)) corners.emplace_back(y, x);
  return corners;
}

std::vector<Sample> make_crops(const Sample& sample, int crop, int stride) {
  std::vector<Sample> crops;
  for (const auto& [y0, x0] : crop_corners(sample.image.height,
                                           sample.image.width, crop, stride)) {
    Sample patch;
    patch.image = ImageU8(crop, crop, sample.image.channels);
    patch.labels = LabelMap(crop, crop);
    for (int y = 0; y < crop; ++y) {
      for (int x = 0; x < crop; ++x) {
        for (int c = 0; c < sample.image.channels; ++c)
          patch.image.at(y, x, c) = sample.image.at(y0 + y, x0 + x, c);
        patch.labels.at(y, x) = sample.labels.at(y0 + y, x0 + x);
      }
    }
    crops.push_back(std::move(patch));
  }
  return crops;
}

ad::ArrayF image_to_array(const ImageU8& image) {
  ad::ArrayF array(ad::Shape{image.height, image.width, image.channels});
  for (size_t i = 0; i < image.data.size(); ++i)
    array.data[i] = static_cast<float>(image.data[i]) / 255.0f;
  return array;
}

namespace {

bool has_label(const LabelMap& labels) {
  return std::any_of(labels.values.begin(), labels.values.end(),
                     [](uint8_t v) { return v != LabelMap::kUnlabeled; });
}

double validation_loss(const std::vector<Sample>& crops,
                       const ad::ParamStore& params,
                       const model::ModelConfig& model_config) {
  double total = 0.0;
  for (const Sample& crop : crops) {
    ad::Tape<float> tape;
    auto weights = model::stage_parameters(tape, params, false);
    ad::Tensor<float> image = tape.leaf(image_to_array(crop.image), false);
    auto out = model::forward(tape, image, model_config, weights);
    total += static_cast<double>(
        festa::masked_cross_entropy(out.logits, crop.labels).scalar());
  }
  return total / static_cast<double>(crops.size());
}

}  // namespace

TrainResult train(const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set,
                  const model::ModelConfig& model_config,
                  const festa::FestaConfig& festa_config,
                  const TrainConfig& train_config,
                  std::span<const double> class_weights) {
  train_config.validate();
  model_config.validate();
  festa_config.validate();
  if (train_set.empty()) throw ValidationError("train: empty training set");
  if (val_set.empty()) throw ValidationError("train: empty validation set");

  const auto collect = [&](const std::vector<Sample>& samples) {
    std::vector<Sample> crops;
    for (const Sample& s : samples)
      for (Sample& c : make_crops(s, train_config.crop, train_config.stride))
        if (has_label(c.labels)) crops.push_back(std::move(c));
    return crops;
  };
  const std::vector<Sample> crops = collect(train_set);
  if (crops.empty())
    throw ValidationError("train: every training crop is unlabeled");
  const std::vector<Sample> val_crops = collect(val_set);
  if (val_crops.empty())
    throw ValidationError("train: every validation crop is unlabeled");

  // Float images staged once.
  std::vector<ad::ArrayF> crop_images;
  crop_images.reserve(crops.size());
  for (const Sample& c : crops) crop_images.push_back(image_to_array(c.image));

  ad::ParamStore params = model::init_weights(model_config, train_config.seed);
  OptState opt = OptState::init(params);
  Rng shuffle_rng(train_config.seed ^ 0xb5297a4d);

  std::vector<size_t> order(crops.size());
  size_t cursor = order.size();  // forces a shuffle on first use
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  double lr = train_config.lr;
  int decays = 0;
  double best_val = std::numeric_limits<double>::infinity();
  int evals_without_improvement = 0;

  TrainResult result;
  for (int64_t step = 1; step <= train_config.max_steps; ++step) {
    // Seeded shuffle; epochs that do not fill a batch are reshuffled.
    if (cursor + static_cast<size_t>(train_config.batch_size) > order.size()) {
      shuffle_rng.shuffle(order);
      cursor = 0;
    }
    const int batch =
        std::min<int>(train_config.batch_size, static_cast<int>(order.size()));

    ad::Tape<float> tape;
    auto weights = model::stage_parameters(tape, params, true);
    ad::Tensor<float> batch_loss;
    for (int b = 0; b < batch; ++b) {
      const size_t pick = order[cursor++];
      ad::Tensor<float> image = tape.leaf(crop_images[pick], false);
      auto out = model::forward(tape, image, model_config, weights);
      ad::Tensor<float> loss = festa::combined_loss(
          out.logits, crops[pick].labels, out.features, festa_config, class_weights);
      batch_loss = b == 0 ? loss : ad::add(batch_loss, loss);
    }
    ad::Tensor<float> zero = tape.constant(ad::Shape{1}, {0.0f});
    ad::Tensor<float> mean_loss =
        ad::add_scaled(zero, batch_loss, 1.0f / static_cast<float>(batch));

    const double train_loss = static_cast<double>(mean_loss.scalar());
    if (!std::isfinite(train_loss))
      throw TrainingError("train: loss diverged at step " + std::to_string(step));

    tape.backward(mean_loss);
    GradView grads;
    grads.reserve(weights.size());
    for (const auto& [name, tensor] : weights) grads.emplace_back(name, tensor.grad());
    nadam_step(params, grads, opt, train_config, lr);

    HistoryRow row;
    row.step = step;
    row.train_loss = train_loss;
    row.lr = lr;
    if (step % train_config.eval_interval == 0) {
      row.val_loss = validation_loss(val_crops, params, model_config);
      row.has_val = true;
      if (row.val_loss < best_val - train_config.plateau_delta) {
        best_val = row.val_loss;
        evals_without_improvement = 0;
      } else {
        ++evals_without_improvement;
        if (evals_without_improvement >= train_config.plateau_patience && decays < 2) {
          lr /= train_config.lr_decay_factor;
          ++decays;
          evals_without_improvement = 0;
        }
      }
    }
    result.history.push_back(row);
  }
  result.params = std::move(params);
  return result;
}

void save_history(const std::string& path, const std::vector<HistoryRow>& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("history: cannot create " + path);
  out << "step,train_loss,val_loss,lr\n";
  char buffer[64];
  const auto fmt = [&](double v) {
    std::snprintf(buffer, sizeof(buffer), "%.9g", v);
    return std::string(buffer);
  };
  for (const HistoryRow& row : history) {
    out << row.step << "," << fmt(row.train_loss) << ",";
    if (row.has_val) out << fmt(row.val_loss);
    out << "," << fmt(row.lr) << "\n";
  }
  if (!out) throw Error("history: write failed for " + path);
}

crf::ProbMap predict(const ImageU8& image, const ad::ParamStore& params,
                     const model::ModelConfig& config) {
  ad::Tape<float> tape;
  auto weights = model::stage_parameters(tape, params, false);
  ad::Tensor<float> input = tape.leaf(image_to_array(image), false);
  auto out = model::forward(tape, input, config, weights);
  return crf::probs_from_logits(out.logits.value(), image.height, image.width,
                                config.num_classes);
}

}  // namespace fseg::train
