#include "fseg/model.hpp"

#include <algorithm>
#include <cmath>

#include "fseg/rng.hpp"

namespace fseg::model {

namespace {

struct ParamSpec {
  std::string name;
  ad::Shape shape;
};

std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg) {
  const auto conv = [](const std::string& name, int k, int cin, int cout) {
    return ParamSpec{name + ".weight", ad::Shape{k, k, cin, cout}};
  };
  const auto bias = [](const std::string& name, int cout) {
    return ParamSpec{name + ".bias", ad::Shape{cout}};
  };

  std::vector<ParamSpec> specs;
  int cin = cfg.in_channels;
  for (int b = 0; b < 3; ++b) {
    const int cout = cfg.widths[static_cast<size_t>(b)];
    const std::string block = "block" + std::to_string(b + 1);
    specs.push_back(conv(block + ".conv1", 3, cin, cout));
    specs.push_back(bias(block + ".conv1", cout));
    specs.push_back(conv(block + ".conv2", 3, cout, cout));
    specs.push_back(bias(block + ".conv2", cout));
    cin = cout;
  }
  specs.push_back(conv("fuse.proj8", 1, cfg.widths[2], cfg.fuse_channels));
  specs.push_back(bias("fuse.proj8", cfg.fuse_channels));
  specs.push_back(conv("fuse.proj4", 1, cfg.widths[1], cfg.fuse_channels));
  specs.push_back(bias("fuse.proj4", cfg.fuse_channels));
  specs.push_back(conv("head", 1, cfg.fuse_channels, cfg.num_classes));
  specs.push_back(bias("head", cfg.num_classes));
  return specs;
}

}  // namespace

void ModelConfig::validate() const {
  if (in_channels < 1) throw ValidationError("model: in_channels must be >= 1");
  for (int wdt : widths)
    if (wdt < 1) throw ValidationError("model: block widths must be >= 1");
  if (num_classes < 2) throw ValidationError("model: num_classes must be >= 2");
  if (fuse_channels < 1) throw ValidationError("model: fuse_channels must be >= 1");
}

std::vector<std::string> parameter_names(const ModelConfig& config) {
  std::vector<std::string> names;
  for (const ParamSpec& spec : parameter_specs(config)) names.push_back(spec.name);
  return names;
}

ad::ParamStore init_weights(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ad::ParamStore params;
  for (const ParamSpec& spec : parameter_specs(config)) {
    ad::ArrayF array(spec.shape);
    if (spec.shape.rank() == 4) {
      const int k = spec.shape[0];
      const int fan_in = k * k * spec.shape[2];
      const int fan_out = k * k * spec.shape[3];
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (float& v : array.data)
        v = static_cast<float>(rng.uniform(-limit, limit));
    }
    // biases stay zero
    params.emplace(spec.name, std::move(array));
  }
  return params;
}

template <typename T>
std::vector<std::pair<std::string, ad::Tensor<T>>> stage_parameters(
    ad::Tape<T>& tape, const ad::ParamStore& params, bool requires_grad) {
  std::vector<std::pair<std::string, ad::Tensor<T>>> staged;
  staged.reserve(params.size());
  for (const auto& [name, array] : params) {
    std::vector<T> values(array.data.size());
    for (size_t i = 0; i < values.size(); ++i)
      values[i] = static_cast<T>(array.data[i]);
    staged.emplace_back(name, tape.leaf(array.shape, std::move(values), requires_grad));
  }
  return staged;
}

template std::vector<std::pair<std::string, ad::Tensor<float>>> stage_parameters(
    ad::Tape<float>&, const ad::ParamStore&, bool);
template std::vector<std::pair<std::string, ad::Tensor<double>>> stage_parameters(
    ad::Tape<double>&, const ad::ParamStore&, bool);

template <typename T>
ModelOutput<T> forward(ad::Tape<T>& tape, ad::Tensor<T> image,
                       const ModelConfig& config,
                       const std::vector<std::pair<std::string, ad::Tensor<T>>>& weights) {
  config.validate();
  if (image.tape() != &tape)
    throw ValidationError("model: image lives on a different tape");
  const ad::Shape& s = image.shape();
  if (s.rank() != 3 || s[2] != config.in_channels)
    throw ValidationError("model: image must be [H,W," +
                          std::to_string(config.in_channels) + "], got " + s.str());
  if (s[0] % 8 != 0 || s[1] % 8 != 0)
    throw ValidationError("model: H and W must be divisible by 8, got " + s.str());

  const auto param = [&](const std::string& name) -> ad::Tensor<T> {
    for (const auto& [n, t] : weights)
      if (n == name) return t;
    throw ValidationError("model: missing parameter \"" + name + "\"");
  };
  const auto conv_block = [&](ad::Tensor<T> x, const std::string& block) {
    x = ad::relu(ad::conv2d(x, param(block + ".conv1.weight"), param(block + ".conv1.bias")));
    x = ad::relu(ad::conv2d(x, param(block + ".conv2.weight"), param(block + ".conv2.bias")));
    return ad::maxpool2(x);
  };

  ad::Tensor<T> half = conv_block(image, "block1");     // 1/2
  ad::Tensor<T> quarter = conv_block(half, "block2");   // 1/4
  ad::Tensor<T> eighth = conv_block(quarter, "block3"); // 1/8

  ad::Tensor<T> from8 = ad::upsample_bilinear(
      ad::conv2d(eighth, param("fuse.proj8.weight"), param("fuse.proj8.bias")), 2);
  ad::Tensor<T> from4 =
      ad::conv2d(quarter, param("fuse.proj4.weight"), param("fuse.proj4.bias"));
  ad::Tensor<T> fused = ad::add(from8, from4);

  ad::Tensor<T> scores =
      ad::conv2d(fused, param("head.weight"), param("head.bias"));
  ad::Tensor<T> logits = ad::upsample_bilinear(scores, 4);

  return ModelOutput<T>{logits, fused};
}

template ModelOutput<float> forward(ad::Tape<float>&, ad::Tensor<float>,
                                    const ModelConfig&,
                                    const std::vector<std::pair<std::string, ad::Tensor<float>>>&);
template ModelOutput<double> forward(ad::Tape<double>&, ad::Tensor<double>,
                                     const ModelConfig&,
                                     const std::vector<std::pair<std::string, ad::Tensor<double>>>&);

}  // namespace fseg::model
