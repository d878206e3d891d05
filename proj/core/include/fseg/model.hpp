#pragma once

#include <array>
#include <string>
#include <vector>

#include "fseg/checkpoint.hpp"
#include "fseg/tensor.hpp"

namespace fseg::model {

// Three conv blocks, each halving resolution, with a two-scale fusion: the
// 1/8 features are projected, upsampled x2 and added to the projected 1/4
// features. The fused map feeds both the classifier head and the relational
// loss.
struct ModelConfig {
  int in_channels = 3;
  std::array<int, 3> widths = {16, 32, 64};
  int num_classes = 2;
  int fuse_channels = 32;

  void validate() const;
};

template <typename T>
struct ModelOutput {
  ad::Tensor<T> logits;    // [H,W,K]
  ad::Tensor<T> features;  // fused map at 1/4 resolution, the exact node the
                           // relational loss consumes
};

// Parameter names used by init_weights, forward and the checkpoints.
std::vector<std::string> parameter_names(const ModelConfig& config);

// Glorot-uniform kernels (limit sqrt(6/(fan_in+fan_out)), fans counted over
// the full receptive field), zero biases. Deterministic per seed.
ad::ParamStore init_weights(const ModelConfig& config, uint64_t seed);

// Stages a parameter store onto a tape as leaves, converting to T.
template <typename T>
std::vector<std::pair<std::string, ad::Tensor<T>>> stage_parameters(
    ad::Tape<T>& tape, const ad::ParamStore& params, bool requires_grad);

// Runs the network. `image` is [H,W,in_channels] scaled to [0,1]; H and W
// must be divisible by 8. `weights` must hold every parameter name.
template <typename T>
ModelOutput<T> forward(ad::Tape<T>& tape, ad::Tensor<T> image,
                       const ModelConfig& config,
                       const std::vector<std::pair<std::string, ad::Tensor<T>>>& weights);

}  // namespace fseg::model
