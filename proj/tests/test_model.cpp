#include <doctest.h>

#include <cmath>

#include "fseg/festa.hpp"
#include "fseg/gradcheck.hpp"
#include "fseg/model.hpp"
#include "fseg/rng.hpp"

using namespace fseg;
using namespace fseg::model;
using fseg::ad::ArrayD;
using fseg::ad::ArrayF;
using fseg::ad::ParamStore;
using fseg::ad::Shape;
using fseg::ad::Tape;
using fseg::ad::Tensor;

namespace {

ModelConfig tiny_config(int num_classes = 3) {
  ModelConfig cfg;
  cfg.widths = {4, 6, 8};
  cfg.fuse_channels = 5;
  cfg.num_classes = num_classes;
  return cfg;
}

ArrayD to_double(const ArrayF& a) {
  ArrayD out(a.shape);
  for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i];
  return out;
}

}  // namespace

TEST_CASE("forward shape contract") {
  ModelConfig cfg;  // defaults: widths 16/32/64, fuse 32
  cfg.num_classes = 5;
  const ParamStore params = init_weights(cfg, 1);

  Tape<float> tape;
  auto weights = stage_parameters(tape, params, false);
  ArrayF image(Shape{64, 64, 3});
  auto out = forward(tape, tape.leaf(image, false), cfg, weights);
  CHECK(out.logits.shape() == Shape{64, 64, 5});
  CHECK(out.features.shape() == Shape{16, 16, 32});
}

TEST_CASE("input dims must be divisible by 8") {
  ModelConfig cfg = tiny_config();
  const ParamStore params = init_weights(cfg, 1);
  Tape<float> tape;
  auto weights = stage_parameters(tape, params, false);
  ArrayF image(Shape{20, 16, 3});
  CHECK_THROWS_AS(forward(tape, tape.leaf(image, false), cfg, weights),
                  ValidationError);
}

TEST_CASE("all-zero weights give all-zero logits") {
  ModelConfig cfg = tiny_config();
  ParamStore params = init_weights(cfg, 1);
  for (auto& [name, array] : params) std::fill(array.data.begin(), array.data.end(), 0.0f);

  Tape<float> tape;
  auto weights = stage_parameters(tape, params, false);
  ArrayF image(Shape{16, 16, 3});
  Rng rng(2);
  for (float& v : image.data) v = static_cast<float>(rng.uniform());
  auto out = forward(tape, tape.leaf(image, false), cfg, weights);
  for (float v : out.logits.value()) CHECK(v == 0.0f);
}

TEST_CASE("glorot initialization: determinism, bounds, mean") {
  ModelConfig cfg;
  cfg.num_classes = 4;
  const ParamStore a = init_weights(cfg, 77);
  const ParamStore b = init_weights(cfg, 77);
  const ParamStore c = init_weights(cfg, 78);

  REQUIRE(a.size() == b.size());
  bool any_diff_seed_diff = false;
  for (const auto& [name, array] : a) {
    CHECK(b.at(name).data == array.data);  // same seed, identical
    if (c.at(name).data != array.data) any_diff_seed_diff = true;
  }
  CHECK(any_diff_seed_diff);

  // biases zero; kernels within the glorot bound
  for (const auto& [name, array] : a) {
    if (array.shape.rank() == 1) {
      for (float v : array.data) CHECK(v == 0.0f);
      continue;
    }
    const int k = array.shape[0];
    const double limit =
        std::sqrt(6.0 / (k * k * array.shape[2] + k * k * array.shape[3]));
    for (float v : array.data) {
      CHECK(v <= limit);
      CHECK(v >= -limit);
    }
  }

  // sample mean of the block2.conv2 kernel (3x3x32x32) is near zero
  const ArrayF& kernel = a.at("block2.conv2.weight");
  double mean = 0.0;
  for (float v : kernel.data) mean += v;
  mean /= static_cast<double>(kernel.data.size());
  CHECK(std::abs(mean) < 0.01);
}

TEST_CASE("gradcheck: composed network on a 16x16 input") {
  ModelConfig cfg = tiny_config();
  const ParamStore params = init_weights(cfg, 5);
  Rng rng(6);
  ArrayD image(Shape{16, 16, 3});
  for (double& v : image.data) v = rng.uniform();

  // check w.r.t. two representative parameter tensors (first conv kernel and
  // the head) while the rest stay constant
  std::vector<ArrayD> inputs = {to_double(params.at("block1.conv1.weight")),
                                to_double(params.at("head.weight")),
                                to_double(params.at("fuse.proj4.bias"))};

  auto fn = [&](Tape<double>& tape, std::span<const Tensor<double>> leaves) {
    std::vector<std::pair<std::string, Tensor<double>>> weights;
    for (const auto& [name, array] : params) {
      if (name == "block1.conv1.weight")
        weights.emplace_back(name, leaves[0]);
      else if (name == "head.weight")
        weights.emplace_back(name, leaves[1]);
      else if (name == "fuse.proj4.bias")
        weights.emplace_back(name, leaves[2]);
      else
        weights.emplace_back(name, tape.leaf(to_double(array), false));
    }
    auto out = forward(tape, tape.leaf(image, false), cfg, weights);
    Rng wrng(7);
    std::vector<double> w(out.logits.value().size());
    for (double& v : w) v = wrng.uniform(-1.0, 1.0);
    return ad::weighted_sum(out.logits, std::move(w));
  };
  const auto report = ad::gradcheck(fn, inputs);
  CHECK(report.worst <= 1e-4);
}

TEST_CASE("brightness change moves the logits") {
  ModelConfig cfg = tiny_config();
  const ParamStore params = init_weights(cfg, 9);
  Rng rng(10);
  ArrayF image(Shape{16, 16, 3});
  for (float& v : image.data) v = static_cast<float>(rng.uniform(0.1, 0.5));
  ArrayF bright = image;
  for (float& v : bright.data) v *= 2.0f;

  Tape<float> tape;
  auto weights = stage_parameters(tape, params, false);
  auto out_a = forward(tape, tape.leaf(image, false), cfg, weights);
  auto out_b = forward(tape, tape.leaf(bright, false), cfg, weights);
  double diff = 0.0;
  for (size_t i = 0; i < out_a.logits.value().size(); ++i)
    diff = std::max(diff, std::abs(static_cast<double>(out_a.logits.value()[i]) -
                                   out_b.logits.value()[i]));
  CHECK(diff > 1e-6);
}

TEST_CASE("features node feeds both loss paths") {
  ModelConfig cfg = tiny_config(3);
  const ParamStore params = init_weights(cfg, 11);
  Rng rng(12);
  ArrayF image(Shape{16, 16, 3});
  for (float& v : image.data) v = static_cast<float>(rng.uniform());
  LabelMap labels(16, 16);
  labels.at(3, 3) = 0;
  labels.at(8, 9) = 2;
  labels.at(14, 2) = 1;

  festa::FestaConfig fcfg;

  const auto grads_for = [&](double alpha, double beta, double gamma,
                             double lambda, bool ce_only) {
    festa::FestaConfig local = fcfg;
    local.alpha = alpha;
    local.beta = beta;
    local.gamma = gamma;
    local.lambda = lambda;
    Tape<float> tape;
    auto weights = stage_parameters(tape, params, true);
    auto out = forward(tape, tape.leaf(image, false), cfg, weights);
    Tensor<float> loss;
    if (ce_only)
      loss = festa::masked_cross_entropy(out.logits, labels);
    else
      loss = festa::combined_loss(out.logits, labels, out.features, local);
    tape.backward(loss);
    std::vector<double> g;
    for (const auto& [name, tensor] : weights)
      if (name == "block1.conv1.weight")
        for (float v : tensor.grad()) g.push_back(v);
    return g;
  };

  const auto g_ce = grads_for(0, 0, 0, 0.0, true);
  const auto g_festa_only = grads_for(0.5, 1.5, 1.0, 1.0, false);
  // the combined gradient differs from the CE gradient, so the relational
  // path reaches the early weights through the fused features node
  bool differs = false;
  for (size_t i = 0; i < g_ce.size(); ++i)
    if (std::abs(g_ce[i] - g_festa_only[i]) > 1e-9) differs = true;
  CHECK(differs);
}

TEST_CASE("gradcheck: combined loss through the model (16x16)") {
  ModelConfig cfg = tiny_config(3);
  const ParamStore params = init_weights(cfg, 13);
  Rng rng(14);
  ArrayD image(Shape{16, 16, 3});
  for (double& v : image.data) v = rng.uniform();
  LabelMap labels(16, 16);
  for (int i = 0; i < 12; ++i)
    labels.values[static_cast<size_t>(rng.uniform_int(16 * 16))] =
        static_cast<uint8_t>(rng.uniform_int(3));

  festa::FestaConfig fcfg;
  fcfg.lambda = 0.1;

  // freeze the neighbor selection so finite differences cannot flip it
  festa::NeighborSelection selection;
  {
    Tape<double> tape;
    std::vector<std::pair<std::string, Tensor<double>>> weights;
    for (const auto& [name, array] : params)
      weights.emplace_back(name, tape.leaf(to_double(array), false));
    auto out = forward(tape, tape.leaf(image, false), cfg, weights);
    selection = festa::select_neighbors(out.features, fcfg.n_max);
  }

  std::vector<ArrayD> inputs = {to_double(params.at("block3.conv1.weight")),
                                to_double(params.at("fuse.proj8.weight"))};
  auto fn = [&](Tape<double>& tape, std::span<const Tensor<double>> leaves) {
    std::vector<std::pair<std::string, Tensor<double>>> weights;
    for (const auto& [name, array] : params) {
      if (name == "block3.conv1.weight")
        weights.emplace_back(name, leaves[0]);
      else if (name == "fuse.proj8.weight")
        weights.emplace_back(name, leaves[1]);
      else
        weights.emplace_back(name, tape.leaf(to_double(array), false));
    }
    auto out = forward(tape, tape.leaf(image, false), cfg, weights);
    auto ce = festa::masked_cross_entropy(out.logits, labels);
    auto rel = festa::festa_loss(out.features, fcfg, selection);
    return ad::add_scaled(ce, rel, fcfg.lambda);
  };
  const auto report = ad::gradcheck(fn, inputs);
  CHECK(report.worst <= 1e-4);
}

TEST_CASE("missing parameter is reported") {
  ModelConfig cfg = tiny_config();
  ParamStore params = init_weights(cfg, 1);
  params.erase("head.bias");
  Tape<float> tape;
  auto weights = stage_parameters(tape, params, false);
  ArrayF image(Shape{16, 16, 3});
  CHECK_THROWS_AS(forward(tape, tape.leaf(image, false), cfg, weights),
                  ValidationError);
}
