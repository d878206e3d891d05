#include <benchmark/benchmark.h>

#include "fseg/crf.hpp"
#include "fseg/festa.hpp"
#include "fseg/model.hpp"
#include "fseg/rng.hpp"
#include "fseg/synth.hpp"
#include "fseg/tensor.hpp"
#include "fseg/trainer.hpp"

using namespace fseg;

namespace {

ad::ArrayF random_image_array(int size, uint64_t seed) {
  Rng rng(seed);
  ad::ArrayF image(ad::Shape{size, size, 3});
  for (float& v : image.data) v = static_cast<float>(rng.uniform());
  return image;
}

void BM_conv2d_forward(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  Rng rng(1);
  ad::ArrayF input = random_image_array(size, 1);
  ad::ArrayF kernel(ad::Shape{3, 3, 3, 16});
  for (float& v : kernel.data) v = static_cast<float>(rng.uniform(-0.1, 0.1));
  ad::ArrayF bias(ad::Shape{16});

  for (auto _ : state) {
    ad::Tape<float> tape;
    auto out = ad::conv2d(tape.leaf(input, false), tape.leaf(kernel, false),
                          tape.leaf(bias, false));
    benchmark::DoNotOptimize(out.value().data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t{size} * size);
}
BENCHMARK(BM_conv2d_forward)->Arg(64)->Arg(128);

void BM_model_forward_backward(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  model::ModelConfig cfg;
  cfg.num_classes = 5;
  const ad::ParamStore params = model::init_weights(cfg, 7);
  const ad::ArrayF image = random_image_array(size, 2);
  LabelMap labels(size, size);
  Rng rng(3);
  for (int i = 0; i < size; ++i)
    labels.values[static_cast<size_t>(rng.uniform_int(size * size))] =
        static_cast<uint8_t>(rng.uniform_int(5));
  festa::FestaConfig fcfg;

  for (auto _ : state) {
    ad::Tape<float> tape;
    auto weights = model::stage_parameters(tape, params, true);
    auto out = model::forward(tape, tape.leaf(image, false), cfg, weights);
    auto loss = festa::combined_loss(out.logits, labels, out.features, fcfg);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.scalar());
  }
}
BENCHMARK(BM_model_forward_backward)->Arg(64);

void BM_festa_selection(benchmark::State& state) {
  const int hw = static_cast<int>(state.range(0));
  Rng rng(4);
  std::vector<float> features(static_cast<size_t>(hw) * hw * 32);
  for (float& v : features) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto _ : state) {
    auto sel = festa::select_neighbors(features.data(), hw, hw, 32, 4096);
    benchmark::DoNotOptimize(sel.anchors.data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t{hw} * hw);
}
BENCHMARK(BM_festa_selection)->Arg(16)->Arg(32);

void BM_crf_exact(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  synth::SceneSpec spec;
  spec.seed = 5;
  spec.height = size;
  spec.width = size;
  spec.num_classes = 4;
  spec.min_region = 8;
  const synth::Scene scene = synth::generate_scene(spec);
  Rng rng(6);
  crf::ProbMap probs(size, size, 4);
  for (int i = 0; i < size * size; ++i) {
    double raw[4], sum = 0;
    for (int l = 0; l < 4; ++l) {
      raw[l] = rng.uniform(0.05, 1.0);
      sum += raw[l];
    }
    for (int l = 0; l < 4; ++l)
      probs.p[static_cast<size_t>(i) * 4 + l] = static_cast<float>(raw[l] / sum);
  }
  const crf::CrfParams params;
  for (auto _ : state) {
    auto out = crf::mean_field_exact(probs, scene.image, params);
    benchmark::DoNotOptimize(out.p.data());
  }
}
BENCHMARK(BM_crf_exact)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_crf_fast(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  synth::SceneSpec spec;
  spec.seed = 5;
  spec.height = size;
  spec.width = size;
  spec.num_classes = 4;
  spec.min_region = 8;
  const synth::Scene scene = synth::generate_scene(spec);
  Rng rng(6);
  crf::ProbMap probs(size, size, 4);
  for (int i = 0; i < size * size; ++i) {
    double raw[4], sum = 0;
    for (int l = 0; l < 4; ++l) {
      raw[l] = rng.uniform(0.05, 1.0);
      sum += raw[l];
    }
    for (int l = 0; l < 4; ++l)
      probs.p[static_cast<size_t>(i) * 4 + l] = static_cast<float>(raw[l] / sum);
  }
  const crf::CrfParams params;
  for (auto _ : state) {
    auto out = crf::mean_field_fast(probs, scene.image, params);
    benchmark::DoNotOptimize(out.p.data());
  }
}
BENCHMARK(BM_crf_fast)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_rasterize_line(benchmark::State& state) {
  std::vector<annot::SparseAnnotation> annotations;
  Rng rng(8);
  for (int i = 0; i < 24; ++i) {
    annot::SparseAnnotation a;
    a.kind = annot::Kind::kLine;
    a.class_id = i % 5;
    a.coords = {{rng.uniform_int(128), rng.uniform_int(128)},
                {rng.uniform_int(128), rng.uniform_int(128)}};
    annotations.push_back(a);
  }
  for (auto _ : state) {
    auto out = annot::rasterize(annotations, 128, 128, 5, 3);
    benchmark::DoNotOptimize(out.labels.values.data());
  }
}
BENCHMARK(BM_rasterize_line);

}  // namespace

BENCHMARK_MAIN();
