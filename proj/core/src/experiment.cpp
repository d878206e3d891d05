#include "fseg/experiment.hpp"

#include <cmath>
#include <future>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fseg/annotations.hpp"
#include "fseg/crf.hpp"
#include "fseg/synth.hpp"
#include "fseg/trainer.hpp"

namespace fseg::cli {

namespace {

struct SeedOutcome {
  double wl_f1 = 0, wl_oa = 0;
  double festa_f1 = 0, festa_oa = 0;
  double crf_f1 = 0, crf_oa = 0;
};

metrics::Scores score_against(const LabelMap& gt, const LabelMap& pred, int k) {
  return metrics::scores(metrics::accumulate(gt, pred, k));
}

SeedOutcome run_seed(const RunConfig& config, uint64_t seed) {
  const int k = config.resolved_num_classes();

  synth::SceneSpec scene_spec = config.scene;
  scene_spec.seed = seed;
  const synth::Scene scene = synth::generate_scene(scene_spec);

  synth::ScribblePolicy policy = config.scribble;
  policy.seed = seed;
  const auto scribbles = synth::simulate_scribbles(scene.dense_labels, policy);
  const auto raster =
      annot::rasterize(scribbles.annotations, scene_spec.height,
                       scene_spec.width, k, config.scribble_dilation);

  model::ModelConfig mcfg = config.model;
  mcfg.num_classes = k;
  train::TrainConfig tcfg = config.train;
  tcfg.seed = seed;

  const train::Sample sample{scene.image, raster.labels};
  const std::vector<train::Sample> data = {sample};

  SeedOutcome outcome;
  {
    // class-weighted cross-entropy baseline
    festa::FestaConfig fcfg = config.festa;
    fcfg.lambda = 0.0;
    const auto weights = festa::class_weights_from_labels(raster.labels, k);
    const auto trained = train::train(data, data, mcfg, fcfg, tcfg, weights);
    const auto probs = train::predict(scene.image, trained.params, mcfg);
    const auto scores = score_against(scene.dense_labels, crf::argmax_labels(probs), k);
    outcome.wl_f1 = scores.mean_f1;
    outcome.wl_oa = scores.overall_accuracy;
  }
  {
    // relational regularizer, plain masked cross-entropy
    const festa::FestaConfig fcfg = config.festa;
    const auto trained = train::train(data, data, mcfg, fcfg, tcfg);
    const auto probs = train::predict(scene.image, trained.params, mcfg);
    const auto scores = score_against(scene.dense_labels, crf::argmax_labels(probs), k);
    outcome.festa_f1 = scores.mean_f1;
    outcome.festa_oa = scores.overall_accuracy;

    const LabelMap refined = crf::refine(probs, scene.image, config.crf);
    const auto crf_scores = score_against(scene.dense_labels, refined, k);
    outcome.crf_f1 = crf_scores.mean_f1;
    outcome.crf_oa = crf_scores.overall_accuracy;
  }
  return outcome;
}

}  // namespace

double MethodResult::mean(const std::vector<double>& v) const {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

double MethodResult::stddev(const std::vector<double>& v) const {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

ExperimentReport run_experiment(const RunConfig& config,
                                const std::vector<uint64_t>& seeds,
                                int parallel_seeds) {
  if (seeds.size() < 2)
    throw ValidationError("experiment: need at least 2 seeds");
  if (parallel_seeds < 1) parallel_seeds = 1;

  std::vector<SeedOutcome> outcomes(seeds.size());
  for (size_t begin = 0; begin < seeds.size();
       begin += static_cast<size_t>(parallel_seeds)) {
    const size_t end =
        std::min(seeds.size(), begin + static_cast<size_t>(parallel_seeds));
    std::vector<std::future<SeedOutcome>> batch;
    for (size_t i = begin; i < end; ++i)
      batch.push_back(std::async(std::launch::async, run_seed, std::cref(config),
                                 seeds[i]));
    for (size_t i = begin; i < end; ++i) outcomes[i] = batch[i - begin].get();
  }

  ExperimentReport report;
  report.seeds = seeds;
  MethodResult wl{"CE-WL", {}, {}};
  MethodResult fest{"CE+FESTA", {}, {}};
  MethodResult crf{"CE+FESTA+CRF", {}, {}};
  for (const SeedOutcome& o : outcomes) {
    wl.mean_f1.push_back(o.wl_f1);
    wl.oa.push_back(o.wl_oa);
    fest.mean_f1.push_back(o.festa_f1);
    fest.oa.push_back(o.festa_oa);
    crf.mean_f1.push_back(o.crf_f1);
    crf.oa.push_back(o.crf_oa);
  }
  report.methods = {wl, fest, crf};
  return report;
}

std::string ExperimentReport::markdown() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << "| Method | mean F1 | OA |\n";
  out << "|---|---|---|\n";
  for (const MethodResult& m : methods) {
    out << "| " << m.method << " | " << 100.0 * m.mean(m.mean_f1) << " ± "
        << 100.0 * m.stddev(m.mean_f1) << " | " << 100.0 * m.mean(m.oa) << " ± "
        << 100.0 * m.stddev(m.oa) << " |\n";
  }
  return out.str();
}

std::string ExperimentReport::json() const {
  nlohmann::ordered_json out;
  out["seeds"] = seeds;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const MethodResult& m : methods) {
    nlohmann::ordered_json row;
    row["method"] = m.method;
    row["mean_f1"] = {{"mean", m.mean(m.mean_f1)},
                      {"std", m.stddev(m.mean_f1)},
                      {"per_seed", m.mean_f1}};
    row["oa"] = {{"mean", m.mean(m.oa)}, {"std", m.stddev(m.oa)}, {"per_seed", m.oa}};
    rows.push_back(std::move(row));
  }
  out["methods"] = std::move(rows);
  return out.dump(2) + "\n";
}

}  // namespace fseg::cli
