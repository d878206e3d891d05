// fseg: synthetic scenes, sparse scribbles, relationally regularized
// training, CRF refinement and evaluation, end to end from one binary.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "fseg/annotations.hpp"
#include "fseg/checkpoint.hpp"
#include "fseg/config.hpp"
#include "fseg/crf.hpp"
#include "fseg/experiment.hpp"
#include "fseg/metrics.hpp"
#include "fseg/png_io.hpp"
#include "fseg/synth.hpp"
#include "fseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace fseg;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  int64_t seed = -1;  // overrides every stage seed when >= 0
};

cli::RunConfig load_config(const CommonArgs& args) {
  cli::RunConfig cfg = args.config_path.empty()
                           ? cli::RunConfig::from_json_text("{}")
                           : cli::RunConfig::from_file(args.config_path);
  if (!args.out_dir.empty()) cfg.paths.out_dir = args.out_dir;
  if (args.seed >= 0) {
    cfg.scene.seed = static_cast<uint64_t>(args.seed);
    cfg.scribble.seed = static_cast<uint64_t>(args.seed);
    cfg.train.seed = static_cast<uint64_t>(args.seed);
  }
  return cfg;
}

fs::path prepare_out_dir(const cli::RunConfig& cfg) {
  const fs::path dir(cfg.paths.out_dir);
  fs::create_directories(dir);
  cfg.save((dir / "effective_config.json").string());
  return dir;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "run configuration JSON");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "override scene/scribble/train seeds");
}

std::string require_path(const std::string& flag_value, const std::string& cfg_value,
                         const char* what) {
  if (!flag_value.empty()) return flag_value;
  if (!cfg_value.empty()) return cfg_value;
  throw ValidationError(std::string("missing ") + what +
                        " (flag or paths entry in the config)");
}

int cmd_synth(const CommonArgs& args) {
  const cli::RunConfig cfg = load_config(args);
  const fs::path dir = prepare_out_dir(cfg);
  const synth::Scene scene = synth::generate_scene(cfg.scene);
  write_png((dir / "image.png").string(), scene.image);
  write_label_png((dir / "labels.png").string(), scene.dense_labels);
  std::cout << "scene " << cfg.scene.width << "x" << cfg.scene.height << " with "
            << cfg.scene.num_classes << " classes -> " << dir.string() << "\n";
  return 0;
}

int cmd_scribble(const CommonArgs& args, const std::string& labels_flag,
                 const std::string& level_flag) {
  cli::RunConfig cfg = load_config(args);
  if (!level_flag.empty()) cfg.scribble.level = annot::kind_from_name(level_flag);
  const fs::path dir = prepare_out_dir(cfg);

  const std::string labels_path =
      require_path(labels_flag, cfg.paths.labels, "dense label PNG (--labels)");
  const LabelMap dense = read_label_png(labels_path);
  const auto result = synth::simulate_scribbles(dense, cfg.scribble);
  for (const std::string& warning : result.warnings)
    std::cerr << "warning: " << warning << "\n";

  annot::save_annotations((dir / "annotations.json").string(), result.annotations);
  const auto raster =
      annot::rasterize(result.annotations, dense.height, dense.width,
                       cfg.resolved_num_classes(), cfg.scribble_dilation);
  if (raster.conflicts > 0)
    std::cerr << "warning: " << raster.conflicts
              << " pixels overwritten by overlapping annotations\n";
  write_label_png((dir / "sparse_labels.png").string(), raster.labels);
  const auto counts = annot::count_labeled(raster.labels, cfg.resolved_num_classes());
  std::cout << result.annotations.size() << " annotations, " << counts.total
            << " labeled pixels -> " << dir.string() << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& image_flag,
              const std::string& labels_flag, bool weighted) {
  const cli::RunConfig cfg = load_config(args);
  const fs::path dir = prepare_out_dir(cfg);

  const std::string image_path =
      require_path(image_flag, cfg.paths.image, "training image (--image)");
  const std::string labels_path =
      require_path(labels_flag, cfg.paths.labels, "sparse label PNG (--labels)");
  const ImageU8 image = read_png(image_path);
  const LabelMap labels = read_label_png(labels_path);
  if (image.channels != cfg.model.in_channels)
    throw ValidationError("train: image channel count does not match the model");

  model::ModelConfig mcfg = cfg.model;
  mcfg.num_classes = cfg.resolved_num_classes();

  std::vector<double> weights;
  if (weighted)
    weights = festa::class_weights_from_labels(labels, mcfg.num_classes);

  const train::Sample sample{image, labels};
  const train::TrainResult result =
      train::train({sample}, {sample}, mcfg, cfg.festa, cfg.train, weights);

  ad::save_checkpoint((dir / "checkpoint.fseg").string(), result.params);
  train::save_history((dir / "history.csv").string(), result.history);
  std::cout << "trained " << cfg.train.max_steps << " steps, final loss "
            << result.history.back().train_loss << " -> " << dir.string() << "\n";
  return 0;
}

int cmd_predict(const CommonArgs& args, const std::string& image_flag,
                const std::string& checkpoint_flag) {
  const cli::RunConfig cfg = load_config(args);
  const fs::path dir = prepare_out_dir(cfg);

  const std::string image_path =
      require_path(image_flag, cfg.paths.image, "input image (--image)");
  const std::string ckpt_path =
      require_path(checkpoint_flag, cfg.paths.checkpoint, "checkpoint (--checkpoint)");
  const ImageU8 image = read_png(image_path);
  const ad::ParamStore params = ad::load_checkpoint(ckpt_path);

  model::ModelConfig mcfg = cfg.model;
  mcfg.num_classes = cfg.resolved_num_classes();
  const crf::ProbMap probs = train::predict(image, params, mcfg);
  crf::write_pmap((dir / "probs.pmap").string(), probs);
  write_label_png((dir / "pred.png").string(), crf::argmax_labels(probs));
  std::cout << "predicted " << image.width << "x" << image.height << " -> "
            << dir.string() << "\n";
  return 0;
}

int cmd_refine(const CommonArgs& args, const std::string& image_flag,
               const std::string& probs_flag, bool refined_pmap) {
  const cli::RunConfig cfg = load_config(args);
  const fs::path dir = prepare_out_dir(cfg);

  const std::string image_path =
      require_path(image_flag, cfg.paths.image, "input image (--image)");
  const std::string probs_path =
      require_path(probs_flag, cfg.paths.probs, "probability map (--probs)");
  const ImageU8 image = read_png(image_path);
  const crf::ProbMap probs = crf::read_pmap(probs_path);

  const crf::ProbMap refined = crf::mean_field_fast(probs, image, cfg.crf);
  write_label_png((dir / "refined.png").string(), crf::argmax_labels(refined));
  if (refined_pmap) crf::write_pmap((dir / "refined.pmap").string(), refined);
  std::cout << "refined with " << cfg.crf.iterations << " mean-field iterations -> "
            << dir.string() << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& gt_flag,
             const std::string& pred_flag, const std::vector<int>& exclude) {
  const cli::RunConfig cfg = load_config(args);
  const fs::path dir = prepare_out_dir(cfg);

  const std::string gt_path =
      require_path(gt_flag, cfg.paths.ground_truth, "ground truth PNG (--gt)");
  const std::string pred_path =
      require_path(pred_flag, cfg.paths.predictions, "prediction PNG (--pred)");
  const LabelMap gt = read_label_png(gt_path);
  const LabelMap pred = read_label_png(pred_path);

  const std::set<int> excluded(exclude.begin(), exclude.end());
  const auto cm = metrics::accumulate(gt, pred, cfg.resolved_num_classes(), excluded);
  const auto scores = metrics::scores(cm);

  std::cout << metrics::scores_table(scores);
  std::ofstream json((dir / "metrics.json").string(), std::ios::binary);
  if (!json) throw ValidationError("eval: cannot create metrics.json");
  json << metrics::scores_to_json(scores);
  return 0;
}

int cmd_experiment(const CommonArgs& args, const std::string& preset,
                   std::vector<uint64_t> seeds, int parallel) {
  cli::RunConfig cfg = load_config(args);
  if (args.config_path.empty()) {
    // experiment preset: converge the supervised term within the step budget
    cfg.train.lr = 2e-3;
    cfg.train.max_steps = 150;
    cfg.festa.lambda = 0.01;
  }
  if (!preset.empty()) cfg.scribble.level = annot::kind_from_name(preset);
  if (seeds.empty()) seeds = {1, 2, 3, 4, 5};
  const fs::path dir = prepare_out_dir(cfg);

  const cli::ExperimentReport report = cli::run_experiment(cfg, seeds, parallel);
  std::cout << report.markdown();
  std::ofstream md((dir / "report.md").string(), std::ios::binary);
  md << report.markdown();
  std::ofstream json((dir / "report.json").string(), std::ios::binary);
  json << report.json();
  std::cout << "report -> " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse-scribble semantic segmentation workbench"};
  app.require_subcommand(1);

  CommonArgs synth_args, scribble_args, train_args, predict_args, refine_args,
      eval_args, experiment_args;
  std::string scribble_labels, scribble_level;
  std::string train_image, train_labels;
  bool train_weighted = false;
  std::string predict_image, predict_checkpoint;
  std::string refine_image, refine_probs;
  bool refine_write_pmap = false;
  std::string eval_gt, eval_pred;
  std::vector<int> eval_exclude;
  std::string experiment_preset;
  std::vector<uint64_t> experiment_seeds;
  int experiment_parallel = 2;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic scene");
  add_common(synth, synth_args);

  CLI::App* scribble =
      app.add_subcommand("scribble", "simulate sparse annotations on dense labels");
  add_common(scribble, scribble_args);
  scribble->add_option("--labels", scribble_labels, "dense label PNG");
  scribble->add_option("--level", scribble_level, "point|line|polygon");

  CLI::App* train_cmd = app.add_subcommand("train", "train on sparse labels");
  add_common(train_cmd, train_args);
  train_cmd->add_option("--image", train_image, "training image PNG");
  train_cmd->add_option("--labels", train_labels, "sparse label PNG");
  train_cmd->add_flag("--weighted", train_weighted,
                      "class-weighted cross entropy (the WL baseline)");

  CLI::App* predict = app.add_subcommand("predict", "write class probabilities");
  add_common(predict, predict_args);
  predict->add_option("--image", predict_image, "input image PNG");
  predict->add_option("--checkpoint", predict_checkpoint, "trained checkpoint");

  CLI::App* refine = app.add_subcommand("refine", "CRF-refine a probability map");
  add_common(refine, refine_args);
  refine->add_option("--image", refine_image, "input image PNG");
  refine->add_option("--probs", refine_probs, "probability map file");
  refine->add_flag("--refined-pmap", refine_write_pmap,
                   "also write the refined probabilities");

  CLI::App* eval = app.add_subcommand("eval", "score predictions against dense labels");
  add_common(eval, eval_args);
  eval->add_option("--gt", eval_gt, "dense ground-truth PNG");
  eval->add_option("--pred", eval_pred, "prediction PNG");
  eval->add_option("--exclude", eval_exclude, "class ids excluded from scoring");

  CLI::App* experiment =
      app.add_subcommand("experiment", "multi-seed method comparison");
  add_common(experiment, experiment_args);
  experiment->add_option("--preset", experiment_preset,
                         "annotation level: point|line|polygon");
  experiment->add_option("--seeds", experiment_seeds, "scene seeds (>= 2)");
  experiment->add_option("--parallel", experiment_parallel,
                         "seeds trained concurrently");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_args);
    if (scribble->parsed())
      return cmd_scribble(scribble_args, scribble_labels, scribble_level);
    if (train_cmd->parsed())
      return cmd_train(train_args, train_image, train_labels, train_weighted);
    if (predict->parsed())
      return cmd_predict(predict_args, predict_image, predict_checkpoint);
    if (refine->parsed())
      return cmd_refine(refine_args, refine_image, refine_probs, refine_write_pmap);
    if (eval->parsed()) return cmd_eval(eval_args, eval_gt, eval_pred, eval_exclude);
    if (experiment->parsed())
      return cmd_experiment(experiment_args, experiment_preset, experiment_seeds,
                            experiment_parallel);
  } catch (const ValidationError& e) {
    std::cerr << "error[validation]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error[runtime]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
