#pragma once

#include <string>

#include "fseg/crf.hpp"
#include "fseg/festa.hpp"
#include "fseg/model.hpp"
#include "fseg/synth.hpp"
#include "fseg/trainer.hpp"

namespace fseg::cli {

struct Paths {
  std::string out_dir = "out";
  std::string image;        // input image PNG
  std::string labels;       // label PNG (dense or sparse, command-dependent)
  std::string annotations;  // annotation JSON
  std::string checkpoint;
  std::string probs;        // ProbMap file
  std::string predictions;  // predicted label PNG
  std::string ground_truth; // dense label PNG for eval
};

// One JSON document configures every stage; unknown keys are rejected and
// every omitted field materializes to its default so the echoed effective
// config reproduces the run.
struct RunConfig {
  synth::SceneSpec scene;
  synth::ScribblePolicy scribble;
  int scribble_dilation = 3;  // rasterization radius for points and lines
  model::ModelConfig model;
  festa::FestaConfig festa;
  crf::CrfParams crf;
  train::TrainConfig train;
  Paths paths;

  // Model class count defaults to the scene's unless set explicitly (> 0).
  int resolved_num_classes() const;

  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_file(const std::string& path);
  std::string to_json_text() const;  // effective config, defaults materialized
  void save(const std::string& path) const;
};

}  // namespace fseg::cli
