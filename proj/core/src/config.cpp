#include "fseg/config.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fseg::cli {

namespace {

using Json = nlohmann::ordered_json;

void check_keys(const Json& obj, const std::string& section,
                std::initializer_list<const char*> allowed) {
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (key == a) {
        known = true;
        break;
      }
    if (!known)
      throw ValidationError("config: unknown key \"" + key + "\" in " + section);
  }
}

template <typename T>
void read_number(const Json& obj, const char* key, T& value) {
  if (!obj.contains(key)) return;
  const Json& v = obj[key];
  if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number())
      throw ValidationError(std::string("config: \"") + key + "\" must be a number");
  } else {
    if (!v.is_number_integer() && !v.is_number_unsigned())
      throw ValidationError(std::string("config: \"") + key + "\" must be an integer");
  }
  value = v.get<T>();
}

void read_string(const Json& obj, const char* key, std::string& value) {
  if (!obj.contains(key)) return;
  if (!obj[key].is_string())
    throw ValidationError(std::string("config: \"") + key + "\" must be a string");
  value = obj[key].get<std::string>();
}

}  // namespace

int RunConfig::resolved_num_classes() const {
  return model.num_classes > 0 ? model.num_classes : scene.num_classes;
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!root.is_object())
    throw ValidationError("config: top-level JSON value must be an object");
  check_keys(root, "config",
             {"scene", "scribble", "model", "festa", "crf", "train", "paths"});

  RunConfig cfg;
  cfg.model.num_classes = 0;  // 0 inherits the scene's class count

  if (root.contains("scene")) {
    const Json& j = root["scene"];
    check_keys(j, "scene",
               {"seed", "height", "width", "num_classes", "noise_sigma", "min_region"});
    read_number(j, "seed", cfg.scene.seed);
    read_number(j, "height", cfg.scene.height);
    read_number(j, "width", cfg.scene.width);
    read_number(j, "num_classes", cfg.scene.num_classes);
    read_number(j, "noise_sigma", cfg.scene.noise_sigma);
    read_number(j, "min_region", cfg.scene.min_region);
  }
  if (root.contains("scribble")) {
    const Json& j = root["scribble"];
    check_keys(j, "scribble",
               {"level", "objects_per_class", "boundary_margin", "seed",
                "dilation_radius"});
    std::string level = annot::kind_name(cfg.scribble.level);
    read_string(j, "level", level);
    cfg.scribble.level = annot::kind_from_name(level);
    read_number(j, "objects_per_class", cfg.scribble.objects_per_class);
    read_number(j, "boundary_margin", cfg.scribble.boundary_margin);
    read_number(j, "seed", cfg.scribble.seed);
    read_number(j, "dilation_radius", cfg.scribble_dilation);
  }
  if (root.contains("model")) {
    const Json& j = root["model"];
    check_keys(j, "model", {"in_channels", "widths", "num_classes", "fuse_channels"});
    read_number(j, "in_channels", cfg.model.in_channels);
    read_number(j, "num_classes", cfg.model.num_classes);
    read_number(j, "fuse_channels", cfg.model.fuse_channels);
    if (j.contains("widths")) {
      const Json& w = j["widths"];
      if (!w.is_array() || w.size() != 3)
        throw ValidationError("config: model.widths must be an array of 3 integers");
      for (size_t i = 0; i < 3; ++i) {
        if (!w[i].is_number_integer())
          throw ValidationError("config: model.widths entries must be integers");
        cfg.model.widths[i] = w[i].get<int>();
      }
    }
  }
  if (root.contains("festa")) {
    const Json& j = root["festa"];
    check_keys(j, "festa",
               {"alpha", "beta", "gamma", "lambda", "n_max", "normalization", "epsilon"});
    read_number(j, "alpha", cfg.festa.alpha);
    read_number(j, "beta", cfg.festa.beta);
    read_number(j, "gamma", cfg.festa.gamma);
    read_number(j, "lambda", cfg.festa.lambda);
    read_number(j, "n_max", cfg.festa.n_max);
    read_number(j, "epsilon", cfg.festa.epsilon);
    std::string norm =
        cfg.festa.normalization == festa::Normalization::kMean ? "mean" : "sum";
    read_string(j, "normalization", norm);
    if (norm == "mean")
      cfg.festa.normalization = festa::Normalization::kMean;
    else if (norm == "sum")
      cfg.festa.normalization = festa::Normalization::kSum;
    else
      throw ValidationError("config: festa.normalization must be \"mean\" or \"sum\"");
  }
  if (root.contains("crf")) {
    const Json& j = root["crf"];
    check_keys(j, "crf", {"theta1", "theta2", "theta3", "w1", "w2", "iterations"});
    read_number(j, "theta1", cfg.crf.theta1);
    read_number(j, "theta2", cfg.crf.theta2);
    read_number(j, "theta3", cfg.crf.theta3);
    read_number(j, "w1", cfg.crf.w1);
    read_number(j, "w2", cfg.crf.w2);
    read_number(j, "iterations", cfg.crf.iterations);
  }
  if (root.contains("train")) {
    const Json& j = root["train"];
    check_keys(j, "train",
               {"lr", "beta1", "beta2", "eps", "batch_size", "crop", "stride",
                "max_steps", "eval_interval", "plateau_patience", "plateau_delta",
                "lr_decay_factor", "seed"});
    read_number(j, "lr", cfg.train.lr);
    read_number(j, "beta1", cfg.train.beta1);
    read_number(j, "beta2", cfg.train.beta2);
    read_number(j, "eps", cfg.train.eps);
    read_number(j, "batch_size", cfg.train.batch_size);
    read_number(j, "crop", cfg.train.crop);
    read_number(j, "stride", cfg.train.stride);
    read_number(j, "max_steps", cfg.train.max_steps);
    read_number(j, "eval_interval", cfg.train.eval_interval);
    read_number(j, "plateau_patience", cfg.train.plateau_patience);
    read_number(j, "plateau_delta", cfg.train.plateau_delta);
    read_number(j, "lr_decay_factor", cfg.train.lr_decay_factor);
    read_number(j, "seed", cfg.train.seed);
  }
  if (root.contains("paths")) {
    const Json& j = root["paths"];
    check_keys(j, "paths",
               {"out_dir", "image", "labels", "annotations", "checkpoint", "probs",
                "predictions", "ground_truth"});
    read_string(j, "out_dir", cfg.paths.out_dir);
    read_string(j, "image", cfg.paths.image);
    read_string(j, "labels", cfg.paths.labels);
    read_string(j, "annotations", cfg.paths.annotations);
    read_string(j, "checkpoint", cfg.paths.checkpoint);
    read_string(j, "probs", cfg.paths.probs);
    read_string(j, "predictions", cfg.paths.predictions);
    read_string(j, "ground_truth", cfg.paths.ground_truth);
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("config: cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return from_json_text(buffer.str());
}

std::string RunConfig::to_json_text() const {
  Json root;
  root["scene"] = {{"seed", scene.seed},
                   {"height", scene.height},
                   {"width", scene.width},
                   {"num_classes", scene.num_classes},
                   {"noise_sigma", scene.noise_sigma},
                   {"min_region", scene.min_region}};
  root["scribble"] = {{"level", annot::kind_name(scribble.level)},
                      {"objects_per_class", scribble.resolved_objects_per_class()},
                      {"boundary_margin", scribble.boundary_margin},
                      {"seed", scribble.seed},
                      {"dilation_radius", scribble_dilation}};
  root["model"] = {{"in_channels", model.in_channels},
                   {"widths", model.widths},
                   {"num_classes", resolved_num_classes()},
                   {"fuse_channels", model.fuse_channels}};
  root["festa"] = {
      {"alpha", festa.alpha},
      {"beta", festa.beta},
      {"gamma", festa.gamma},
      {"lambda", festa.lambda},
      {"n_max", festa.n_max},
      {"normalization",
       festa.normalization == festa::Normalization::kMean ? "mean" : "sum"},
      {"epsilon", festa.epsilon}};
  root["crf"] = {{"theta1", crf.theta1}, {"theta2", crf.theta2},
                 {"theta3", crf.theta3}, {"w1", crf.w1},
                 {"w2", crf.w2},         {"iterations", crf.iterations}};
  root["train"] = {{"lr", train.lr},
                   {"beta1", train.beta1},
                   {"beta2", train.beta2},
                   {"eps", train.eps},
                   {"batch_size", train.batch_size},
                   {"crop", train.crop},
                   {"stride", train.stride},
                   {"max_steps", train.max_steps},
                   {"eval_interval", train.eval_interval},
                   {"plateau_patience", train.plateau_patience},
                   {"plateau_delta", train.plateau_delta},
                   {"lr_decay_factor", train.lr_decay_factor},
                   {"seed", train.seed}};
  root["paths"] = {{"out_dir", paths.out_dir},
                   {"image", paths.image},
                   {"labels", paths.labels},
                   {"annotations", paths.annotations},
                   {"checkpoint", paths.checkpoint},
                   {"probs", paths.probs},
                   {"predictions", paths.predictions},
                   {"ground_truth", paths.ground_truth}};
  return root.dump(2) + "\n";
}

void RunConfig::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("config: cannot create " + path);
  out << to_json_text();
  if (!out) throw Error("config: write failed for " + path);
}

}  // namespace fseg::cli
