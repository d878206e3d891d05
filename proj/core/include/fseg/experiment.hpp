#pragma once

#include <string>
#include <vector>

#include "fseg/config.hpp"
#include "fseg/metrics.hpp"

namespace fseg::cli {

// Per-seed protocol: synthesize a scene, scribble it at the chosen level,
// train on the sparse raster, then score dense predictions against the
// scene's full ground truth. Three methods share the data: a class-weighted
// cross-entropy baseline, the relationally regularized net, and the latter
// with CRF refinement of its probabilities.
struct MethodResult {
  std::string method;
  std::vector<double> mean_f1;  // per seed
  std::vector<double> oa;

  double mean(const std::vector<double>& v) const;
  double stddev(const std::vector<double>& v) const;
};

struct ExperimentReport {
  std::vector<uint64_t> seeds;
  std::vector<MethodResult> methods;

  std::string markdown() const;
  std::string json() const;
};

// Runs the full comparison. `config.scribble.level` selects the preset;
// seeds needs at least two entries. Seeds may run in parallel.
ExperimentReport run_experiment(const RunConfig& config,
                                const std::vector<uint64_t>& seeds,
                                int parallel_seeds = 2);

}  // namespace fseg::cli
