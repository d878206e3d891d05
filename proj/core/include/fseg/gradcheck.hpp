#pragma once

#include <functional>
#include <span>
#include <vector>

#include "fseg/tensor.hpp"

namespace fseg::ad {

// Builds a scalar graph from leaves the harness creates; the leaves arrive
// in the same order as the inputs passed to gradcheck().
using ScalarClosure =
    std::function<Tensor<double>(Tape<double>&, std::span<const Tensor<double>>)>;

struct GradCheckOptions {
  double step = 1e-4;           // central-difference step, 64-bit mode
  // Elements perturbed per input; 0 checks every element. Large inputs are
  // probed on a seeded subsample to keep the harness fast.
  int max_elements_per_input = 0;
  uint64_t sample_seed = 0x5eed;
};

struct GradCheckReport {
  // Per input: max |analytic - numeric| scaled by the larger of the two
  // gradients' max magnitudes (floored at 1e-6).
  std::vector<double> max_rel_error;
  double worst = 0.0;

  bool pass(double tolerance) const { return worst <= tolerance; }
};

// Compares the tape's analytic gradients against central finite differences
// of the closure. The closure must return a scalar; non-scalar outputs are
// rejected.
GradCheckReport gradcheck(const ScalarClosure& fn,
                          std::span<const ArrayD> inputs,
                          const GradCheckOptions& options = {});

}  // namespace fseg::ad
