#include "fseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "fseg/rng.hpp"

namespace fseg::ad {

namespace {

double evaluate(const ScalarClosure& fn, std::span<const ArrayD> inputs) {
  Tape<double> tape;
  std::vector<Tensor<double>> leaves;
  leaves.reserve(inputs.size());
  for (const ArrayD& in : inputs) leaves.push_back(tape.leaf(in, false));
  Tensor<double> out = fn(tape, leaves);
  return out.scalar();
}

}  // namespace

GradCheckReport gradcheck(const ScalarClosure& fn, std::span<const ArrayD> inputs,
                          const GradCheckOptions& options) {
  // Analytic pass.
  Tape<double> tape;
  std::vector<Tensor<double>> leaves;
  leaves.reserve(inputs.size());
  for (const ArrayD& in : inputs) leaves.push_back(tape.leaf(in, true));
  Tensor<double> out = fn(tape, leaves);
  if (out.value().size() != 1)
    throw ValidationError("gradcheck: closure must produce a scalar output");
  tape.backward(out);

  std::vector<ArrayD> probe(inputs.begin(), inputs.end());
  Rng rng(options.sample_seed);
  GradCheckReport report;

  for (size_t i = 0; i < inputs.size(); ++i) {
    const std::span<const double> analytic = leaves[i].grad();
    const int64_t n = inputs[i].shape.count();

    std::vector<int64_t> elements(static_cast<size_t>(n));
    for (int64_t e = 0; e < n; ++e) elements[static_cast<size_t>(e)] = e;
    if (options.max_elements_per_input > 0 &&
        n > options.max_elements_per_input) {
      rng.shuffle(elements);
      elements.resize(static_cast<size_t>(options.max_elements_per_input));
      std::sort(elements.begin(), elements.end());
    }

    double max_abs_diff = 0.0;
    double scale = 0.0;
    for (int64_t e : elements) {
      const size_t idx = static_cast<size_t>(e);
      const double saved = probe[i].data[idx];
      probe[i].data[idx] = saved + options.step;
      const double f_plus = evaluate(fn, probe);
      probe[i].data[idx] = saved - options.step;
      const double f_minus = evaluate(fn, probe);
      probe[i].data[idx] = saved;

      const double numeric = (f_plus - f_minus) / (2.0 * options.step);
      max_abs_diff = std::max(max_abs_diff, std::abs(analytic[idx] - numeric));
      scale = std::max({scale, std::abs(analytic[idx]), std::abs(numeric)});
    }
    const double rel = max_abs_diff / std::max(scale, 1e-6);
    report.max_rel_error.push_back(rel);
    report.worst = std::max(report.worst, rel);
  }
  return report;
}

}  // namespace fseg::ad
