#include <doctest.h>

#include <algorithm>

#include "fseg/metrics.hpp"
#include "fseg/rng.hpp"

using namespace fseg;
using namespace fseg::metrics;

namespace {

LabelMap from_values(int h, int w, std::initializer_list<int> values) {
  LabelMap m(h, w);
  size_t i = 0;
  for (int v : values) m.values[i++] = static_cast<uint8_t>(v);
  return m;
}

}  // namespace

TEST_CASE("accumulate counts the worked example") {
  const LabelMap gt = from_values(1, 6, {0, 0, 0, 1, 1, 1});
  const LabelMap pred = from_values(1, 6, {0, 0, 1, 1, 1, 1});
  const ConfusionMatrix cm = accumulate(gt, pred, 2);
  CHECK(cm.at(0, 0) == 2);
  CHECK(cm.at(0, 1) == 1);
  CHECK(cm.at(1, 0) == 0);
  CHECK(cm.at(1, 1) == 3);
  CHECK(cm.total() == 6);
}

TEST_CASE("perfect prediction is diagonal with unit scores") {
  Rng rng(1);
  LabelMap gt(8, 8);
  for (uint8_t& v : gt.values) v = static_cast<uint8_t>(rng.uniform_int(4));
  const ConfusionMatrix cm = accumulate(gt, gt, 4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      if (r != c) CHECK(cm.at(r, c) == 0);
  const Scores s = scores(cm);
  for (double f1 : s.f1) CHECK(f1 == doctest::Approx(1.0));
  CHECK(s.mean_f1 == doctest::Approx(1.0));
  CHECK(s.overall_accuracy == doctest::Approx(1.0));
}

TEST_CASE("unlabeled ground truth never counts") {
  LabelMap gt(2, 2);  // all 255
  LabelMap pred(2, 2, 0);
  const ConfusionMatrix cm = accumulate(gt, pred, 3);
  CHECK(cm.total() == 0);
  CHECK_THROWS_AS(scores(cm), ValidationError);
}

TEST_CASE("scores of the worked confusion matrix") {
  ConfusionMatrix cm(2);
  cm.at(0, 0) = 2;
  cm.at(0, 1) = 1;
  cm.at(1, 0) = 0;
  cm.at(1, 1) = 3;
  const Scores s = scores(cm);
  CHECK(s.f1[0] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(s.f1[1] == doctest::Approx(6.0 / 7.0).epsilon(1e-12));
  CHECK(s.mean_f1 == doctest::Approx(0.5 * (0.8 + 6.0 / 7.0)).epsilon(1e-12));
  CHECK(s.overall_accuracy == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("degenerate classes score zero; absent classes leave the mean") {
  ConfusionMatrix cm(3);
  cm.at(0, 0) = 4;
  cm.at(1, 0) = 2;  // class 1 present in gt, never predicted: F1 0
  // class 2 appears nowhere: excluded from the mean
  const Scores s = scores(cm);
  CHECK(s.f1[1] == 0.0);
  CHECK(s.f1[2] == 0.0);
  CHECK(s.mean_f1 == doctest::Approx(0.5 * (s.f1[0] + 0.0)));
}

TEST_CASE("class exclusion removes gt rows") {
  const LabelMap gt = from_values(1, 4, {0, 1, 2, 2});
  const LabelMap pred = from_values(1, 4, {0, 1, 0, 2});
  const ConfusionMatrix cm = accumulate(gt, pred, 3, {2});
  CHECK(cm.total() == 2);
  CHECK(cm.at(2, 2) == 0);
  CHECK(cm.at(2, 0) == 0);
}

TEST_CASE("dim mismatch and unlabeled predictions are rejected") {
  LabelMap gt(2, 2, 0);
  LabelMap wide(2, 3, 0);
  CHECK_THROWS_AS(accumulate(gt, wide, 2), ValidationError);
  LabelMap holes(2, 2);
  holes.at(0, 0) = 0;  // rest unlabeled
  CHECK_THROWS_AS(accumulate(gt, holes, 2), ValidationError);
}

TEST_CASE("scores lie in [0,1] and permutation equivariance holds") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 2 + rng.uniform_int(5);
    ConfusionMatrix cm(k);
    for (int64_t& v : cm.counts) v = rng.uniform_int(20);
    if (cm.total() == 0) cm.at(0, 0) = 1;
    const Scores s = scores(cm);
    for (double f1 : s.f1) {
      CHECK(f1 >= 0.0);
      CHECK(f1 <= 1.0);
    }
    CHECK(s.overall_accuracy >= 0.0);
    CHECK(s.overall_accuracy <= 1.0);

    // permute classes consistently
    std::vector<int> perm(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) perm[static_cast<size_t>(i)] = i;
    rng.shuffle(perm);
    ConfusionMatrix permuted(k);
    for (int r = 0; r < k; ++r)
      for (int c = 0; c < k; ++c)
        permuted.at(perm[static_cast<size_t>(r)], perm[static_cast<size_t>(c)]) =
            cm.at(r, c);
    const Scores sp = scores(permuted);
    CHECK(sp.mean_f1 == doctest::Approx(s.mean_f1).epsilon(1e-12));
    CHECK(sp.overall_accuracy == doctest::Approx(s.overall_accuracy).epsilon(1e-12));
    for (int c = 0; c < k; ++c)
      CHECK(sp.f1[static_cast<size_t>(perm[static_cast<size_t>(c)])] ==
            doctest::Approx(s.f1[static_cast<size_t>(c)]).epsilon(1e-12));
  }
}

TEST_CASE("matrices merge by addition") {
  ConfusionMatrix a(2), b(2);
  a.at(0, 0) = 3;
  a.at(1, 0) = 1;
  b.at(0, 1) = 2;
  b.at(1, 1) = 5;
  a += b;
  CHECK(a.at(0, 0) == 3);
  CHECK(a.at(0, 1) == 2);
  CHECK(a.at(1, 0) == 1);
  CHECK(a.at(1, 1) == 5);
  ConfusionMatrix wrong(3);
  CHECK_THROWS_AS(a += wrong, ValidationError);
}

TEST_CASE("scores JSON carries f1 map, mean_f1 and oa") {
  ConfusionMatrix cm(2);
  cm.at(0, 0) = 2;
  cm.at(0, 1) = 1;
  cm.at(1, 1) = 3;
  const std::string json = scores_to_json(scores(cm));
  CHECK(json.find("\"f1\"") != std::string::npos);
  CHECK(json.find("\"mean_f1\"") != std::string::npos);
  CHECK(json.find("\"oa\"") != std::string::npos);
  CHECK(json.find("\"0\"") != std::string::npos);
  CHECK(json.find("\"1\"") != std::string::npos);
}
