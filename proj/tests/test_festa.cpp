#include <doctest.h>

#include <cmath>
#include <vector>

#include "fseg/festa.hpp"
#include "fseg/gradcheck.hpp"
#include "fseg/rng.hpp"

using namespace fseg;
using namespace fseg::festa;
using fseg::ad::ArrayD;
using fseg::ad::Shape;
using fseg::ad::Tape;
using fseg::ad::Tensor;

namespace {

// Exhaustive O(N^2) selection oracle, written independently of the library
// path: plain loops over every candidate with the same tie rule.
NeighborSelection brute_force_selection(const std::vector<double>& feat, int h,
                                        int w, int c, int n_max) {
  const auto cosine = [&](int i, int j) {
    double dot = 0, ni = 0, nj = 0;
    for (int ch = 0; ch < c; ++ch) {
      const double a = feat[static_cast<size_t>(i) * c + ch];
      const double b = feat[static_cast<size_t>(j) * c + ch];
      dot += a * b;
      ni += a * a;
      nj += b * b;
    }
    return dot / (std::max(std::sqrt(ni), 1e-8) * std::max(std::sqrt(nj), 1e-8));
  };

  int stride = 1;
  while (((h + stride - 1) / stride) * ((w + stride - 1) / stride) > n_max) ++stride;

  NeighborSelection sel;
  sel.grid_height = h;
  sel.grid_width = w;
  for (int y = 0; y < h; y += stride)
    for (int x = 0; x < w; x += stride) sel.anchors.push_back(y * w + x);

  for (int i : sel.anchors) {
    int nf = -1, ff = -1;
    for (int j : sel.anchors) {
      if (j == i) continue;
      if (nf == -1 || cosine(i, j) > cosine(i, nf)) nf = j;
      if (ff == -1 || cosine(i, j) < cosine(i, ff)) ff = j;
    }
    int ns = -1;
    const int yi = i / w, xi = i % w;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dy == 0 && dx == 0) continue;
        const int yy = yi + dy, xx = xi + dx;
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        const int j = yy * w + xx;
        if (ns == -1 || cosine(i, j) > cosine(i, ns)) ns = j;
      }
    sel.nf.push_back(nf);
    sel.ff.push_back(ff);
    sel.ns.push_back(ns);
  }
  return sel;
}

}  // namespace

TEST_CASE("cosine similarity examples") {
  std::vector<double> a{3, 4}, b{4, 3};
  CHECK(cosine_similarity(a, b) == doctest::Approx(0.96));

  std::vector<double> e1{1, 0}, e2{0, 1};
  CHECK(cosine_similarity(e1, e2) == doctest::Approx(0.0));
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));

  std::vector<double> short_v{1};
  CHECK_THROWS_AS(cosine_similarity(a, short_v), ValidationError);
}

TEST_CASE("euclidean distance examples") {
  std::vector<double> o{0, 0}, p{3, 4};
  CHECK(euclidean_distance(o, p) == doctest::Approx(5.0));
  CHECK(euclidean_distance(p, p) == doctest::Approx(0.0));
  std::vector<double> u{1, 1}, v{2, 2};
  CHECK(euclidean_distance(u, v) == doctest::Approx(std::sqrt(2.0)));
  std::vector<double> short_v{1};
  CHECK_THROWS_AS(euclidean_distance(o, short_v), ValidationError);
}

TEST_CASE("select_neighbors on a 1x2 grid: forced choice") {
  const std::vector<double> feat = {1, 0, 0, 1};  // f0=(1,0), f1=(0,1)
  const auto sel = select_neighbors(feat.data(), 1, 2, 2, 4096);
  REQUIRE(sel.anchors.size() == 2);
  CHECK(sel.nf[0] == 1);
  CHECK(sel.ff[0] == 1);
  CHECK(sel.ns[0] == 1);
  CHECK(sel.nf[1] == 0);
  CHECK(sel.ff[1] == 0);
  CHECK(sel.ns[1] == 0);
}

TEST_CASE("identical features tie to the smallest index") {
  std::vector<double> feat(9 * 4, 0.5);
  const auto sel = select_neighbors(feat.data(), 3, 3, 4, 4096);
  REQUIRE(sel.anchors.size() == 9);
  for (size_t a = 0; a < sel.anchors.size(); ++a) {
    const int i = sel.anchors[a];
    const int expected = i == 0 ? 1 : 0;
    CHECK(sel.nf[a] == expected);
    CHECK(sel.ff[a] == expected);
    // ns: smallest linear index among the true 8-neighborhood
    const int yi = i / 3, xi = i % 3;
    int smallest = -1;
    for (int dy = -1; dy <= 1 && smallest < 0; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dy == 0 && dx == 0) continue;
        const int yy = yi + dy, xx = xi + dx;
        if (yy < 0 || yy >= 3 || xx < 0 || xx >= 3) continue;
        smallest = yy * 3 + xx;
        break;
      }
    CHECK(sel.ns[a] == smallest);
  }
}

TEST_CASE("selection equals brute force on random grids") {
  Rng rng(42);
  for (int trial = 0; trial < 40; ++trial) {
    const int h = 2 + rng.uniform_int(7);
    const int w = 1 + rng.uniform_int(8);
    if (h * w < 2) continue;
    const int c = 1 + rng.uniform_int(8);
    std::vector<double> feat(static_cast<size_t>(h) * w * c);
    for (double& v : feat) v = rng.uniform(-1, 1);
    // occasional duplicated rows exercise the tie rule
    if (trial % 4 == 0 && h * w >= 4)
      for (int ch = 0; ch < c; ++ch)
        feat[static_cast<size_t>(3) * c + ch] = feat[static_cast<size_t>(1) * c + ch];

    const auto got = select_neighbors(feat.data(), h, w, c, 4096);
    const auto expected = brute_force_selection(feat, h, w, c, 4096);
    REQUIRE(got.anchors == expected.anchors);
    CHECK(got.nf == expected.nf);
    CHECK(got.ff == expected.ff);
    CHECK(got.ns == expected.ns);
  }
}

TEST_CASE("anchor subsampling respects n_max and equals brute force") {
  Rng rng(43);
  const int h = 12, w = 10, c = 3;
  std::vector<double> feat(static_cast<size_t>(h) * w * c);
  for (double& v : feat) v = rng.uniform(-1, 1);
  const auto got = select_neighbors(feat.data(), h, w, c, 16);
  CHECK(got.anchors.size() <= 16);
  const auto expected = brute_force_selection(feat, h, w, c, 16);
  CHECK(got.anchors == expected.anchors);
  CHECK(got.nf == expected.nf);
  CHECK(got.ff == expected.ff);
  CHECK(got.ns == expected.ns);
}

TEST_CASE("selection is invariant to positive feature scaling") {
  Rng rng(44);
  const int h = 5, w = 4, c = 6;
  std::vector<double> feat(static_cast<size_t>(h) * w * c);
  for (double& v : feat) v = rng.uniform(-1, 1);
  std::vector<double> scaled = feat;
  for (double& v : scaled) v *= 37.5;

  const auto a = select_neighbors(feat.data(), h, w, c, 4096);
  const auto b = select_neighbors(scaled.data(), h, w, c, 4096);
  CHECK(a.nf == b.nf);
  CHECK(a.ff == b.ff);
  CHECK(a.ns == b.ns);
}

TEST_CASE("1x1 grid has no candidates") {
  const std::vector<double> feat = {1.0, 2.0};
  CHECK_THROWS_AS(select_neighbors(feat.data(), 1, 1, 2, 4096), ValidationError);
}

TEST_CASE("festa loss closed form on the 1x2 grid") {
  Tape<double> tape;
  auto features = tape.leaf(Shape{1, 2, 2}, {1, 0, 0, 1}, true);
  FestaConfig config;  // alpha 0.5, beta 1.5, gamma 1, mean normalization
  auto loss = festa_loss(features, config);
  CHECK(loss.scalar() == doctest::Approx(2.0 * std::sqrt(2.0)).epsilon(1e-9));
}

TEST_CASE("identical features: pulling terms vanish, pushing term resists") {
  Tape<double> tape;
  auto features = tape.leaf(Shape{2, 2, 3}, std::vector<double>(12, 0.7), true);
  FestaConfig config;
  auto loss = festa_loss(features, config);
  CHECK(loss.scalar() == doctest::Approx(1.0));  // gamma * S(x,x) = 1, mean norm

  // alpha and beta contribute no gradient at coincident points
  tape.backward(loss);
  FestaConfig push_only = config;
  push_only.alpha = 0.0;
  push_only.beta = 0.0;
  Tape<double> t2;
  auto f2 = t2.leaf(Shape{2, 2, 3}, std::vector<double>(12, 0.7), true);
  auto l2 = festa_loss(f2, push_only);
  t2.backward(l2);
  for (size_t i = 0; i < f2.grad().size(); ++i)
    CHECK(features.grad()[i] == doctest::Approx(f2.grad()[i]));
}

TEST_CASE("sum normalization doubles the 1x2 value") {
  Tape<double> tape;
  auto features = tape.leaf(Shape{1, 2, 2}, {1, 0, 0, 1}, false);
  FestaConfig config;
  config.normalization = Normalization::kSum;
  auto loss = festa_loss(features, config);
  CHECK(loss.scalar() == doctest::Approx(4.0 * std::sqrt(2.0)).epsilon(1e-9));
}

TEST_CASE("gradcheck: festa loss with frozen selection") {
  Rng rng(45);
  ArrayD feat(Shape{5, 5, 4});
  for (double& v : feat.data) v = rng.uniform(-1.0, 1.0);
  FestaConfig config;
  const auto selection = select_neighbors(feat.data.data(), 5, 5, 4, config.n_max);

  auto fn = [&](Tape<double>&, std::span<const Tensor<double>> leaves) {
    return festa_loss(leaves[0], config, selection);
  };
  const auto report = ad::gradcheck(fn, std::vector<ArrayD>{feat});
  CHECK(report.worst <= 1e-4);
}

TEST_CASE("a small step on festa loss decreases it (selection frozen)") {
  Rng rng(46);
  ArrayD feat(Shape{4, 4, 3});
  for (double& v : feat.data) v = rng.uniform(-1.0, 1.0);
  FestaConfig config;
  const auto selection =
      select_neighbors(feat.data.data(), 4, 4, 3, config.n_max);

  Tape<double> tape;
  auto leaf = tape.leaf(feat, true);
  auto loss = festa_loss(leaf, config, selection);
  const double before = loss.scalar();
  tape.backward(loss);

  ArrayD stepped = feat;
  const double step = 1e-3;
  for (size_t i = 0; i < stepped.data.size(); ++i)
    stepped.data[i] -= step * leaf.grad()[i];

  Tape<double> t2;
  auto leaf2 = t2.leaf(stepped, false);
  const double after = festa_loss(leaf2, config, selection).scalar();
  CHECK(after < before);
}

TEST_CASE("masked cross entropy examples") {
  // uniform logits: ln K regardless of labels
  Tape<double> tape;
  auto logits = tape.leaf(Shape{1, 2, 5}, std::vector<double>(10, 0.3), false);
  LabelMap labels(1, 2);
  labels.at(0, 0) = 3;
  auto loss = masked_cross_entropy(logits, labels);
  CHECK(loss.scalar() == doctest::Approx(std::log(5.0)).epsilon(1e-9));

  // confident correct logits drive the loss to zero
  auto confident = tape.leaf(Shape{1, 1, 3}, {50.0, 0.0, 0.0}, false);
  LabelMap one(1, 1);
  one.at(0, 0) = 0;
  CHECK(masked_cross_entropy(confident, one).scalar() ==
        doctest::Approx(0.0).epsilon(1e-9));

  // two labeled pixels, hand-evaluated softmax
  auto two = tape.leaf(Shape{1, 2, 2}, {2, 0, 0, 2}, false);
  LabelMap pair(1, 2);
  pair.at(0, 0) = 0;
  pair.at(0, 1) = 1;
  const double expected = -std::log(std::exp(2.0) / (std::exp(2.0) + 1.0));
  CHECK(masked_cross_entropy(two, pair).scalar() ==
        doctest::Approx(expected).epsilon(1e-9));
  CHECK(masked_cross_entropy(two, pair).scalar() == doctest::Approx(0.1269).epsilon(1e-3));
}

TEST_CASE("masked cross entropy ignores unlabeled logits") {
  Rng rng(47);
  Tape<double> tape;
  std::vector<double> base(4 * 3, 0.0);
  for (double& v : base) v = rng.uniform(-2, 2);
  std::vector<double> perturbed = base;
  // pixel 2 stays unlabeled; scramble its logits
  for (int c = 0; c < 3; ++c) perturbed[2 * 3 + c] = rng.uniform(-9, 9);

  LabelMap labels(2, 2);
  labels.at(0, 0) = 0;
  labels.at(0, 1) = 2;
  labels.at(1, 1) = 1;  // (1,0) unlabeled

  auto a = masked_cross_entropy(tape.leaf(Shape{2, 2, 3}, base, false), labels);
  auto b = masked_cross_entropy(tape.leaf(Shape{2, 2, 3}, perturbed, false), labels);
  CHECK(a.scalar() == b.scalar());
}

TEST_CASE("masked cross entropy needs a labeled pixel") {
  Tape<double> tape;
  auto logits = tape.leaf(Shape{2, 2, 3}, std::vector<double>(12, 0.0), false);
  LabelMap empty(2, 2);
  CHECK_THROWS_AS(masked_cross_entropy(logits, empty), ValidationError);
}

TEST_CASE("gradcheck: masked cross entropy with class weights") {
  Rng rng(48);
  ArrayD logits(Shape{4, 4, 3});
  for (double& v : logits.data) v = rng.uniform(-2.0, 2.0);
  LabelMap labels(4, 4);
  for (int i = 0; i < 9; ++i)
    labels.values[static_cast<size_t>(rng.uniform_int(16))] =
        static_cast<uint8_t>(rng.uniform_int(3));
  const std::vector<double> weights = {0.4, 1.9, 0.7};

  auto fn = [&](Tape<double>&, std::span<const Tensor<double>> leaves) {
    return masked_cross_entropy(leaves[0], labels, weights);
  };
  CHECK(ad::gradcheck(fn, std::vector<ArrayD>{logits}).worst <= 1e-4);
}

TEST_CASE("combined loss reduces to cross entropy at lambda zero") {
  Rng rng(49);
  Tape<double> tape;
  ArrayD logits(Shape{4, 4, 3});
  for (double& v : logits.data) v = rng.uniform(-2.0, 2.0);
  ArrayD feat(Shape{2, 2, 4});
  for (double& v : feat.data) v = rng.uniform(-1.0, 1.0);
  LabelMap labels(4, 4);
  labels.at(0, 0) = 1;
  labels.at(3, 2) = 2;

  auto lt = tape.leaf(logits, false);
  auto ft = tape.leaf(feat, false);
  FestaConfig config;
  config.lambda = 0.0;
  auto combined = combined_loss(lt, labels, ft, config);
  auto ce = masked_cross_entropy(lt, labels);
  CHECK(combined.scalar() == ce.scalar());  // bit-exact

  // linearity: L = CE + lambda * FESTA
  config.lambda = 1.0;
  auto full = combined_loss(lt, labels, ft, config);
  auto relational = festa_loss(ft, config);
  CHECK(full.scalar() ==
        doctest::Approx(ce.scalar() + relational.scalar()).epsilon(1e-12));

  config.lambda = 0.25;
  auto quarter = combined_loss(lt, labels, ft, config);
  CHECK(quarter.scalar() ==
        doctest::Approx(ce.scalar() + 0.25 * relational.scalar()).epsilon(1e-12));
}

TEST_CASE("class weights from labels") {
  // balanced counts: unit weights
  LabelMap balanced(1, 4);
  balanced.at(0, 0) = 0;
  balanced.at(0, 1) = 0;
  balanced.at(0, 2) = 1;
  balanced.at(0, 3) = 1;
  const auto w_bal = class_weights_from_labels(balanced, 2, 0.0);
  CHECK(w_bal[0] == doctest::Approx(1.0));
  CHECK(w_bal[1] == doctest::Approx(1.0));

  // counts 90/10 with zero smoothing rescale to (0.2, 1.8)
  LabelMap skewed(10, 10);
  for (int i = 0; i < 100; ++i)
    skewed.values[static_cast<size_t>(i)] = i < 90 ? 0 : 1;
  const auto w = class_weights_from_labels(skewed, 2, 0.0);
  CHECK(w[0] == doctest::Approx(0.2));
  CHECK(w[1] == doctest::Approx(1.8));

  // a single present class gets weight 1, absent classes 0
  LabelMap single(2, 2);
  single.at(0, 0) = 2;
  const auto w_single = class_weights_from_labels(single, 4, 1.0);
  CHECK(w_single[2] == doctest::Approx(1.0));
  CHECK(w_single[0] == 0.0);
  CHECK(w_single[1] == 0.0);
  CHECK(w_single[3] == 0.0);

  LabelMap empty(2, 2);
  CHECK_THROWS_AS(class_weights_from_labels(empty, 2, 1.0), ValidationError);
}
