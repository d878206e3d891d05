#include "fseg/festa.hpp"

#include <algorithm>
#include <cmath>

#include "fseg/detail/tape_state.hpp"

namespace fseg::festa {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// Similarities are always evaluated in double so float and double feature
// grids select identically.
template <typename T>
std::vector<double> to_double(const T* data, size_t n) {
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = static_cast<double>(data[i]);
  return out;
}

double guarded_norm(std::span<const double> v, double epsilon) {
  return std::max(std::sqrt(dot(v, v)), epsilon);
}

// Smallest stride whose coarse grid fits the anchor budget.
int anchor_stride(int height, int width, int n_max) {
  for (int s = 1;; ++s) {
    const int rows = (height + s - 1) / s;
    const int cols = (width + s - 1) / s;
    if (static_cast<int64_t>(rows) * cols <= n_max) return s;
  }
}

}  // namespace

void FestaConfig::validate() const {
  if (alpha < 0 || beta < 0 || gamma < 0 || lambda < 0)
    throw ValidationError("festa: alpha, beta, gamma and lambda must be >= 0");
  if (n_max < 2) throw ValidationError("festa: n_max must be >= 2");
  if (epsilon <= 0) throw ValidationError("festa: epsilon must be > 0");
}

double cosine_similarity(std::span<const double> a, std::span<const double> b,
                         double epsilon) {
  if (a.size() != b.size())
    throw ValidationError("cosine_similarity: length mismatch");
  return dot(a, b) / (guarded_norm(a, epsilon) * guarded_norm(b, epsilon));
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw ValidationError("euclidean_distance: length mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

template <typename T>
NeighborSelection select_neighbors(const T* features, int height, int width,
                                   int channels, int n_max) {
  if (height * width < 2)
    throw ValidationError("select_neighbors: grid needs at least 2 positions");
  if (n_max < 2) throw ValidationError("select_neighbors: n_max must be >= 2");

  const std::vector<double> feat =
      to_double(features, static_cast<size_t>(height) * width * channels);
  const auto vec = [&](int pos) {
    return std::span<const double>(feat.data() + static_cast<size_t>(pos) * channels,
                                   static_cast<size_t>(channels));
  };

  NeighborSelection sel;
  sel.grid_height = height;
  sel.grid_width = width;

  const int stride = anchor_stride(height, width, n_max);
  for (int y = 0; y < height; y += stride)
    for (int x = 0; x < width; x += stride) sel.anchors.push_back(y * width + x);

  const double eps = 1e-8;
  std::vector<double> norms(sel.anchors.size());
  for (size_t a = 0; a < sel.anchors.size(); ++a)
    norms[a] = guarded_norm(vec(sel.anchors[a]), eps);

  sel.nf.resize(sel.anchors.size());
  sel.ff.resize(sel.anchors.size());
  sel.ns.resize(sel.anchors.size());

  for (size_t a = 0; a < sel.anchors.size(); ++a) {
    const int i = sel.anchors[a];
    const auto vi = vec(i);

    // nf/ff over fellow anchors; ascending index order makes the smallest
    // index win ties.
    double best_sim = 0.0, worst_sim = 0.0;
    int best_at = -1, worst_at = -1;
    for (size_t c = 0; c < sel.anchors.size(); ++c) {
      const int j = sel.anchors[c];
      if (j == i) continue;
      const double sim = dot(vi, vec(j)) / (norms[a] * norms[c]);
      if (best_at < 0 || sim > best_sim) {
        best_sim = sim;
        best_at = j;
      }
      if (worst_at < 0 || sim < worst_sim) {
        worst_sim = sim;
        worst_at = j;
      }
    }
    if (best_at < 0)
      throw ValidationError("select_neighbors: no candidates for anchor");
    sel.nf[a] = best_at;
    sel.ff[a] = worst_at;

    // ns over the true 8-neighborhood of the full-resolution grid.
    const int yi = i / width, xi = i % width;
    double ns_sim = 0.0;
    int ns_at = -1;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dy == 0 && dx == 0) continue;
        const int yy = yi + dy, xx = xi + dx;
        if (yy < 0 || yy >= height || xx < 0 || xx >= width) continue;
        const int j = yy * width + xx;
        const double sim =
            dot(vi, vec(j)) / (norms[a] * guarded_norm(vec(j), eps));
        if (ns_at < 0 || sim > ns_sim) {
          ns_sim = sim;
          ns_at = j;
        }
      }
    }
    sel.ns[a] = ns_at;
  }
  return sel;
}

template NeighborSelection select_neighbors(const float*, int, int, int, int);
template NeighborSelection select_neighbors(const double*, int, int, int, int);

template <typename T>
NeighborSelection select_neighbors(ad::Tensor<T> features, int n_max) {
  const ad::Shape& s = features.shape();
  if (s.rank() != 3)
    throw ValidationError("select_neighbors: features must be [h,w,C], got " + s.str());
  return select_neighbors(features.value().data(), s[0], s[1], s[2], n_max);
}

template NeighborSelection select_neighbors(ad::Tensor<float>, int);
template NeighborSelection select_neighbors(ad::Tensor<double>, int);

template <typename T>
ad::Tensor<T> festa_loss(ad::Tensor<T> features, const FestaConfig& config) {
  config.validate();
  const ad::Shape& s = features.shape();
  if (s.rank() != 3)
    throw ValidationError("festa_loss: features must be [h,w,C], got " + s.str());
  return festa_loss(features, config,
                    select_neighbors(features.value().data(), s[0], s[1], s[2],
                                     config.n_max));
}

template ad::Tensor<float> festa_loss(ad::Tensor<float>, const FestaConfig&);
template ad::Tensor<double> festa_loss(ad::Tensor<double>, const FestaConfig&);

template <typename T>
ad::Tensor<T> festa_loss(ad::Tensor<T> features, const FestaConfig& config,
                         const NeighborSelection& selection) {
  config.validate();
  const ad::Shape& s = features.shape();
  if (s.rank() != 3)
    throw ValidationError("festa_loss: features must be [h,w,C], got " + s.str());
  const int h = s[0], w = s[1], c = s[2];
  if (selection.grid_height != h || selection.grid_width != w)
    throw ValidationError("festa_loss: selection grid does not match features");

  auto sel = std::make_shared<NeighborSelection>(selection);
  const size_t n_anchors = sel->anchors.size();
  if (n_anchors == 0)
    throw ValidationError("festa_loss: selection holds no anchors");
  const double inv_n = config.normalization == Normalization::kMean
                           ? 1.0 / static_cast<double>(n_anchors)
                           : 1.0;

  const std::vector<double> feat =
      to_double(features.value().data(), features.value().size());
  const auto vec = [&](int pos) {
    return std::span<const double>(feat.data() + static_cast<size_t>(pos) * c,
                                   static_cast<size_t>(c));
  };

  double total = 0.0;
  for (size_t a = 0; a < n_anchors; ++a) {
    const int i = sel->anchors[a];
    total += config.alpha * euclidean_distance(vec(i), vec(sel->nf[a]));
    total += config.beta * euclidean_distance(vec(i), vec(sel->ns[a]));
    total += config.gamma *
             cosine_similarity(vec(i), vec(sel->ff[a]), config.epsilon);
  }
  total *= inv_n;

  ad::detail::Node<T> node;
  node.shape = ad::Shape{1};
  node.value = {static_cast<T>(total)};
  node.requires_grad = features.requires_grad();

  const int feat_id = features.id();
  const FestaConfig cfg = config;
  ad::Tape<T>* tape = features.tape();
  const int self = tape->size();
  node.backward = [=](ad::detail::TapeState<T>& st) {
    if (!st.at(feat_id).requires_grad) return;
    const double g0 = static_cast<double>(st.at(self).grad[0]) * inv_n;
    const std::vector<T>& fv = st.at(feat_id).value;
    std::vector<T>& gf = st.grad_buffer(feat_id);

    const auto at = [&](int pos, int ch) {
      return static_cast<double>(fv[static_cast<size_t>(pos) * c + ch]);
    };
    const auto add_grad = [&](int pos, int ch, double v) {
      gf[static_cast<size_t>(pos) * c + ch] += static_cast<T>(v);
    };

    for (size_t a = 0; a < sel->anchors.size(); ++a) {
      const int i = sel->anchors[a];

      // Distance terms: d/dx_i = (x_i - x_j)/D, d/dx_j the negative;
      // subgradient 0 when the points coincide.
      for (const auto& [j, weight] :
           {std::pair<int, double>{sel->nf[a], cfg.alpha},
            std::pair<int, double>{sel->ns[a], cfg.beta}}) {
        double dist_sq = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          const double d = at(i, ch) - at(j, ch);
          dist_sq += d * d;
        }
        const double dist = std::sqrt(dist_sq);
        if (dist <= 0.0) continue;
        const double scale = g0 * weight / dist;
        for (int ch = 0; ch < c; ++ch) {
          const double d = at(i, ch) - at(j, ch);
          add_grad(i, ch, scale * d);
          add_grad(j, ch, -scale * d);
        }
      }

      // Similarity term with the epsilon-guarded norms; the norm factor is
      // constant (zero derivative) whenever the guard is active.
      {
        const int j = sel->ff[a];
        double dot_ij = 0.0, sq_i = 0.0, sq_j = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          dot_ij += at(i, ch) * at(j, ch);
          sq_i += at(i, ch) * at(i, ch);
          sq_j += at(j, ch) * at(j, ch);
        }
        const double raw_i = std::sqrt(sq_i), raw_j = std::sqrt(sq_j);
        const double ni = std::max(raw_i, cfg.epsilon);
        const double nj = std::max(raw_j, cfg.epsilon);
        const double sim = dot_ij / (ni * nj);
        const double scale = g0 * cfg.gamma;
        for (int ch = 0; ch < c; ++ch) {
          double di = at(j, ch) / (ni * nj);
          if (raw_i > cfg.epsilon) di -= sim * at(i, ch) / (ni * ni);
          double dj = at(i, ch) / (ni * nj);
          if (raw_j > cfg.epsilon) dj -= sim * at(j, ch) / (nj * nj);
          add_grad(i, ch, scale * di);
          add_grad(j, ch, scale * dj);
        }
      }
    }
  };
  return ad::detail::emit(tape, std::move(node));
}

template ad::Tensor<float> festa_loss(ad::Tensor<float>, const FestaConfig&,
                                      const NeighborSelection&);
template ad::Tensor<double> festa_loss(ad::Tensor<double>, const FestaConfig&,
                                       const NeighborSelection&);

template <typename T>
ad::Tensor<T> masked_cross_entropy(ad::Tensor<T> logits, const LabelMap& labels,
                                   std::span<const double> class_weights) {
  const ad::Shape& s = logits.shape();
  if (s.rank() != 3)
    throw ValidationError("masked_cross_entropy: logits must be [H,W,K], got " + s.str());
  const int h = s[0], w = s[1], k = s[2];
  if (labels.height != h || labels.width != w)
    throw ValidationError("masked_cross_entropy: label dims do not match logits");
  if (!class_weights.empty() && static_cast<int>(class_weights.size()) != k)
    throw ValidationError("masked_cross_entropy: class_weights must have K entries");

  std::vector<int> labeled;
  for (int p = 0; p < h * w; ++p) {
    const uint8_t v = labels.values[static_cast<size_t>(p)];
    if (v == LabelMap::kUnlabeled) continue;
    if (v >= k)
      throw ValidationError("masked_cross_entropy: label " + std::to_string(v) +
                            " outside [0, " + std::to_string(k) + ")");
    labeled.push_back(p);
  }
  if (labeled.empty())
    throw ValidationError("masked_cross_entropy: no labeled pixels in batch");

  const auto weight_of = [&](uint8_t cls) {
    return class_weights.empty() ? 1.0 : class_weights[cls];
  };

  const T* lv = logits.value().data();
  double total = 0.0;
  for (int p : labeled) {
    const T* row = lv + static_cast<size_t>(p) * k;
    double max_logit = static_cast<double>(row[0]);
    for (int j = 1; j < k; ++j)
      max_logit = std::max(max_logit, static_cast<double>(row[j]));
    double sum_exp = 0.0;
    for (int j = 0; j < k; ++j)
      sum_exp += std::exp(static_cast<double>(row[j]) - max_logit);
    const double lse = max_logit + std::log(sum_exp);
    const uint8_t cls = labels.values[static_cast<size_t>(p)];
    total += weight_of(cls) * (lse - static_cast<double>(row[cls]));
  }
  const double inv_n = 1.0 / static_cast<double>(labeled.size());
  total *= inv_n;

  ad::detail::Node<T> node;
  node.shape = ad::Shape{1};
  node.value = {static_cast<T>(total)};
  node.requires_grad = logits.requires_grad();

  auto pixels = std::make_shared<std::vector<int>>(std::move(labeled));
  std::vector<double> weights(class_weights.begin(), class_weights.end());
  const LabelMap label_copy = labels;
  const int logits_id = logits.id();
  ad::Tape<T>* tape = logits.tape();
  const int self = tape->size();
  node.backward = [=, weights = std::move(weights)](ad::detail::TapeState<T>& st) {
    if (!st.at(logits_id).requires_grad) return;
    const double g0 = static_cast<double>(st.at(self).grad[0]) * inv_n;
    const std::vector<T>& value = st.at(logits_id).value;
    std::vector<T>& grad = st.grad_buffer(logits_id);
    for (int p : *pixels) {
      const T* row = value.data() + static_cast<size_t>(p) * k;
      T* grow = grad.data() + static_cast<size_t>(p) * k;
      double max_logit = static_cast<double>(row[0]);
      for (int j = 1; j < k; ++j)
        max_logit = std::max(max_logit, static_cast<double>(row[j]));
      double sum_exp = 0.0;
      for (int j = 0; j < k; ++j)
        sum_exp += std::exp(static_cast<double>(row[j]) - max_logit);
      const uint8_t cls = label_copy.values[static_cast<size_t>(p)];
      const double wc = weights.empty() ? 1.0 : weights[cls];
      for (int j = 0; j < k; ++j) {
        const double p_j = std::exp(static_cast<double>(row[j]) - max_logit) / sum_exp;
        const double indicator = j == cls ? 1.0 : 0.0;
        grow[j] += static_cast<T>(g0 * wc * (p_j - indicator));
      }
    }
  };
  return ad::detail::emit(tape, std::move(node));
}

template ad::Tensor<float> masked_cross_entropy(ad::Tensor<float>, const LabelMap&,
                                                std::span<const double>);
template ad::Tensor<double> masked_cross_entropy(ad::Tensor<double>, const LabelMap&,
                                                 std::span<const double>);

template <typename T>
ad::Tensor<T> combined_loss(ad::Tensor<T> logits, const LabelMap& labels,
                            ad::Tensor<T> features, const FestaConfig& config,
                            std::span<const double> class_weights) {
  config.validate();
  ad::Tensor<T> ce = masked_cross_entropy(logits, labels, class_weights);
  if (config.lambda == 0.0) return ce;  // bit-exact reduction to the CE term
  ad::Tensor<T> relational = festa_loss(features, config);
  return ad::add_scaled(ce, relational, static_cast<T>(config.lambda));
}

template ad::Tensor<float> combined_loss(ad::Tensor<float>, const LabelMap&,
                                         ad::Tensor<float>, const FestaConfig&,
                                         std::span<const double>);
template ad::Tensor<double> combined_loss(ad::Tensor<double>, const LabelMap&,
                                          ad::Tensor<double>, const FestaConfig&,
                                          std::span<const double>);

std::vector<double> class_weights_from_labels(const LabelMap& labels,
                                              int num_classes, double smoothing) {
  if (smoothing < 0)
    throw ValidationError("class_weights: smoothing must be >= 0");
  std::vector<int64_t> counts(static_cast<size_t>(num_classes), 0);
  int64_t total = 0;
  for (uint8_t v : labels.values) {
    if (v == LabelMap::kUnlabeled) continue;
    if (v >= num_classes)
      throw ValidationError("class_weights: label outside [0, num_classes)");
    ++counts[v];
    ++total;
  }
  if (total == 0)
    throw ValidationError("class_weights: no labeled pixels");

  int present = 0;
  for (int64_t n : counts)
    if (n > 0) ++present;

  std::vector<double> weights(static_cast<size_t>(num_classes), 0.0);
  double mean = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) continue;
    weights[c] = static_cast<double>(total) /
                 (present * (static_cast<double>(counts[c]) + smoothing));
    mean += weights[c];
  }
  mean /= present;
  for (int c = 0; c < num_classes; ++c)
    if (counts[c] > 0) weights[c] /= mean;
  return weights;
}

}  // namespace fseg::festa
