#include "fseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fseg/detail/tape_state.hpp"

namespace fseg::ad {

std::string Shape::str() const {
  std::ostringstream out;
  out << "[";
  for (size_t i = 0; i < dims_.size(); ++i) {
    if (i) out << ",";
    out << dims_[i];
  }
  out << "]";
  return out.str();
}

// --- Tensor accessors ------------------------------------------------------

template <typename T>
const Shape& Tensor<T>::shape() const {
  return tape_->state().at(id_).shape;
}

template <typename T>
std::span<const T> Tensor<T>::value() const {
  return tape_->state().at(id_).value;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  const auto& node = tape_->state().at(id_);
  if (!node.requires_grad)
    throw ValidationError("tensor: grad requested on a non-differentiable node");
  if (node.grad.empty())
    throw ValidationError("tensor: grad requested before backward()");
  return node.grad;
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return tape_->state().at(id_).requires_grad;
}

template <typename T>
T Tensor<T>::scalar() const {
  const auto& node = tape_->state().at(id_);
  if (node.value.size() != 1)
    throw ValidationError("tensor: scalar() on non-scalar shape " + node.shape.str());
  return node.value[0];
}

// --- Tape -------------------------------------------------------------------

template <typename T>
Tape<T>::Tape() : state_(std::make_unique<detail::TapeState<T>>()) {}

template <typename T>
Tape<T>::~Tape() = default;

template <typename T>
int Tape<T>::size() const {
  return static_cast<int>(state_->nodes.size());
}

template <typename T>
Tensor<T> Tape<T>::leaf(const Shape& shape, std::vector<T> values, bool requires_grad) {
  if (static_cast<int64_t>(values.size()) != shape.count())
    throw ValidationError("tensor: value count does not match shape " + shape.str());
  detail::Node<T> node;
  node.shape = shape;
  node.value = std::move(values);
  node.requires_grad = requires_grad;
  return Tensor<T>(this, state_->append(std::move(node)));
}

template <typename T>
Tensor<T> Tape<T>::leaf(const Array<T>& array, bool requires_grad) {
  return leaf(array.shape, array.data, requires_grad);
}

template <typename T>
void Tape<T>::backward(Tensor<T> loss) {
  if (loss.tape() != this)
    throw ValidationError("tape: loss lives on a different tape");
  auto& st = *state_;
  if (st.backward_done)
    throw ValidationError("tape: second backward() without a new forward");
  detail::Node<T>& root = st.at(loss.id());
  if (root.value.size() != 1)
    throw ValidationError("tape: backward requires a scalar loss, got " + root.shape.str());

  st.grad_buffer(loss.id())[0] = T(1);
  for (int id = loss.id(); id >= 0; --id) {
    detail::Node<T>& node = st.at(id);
    if (node.backward && !node.grad.empty()) node.backward(st);
  }
  // Requires-grad nodes the loss does not reach still report a grad: zero.
  for (auto& node : st.nodes)
    if (node.requires_grad && node.grad.empty())
      node.grad.assign(node.value.size(), T(0));
  st.backward_done = true;
}

// --- Ops ---------------------------------------------------------------------

namespace detail {
template <typename T>
Tensor<T> emit(Tape<T>* tape, Node<T>&& node) {
  const int id = tape->state().append(std::move(node));
  return Tensor<T>(tape, id);
}
template Tensor<float> emit(Tape<float>*, Node<float>&&);
template Tensor<double> emit(Tape<double>*, Node<double>&&);
}  // namespace detail

namespace {

template <typename T>
detail::Node<T> make_node(Shape shape, bool requires_grad) {
  detail::Node<T> node;
  node.shape = std::move(shape);
  node.value.assign(static_cast<size_t>(node.shape.count()), T(0));
  node.requires_grad = requires_grad;
  return node;
}

template <typename T>
void conv2d_forward(const T* in, const T* ker, const T* bias, T* out, int h,
                    int w, int cin, int cout, int k) {
  const int pad = k / 2;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      T* o = out + (static_cast<size_t>(y) * w + x) * cout;
      for (int co = 0; co < cout; ++co) o[co] = bias[co];
      for (int dy = 0; dy < k; ++dy) {
        const int yy = y + dy - pad;
        if (yy < 0 || yy >= h) continue;
        for (int dx = 0; dx < k; ++dx) {
          const int xx = x + dx - pad;
          if (xx < 0 || xx >= w) continue;
          const T* iv = in + (static_cast<size_t>(yy) * w + xx) * cin;
          const T* kv = ker + (static_cast<size_t>(dy) * k + dx) * cin * cout;
          for (int ci = 0; ci < cin; ++ci) {
            const T a = iv[ci];
            const T* kc = kv + static_cast<size_t>(ci) * cout;
            for (int co = 0; co < cout; ++co) o[co] += a * kc[co];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(Tensor<T> input, Tensor<T> kernel, Tensor<T> bias) {
  detail::check_same_tape(input, kernel);
  detail::check_same_tape(input, bias);
  const Shape& is = input.shape();
  const Shape& ks = kernel.shape();
  const Shape& bs = bias.shape();
  if (is.rank() != 3) throw ValidationError("conv2d: input must be [H,W,Cin], got " + is.str());
  if (ks.rank() != 4 || ks[0] != ks[1] || (ks[0] != 1 && ks[0] != 3))
    throw ValidationError("conv2d: kernel must be [k,k,Cin,Cout] with k in {1,3}, got " + ks.str());
  if (ks[2] != is[2])
    throw ValidationError("conv2d: channel mismatch, input " + is.str() + " vs kernel " + ks.str());
  if (bs.rank() != 1 || bs[0] != ks[3])
    throw ValidationError("conv2d: bias must be [Cout], got " + bs.str());

  const int h = is[0], w = is[1], cin = is[2], cout = ks[3], k = ks[0];
  Tape<T>* tape = input.tape();
  auto node = make_node<T>(Shape{h, w, cout},
                           input.requires_grad() || kernel.requires_grad() ||
                               bias.requires_grad());
  conv2d_forward(input.value().data(), kernel.value().data(),
                 bias.value().data(), node.value.data(), h, w, cin, cout, k);

  const int in_id = input.id(), k_id = kernel.id(), b_id = bias.id();
  const int self = tape->size();
  node.backward = [=](detail::TapeState<T>& st) {
    const std::vector<T>& g = st.at(self).grad;
    const std::vector<T>& in = st.at(in_id).value;
    const std::vector<T>& ker = st.at(k_id).value;
    const bool need_in = st.at(in_id).requires_grad;
    const bool need_k = st.at(k_id).requires_grad;
    const bool need_b = st.at(b_id).requires_grad;
    T* gin = need_in ? st.grad_buffer(in_id).data() : nullptr;
    T* gk = need_k ? st.grad_buffer(k_id).data() : nullptr;
    T* gb = need_b ? st.grad_buffer(b_id).data() : nullptr;
    const int pad = k / 2;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const T* go = g.data() + (static_cast<size_t>(y) * w + x) * cout;
        if (gb)
          for (int co = 0; co < cout; ++co) gb[co] += go[co];
        for (int dy = 0; dy < k; ++dy) {
          const int yy = y + dy - pad;
          if (yy < 0 || yy >= h) continue;
          for (int dx = 0; dx < k; ++dx) {
            const int xx = x + dx - pad;
            if (xx < 0 || xx >= w) continue;
            const size_t ioff = (static_cast<size_t>(yy) * w + xx) * cin;
            const size_t koff = (static_cast<size_t>(dy) * k + dx) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
              const T* kc = ker.data() + koff + static_cast<size_t>(ci) * cout;
              if (gk) {
                const T a = in[ioff + ci];
                T* gkc = gk + koff + static_cast<size_t>(ci) * cout;
                for (int co = 0; co < cout; ++co) gkc[co] += go[co] * a;
              }
              if (gin) {
                T acc = T(0);
                for (int co = 0; co < cout; ++co) acc += go[co] * kc[co];
                gin[ioff + ci] += acc;
              }
            }
          }
        }
      }
    }
  };
  return detail::emit(tape, std::move(node));
}

template <typename T>
Tensor<T> maxpool2(Tensor<T> input) {
  const Shape& is = input.shape();
  if (is.rank() != 3) throw ValidationError("maxpool2: input must be [H,W,C], got " + is.str());
  const int h = is[0], w = is[1], c = is[2];
  if (h % 2 != 0 || w % 2 != 0)
    throw ValidationError("maxpool2: spatial dims must be even, got " + is.str());

  Tape<T>* tape = input.tape();
  auto node = make_node<T>(Shape{h / 2, w / 2, c}, input.requires_grad());
  const T* in = input.value().data();
  // Argmax per output element, first row-major window position on ties.
  auto argmax = std::make_shared<std::vector<int32_t>>(node.value.size());
  const int oh = h / 2, ow = w / 2;
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      for (int ch = 0; ch < c; ++ch) {
        T best = in[((static_cast<size_t>(2 * oy) * w) + 2 * ox) * c + ch];
        int32_t best_at = static_cast<int32_t>(((2 * oy) * w + 2 * ox) * c + ch);
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int32_t idx =
                static_cast<int32_t>(((2 * oy + dy) * w + (2 * ox + dx)) * c + ch);
            if (in[idx] > best) {
              best = in[idx];
              best_at = idx;
            }
          }
        }
        const size_t o = (static_cast<size_t>(oy) * ow + ox) * c + ch;
        node.value[o] = best;
        (*argmax)[o] = best_at;
      }
    }
  }

  const int in_id = input.id();
  const int self = tape->size();
  node.backward = [=](detail::TapeState<T>& st) {
    if (!st.at(in_id).requires_grad) return;
    const std::vector<T>& g = st.at(self).grad;
    std::vector<T>& gin = st.grad_buffer(in_id);
    for (size_t o = 0; o < g.size(); ++o) gin[(*argmax)[o]] += g[o];
  };
  return detail::emit(tape, std::move(node));
}

template <typename T>
Tensor<T> relu(Tensor<T> input) {
  Tape<T>* tape = input.tape();
  auto node = make_node<T>(input.shape(), input.requires_grad());
  const auto in = input.value();
  for (size_t i = 0; i < in.size(); ++i) node.value[i] = in[i] > T(0) ? in[i] : T(0);

  const int in_id = input.id();
  const int self = tape->size();
  node.backward = [=](detail::TapeState<T>& st) {
    if (!st.at(in_id).requires_grad) return;
    const std::vector<T>& g = st.at(self).grad;
    const std::vector<T>& v = st.at(in_id).value;
    std::vector<T>& gin = st.grad_buffer(in_id);
    for (size_t i = 0; i < g.size(); ++i)
      if (v[i] > T(0)) gin[i] += g[i];  // subgradient 0 at exactly 0
  };
  return detail::emit(tape, std::move(node));
}

namespace {

// Half-pixel source mapping with border clamp; shared by forward and backward.
struct Lerp {
  int lo, hi;
  double t;
};

inline Lerp lerp_coord(int out_pos, int factor, int in_extent) {
  double src = (out_pos + 0.5) / factor - 0.5;
  if (src < 0.0) src = 0.0;
  const double max_src = static_cast<double>(in_extent - 1);
  if (src > max_src) src = max_src;
  Lerp l;
  l.lo = static_cast<int>(src);
  if (l.lo > in_extent - 1) l.lo = in_extent - 1;
  l.hi = std::min(l.lo + 1, in_extent - 1);
  l.t = src - l.lo;
  return l;
}

}  // namespace

template <typename T>
Tensor<T> upsample_bilinear(Tensor<T> input, int factor) {
  if (factor != 2 && factor != 4 && factor != 8)
    throw ValidationError("upsample_bilinear: factor must be 2, 4 or 8");
  const Shape& is = input.shape();
  if (is.rank() != 3)
    throw ValidationError("upsample_bilinear: input must be [H,W,C], got " + is.str());
  const int h = is[0], w = is[1], c = is[2];
  const int oh = h * factor, ow = w * factor;

  Tape<T>* tape = input.tape();
  auto node = make_node<T>(Shape{oh, ow, c}, input.requires_grad());
  const T* in = input.value().data();
  for (int oy = 0; oy < oh; ++oy) {
    const Lerp ly = lerp_coord(oy, factor, h);
    for (int ox = 0; ox < ow; ++ox) {
      const Lerp lx = lerp_coord(ox, factor, w);
      const T w00 = static_cast<T>((1.0 - ly.t) * (1.0 - lx.t));
      const T w01 = static_cast<T>((1.0 - ly.t) * lx.t);
      const T w10 = static_cast<T>(ly.t * (1.0 - lx.t));
      const T w11 = static_cast<T>(ly.t * lx.t);
      T* o = node.value.data() + (static_cast<size_t>(oy) * ow + ox) * c;
      const T* i00 = in + (static_cast<size_t>(ly.lo) * w + lx.lo) * c;
      const T* i01 = in + (static_cast<size_t>(ly.lo) * w + lx.hi) * c;
      const T* i10 = in + (static_cast<size_t>(ly.hi) * w + lx.lo) * c;
      const T* i11 = in + (static_cast<size_t>(ly.hi) * w + lx.hi) * c;
      for (int ch = 0; ch < c; ++ch)
        o[ch] = w00 * i00[ch] + w01 * i01[ch] + w10 * i10[ch] + w11 * i11[ch];
    }
  }

  const int in_id = input.id();
  const int self = tape->size();
  node.backward = [=](detail::TapeState<T>& st) {
    if (!st.at(in_id).requires_grad) return;
    const std::vector<T>& g = st.at(self).grad;
    std::vector<T>& gin = st.grad_buffer(in_id);
    for (int oy = 0; oy < oh; ++oy) {
      const Lerp ly = lerp_coord(oy, factor, h);
      for (int ox = 0; ox < ow; ++ox) {
        const Lerp lx = lerp_coord(ox, factor, w);
        const T w00 = static_cast<T>((1.0 - ly.t) * (1.0 - lx.t));
        const T w01 = static_cast<T>((1.0 - ly.t) * lx.t);
        const T w10 = static_cast<T>(ly.t * (1.0 - lx.t));
        const T w11 = static_cast<T>(ly.t * lx.t);
        const T* go = g.data() + (static_cast<size_t>(oy) * ow + ox) * c;
        T* g00 = gin.data() + (static_cast<size_t>(ly.lo) * w + lx.lo) * c;
        T* g01 = gin.data() + (static_cast<size_t>(ly.lo) * w + lx.hi) * c;
        T* g10 = gin.data() + (static_cast<size_t>(ly.hi) * w + lx.lo) * c;
        T* g11 = gin.data() + (static_cast<size_t>(ly.hi) * w + lx.hi) * c;
        for (int ch = 0; ch < c; ++ch) {
          g00[ch] += w00 * go[ch];
          g01[ch] += w01 * go[ch];
          g10[ch] += w10 * go[ch];
          g11[ch] += w11 * go[ch];
        }
      }
    }
  };
  return detail::emit(tape, std::move(node));
}

template <typename T>
Tensor<T> add(Tensor<T> a, Tensor<T> b) {
  return add_scaled(a, b, T(1));
}

template <typename T>
Tensor<T> add_scaled(Tensor<T> a, Tensor<T> b, T scale_b) {
  detail::check_same_tape(a, b);
  if (!(a.shape() == b.shape()))
    throw ValidationError("add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());

  Tape<T>* tape = a.tape();
  auto node = make_node<T>(a.shape(), a.requires_grad() || b.requires_grad());
  const auto av = a.value();
  const auto bv = b.value();
  for (size_t i = 0; i < av.size(); ++i) node.value[i] = av[i] + scale_b * bv[i];

  const int a_id = a.id(), b_id = b.id();
  const int self = tape->size();
  node.backward = [=](detail::TapeState<T>& st) {
    const std::vector<T>& g = st.at(self).grad;
    if (st.at(a_id).requires_grad) {
      std::vector<T>& ga = st.grad_buffer(a_id);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (st.at(b_id).requires_grad) {
      std::vector<T>& gb = st.grad_buffer(b_id);
      for (size_t i = 0; i < g.size(); ++i) gb[i] += scale_b * g[i];
    }
  };
  return detail::emit(tape, std::move(node));
}

template <typename T>
Tensor<T> weighted_sum(Tensor<T> x, std::vector<T> weights) {
  if (static_cast<int64_t>(weights.size()) != x.shape().count())
    throw ValidationError("weighted_sum: weight count does not match " + x.shape().str());

  Tape<T>* tape = x.tape();
  auto node = make_node<T>(Shape{1}, x.requires_grad());
  const auto xv = x.value();
  T acc = T(0);
  for (size_t i = 0; i < xv.size(); ++i) acc += weights[i] * xv[i];
  node.value[0] = acc;

  const int x_id = x.id();
  const int self = tape->size();
  auto w = std::make_shared<std::vector<T>>(std::move(weights));
  node.backward = [=](detail::TapeState<T>& st) {
    if (!st.at(x_id).requires_grad) return;
    const T g = st.at(self).grad[0];
    std::vector<T>& gx = st.grad_buffer(x_id);
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += g * (*w)[i];
  };
  return detail::emit(tape, std::move(node));
}

template class Tape<float>;
template class Tape<double>;
template class Tensor<float>;
template class Tensor<double>;

template Tensor<float> conv2d(Tensor<float>, Tensor<float>, Tensor<float>);
template Tensor<double> conv2d(Tensor<double>, Tensor<double>, Tensor<double>);
template Tensor<float> maxpool2(Tensor<float>);
template Tensor<double> maxpool2(Tensor<double>);
template Tensor<float> relu(Tensor<float>);
template Tensor<double> relu(Tensor<double>);
template Tensor<float> upsample_bilinear(Tensor<float>, int);
template Tensor<double> upsample_bilinear(Tensor<double>, int);
template Tensor<float> add(Tensor<float>, Tensor<float>);
template Tensor<double> add(Tensor<double>, Tensor<double>);
template Tensor<float> add_scaled(Tensor<float>, Tensor<float>, float);
template Tensor<double> add_scaled(Tensor<double>, Tensor<double>, double);
template Tensor<float> weighted_sum(Tensor<float>, std::vector<float>);
template Tensor<double> weighted_sum(Tensor<double>, std::vector<double>);

}  // namespace fseg::ad
