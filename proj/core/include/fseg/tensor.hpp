#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fseg/errors.hpp"

namespace fseg::ad {

// Dense row-major extents, innermost dimension last.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int> dims) : dims_(dims) { validate(); }
  explicit Shape(std::vector<int> dims) : dims_(std::move(dims)) { validate(); }

  int rank() const { return static_cast<int>(dims_.size()); }
  int operator[](int i) const { return dims_[static_cast<size_t>(i)]; }
  const std::vector<int>& dims() const { return dims_; }

  int64_t count() const {
    int64_t n = 1;
    for (int d : dims_) n *= d;
    return n;
  }

  bool operator==(const Shape& other) const = default;
  std::string str() const;

 private:
  void validate() const {
    for (int d : dims_)
      if (d <= 0) throw ValidationError("shape: dimensions must be positive");
  }
  std::vector<int> dims_;
};

// Plain host array without autodiff; parameter stores, checkpoints and
// optimizer state live in these.
template <typename T>
struct Array {
  Shape shape;
  std::vector<T> data;

  Array() = default;
  Array(Shape s, T fill = T(0))
      : shape(std::move(s)), data(static_cast<size_t>(shape.count()), fill) {}
  Array(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (static_cast<int64_t>(data.size()) != shape.count())
      throw ValidationError("array: value count does not match shape " + shape.str());
  }
};

using ArrayF = Array<float>;
using ArrayD = Array<double>;

template <typename T>
class Tape;
template <typename T>
class Tensor;

namespace detail {
template <typename T>
struct TapeState;
template <typename T>
struct Node;
// Appends a finished node and hands back its handle. Library-internal.
template <typename T>
Tensor<T> emit(Tape<T>* tape, Node<T>&& node);
}

// Handle to a node on a tape. Copying the handle aliases the node.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  bool valid() const { return tape_ != nullptr; }
  const Shape& shape() const;
  std::span<const T> value() const;
  // Populated by Tape::backward for every requires-grad node reachable from
  // the loss; zeros for requires-grad nodes the loss does not depend on.
  std::span<const T> grad() const;
  bool requires_grad() const;

  T scalar() const;  // value of a single-element tensor

  Tape<T>* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape<T>;
  friend Tensor<T> detail::emit<T>(Tape<T>*, detail::Node<T>&&);
  Tensor(Tape<T>* tape, int id) : tape_(tape), id_(id) {}
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

// Records every executed operation in order; backward() replays adjoints in
// exact reverse execution order. One tape serves one forward/backward pass:
// a second backward() without new recorded work is rejected. Not shareable
// across threads.
template <typename T>
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor<T> leaf(const Shape& shape, std::vector<T> values, bool requires_grad);
  Tensor<T> leaf(const Array<T>& array, bool requires_grad);
  Tensor<T> constant(const Shape& shape, std::vector<T> values) {
    return leaf(shape, std::move(values), false);
  }

  // Seeds d(loss)/d(loss) = 1 and accumulates adjoints into every
  // requires-grad node. `loss` must be scalar and live on this tape.
  void backward(Tensor<T> loss);

  int size() const;

  detail::TapeState<T>& state() { return *state_; }

 private:
  std::unique_ptr<detail::TapeState<T>> state_;
};

// --- Differentiable operations -------------------------------------------
//
// All ops record onto the tape of their first argument and require every
// tensor argument to live on that tape.

// Stride-1 cross-correlation with zero padding that preserves spatial dims.
// input [H,W,Cin], kernel [k,k,Cin,Cout] with k in {1,3}, bias [Cout].
template <typename T>
Tensor<T> conv2d(Tensor<T> input, Tensor<T> kernel, Tensor<T> bias);

// 2x2 non-overlapping max; H and W must be even. Gradient goes to the
// argmax, ties resolved to the first position in row-major window order.
template <typename T>
Tensor<T> maxpool2(Tensor<T> input);

template <typename T>
Tensor<T> relu(Tensor<T> input);

// Bilinear upsampling by factor 2, 4 or 8 with half-pixel center mapping
// x_in = (x_out + 0.5)/factor - 0.5, clamped at borders.
template <typename T>
Tensor<T> upsample_bilinear(Tensor<T> input, int factor);

template <typename T>
Tensor<T> add(Tensor<T> a, Tensor<T> b);

// a + scale_b * b, elementwise. scale_b is a constant, not differentiated.
template <typename T>
Tensor<T> add_scaled(Tensor<T> a, Tensor<T> b, T scale_b);

// Scalar dot product against fixed weights (one per element). The reduction
// the gradcheck harness uses to turn any op into a scalar loss.
template <typename T>
Tensor<T> weighted_sum(Tensor<T> x, std::vector<T> weights);

extern template class Tape<float>;
extern template class Tape<double>;
extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace fseg::ad
