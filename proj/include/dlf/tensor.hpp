#pragma once

#include <Eigen/Core>

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace dlf {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

Index shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename Scalar>
class Tape;

/// Dense row-major n-dimensional array with optional gradient.
///
/// A Tensor is a cheap handle: copies share the same storage. Values are
/// treated as immutable once the tensor is produced by an op; the only
/// mutations are gradient accumulation and explicit parameter updates via
/// mutable_values() (optimizer steps, test fixtures).
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;
  Tensor(Shape shape, Array values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor from_list(Shape shape, std::initializer_list<Scalar> values,
                          bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  Index dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  Index numel() const { return node_->value.size(); }

  const Array& values() const { return node_->value; }
  Array& mutable_values() { return node_->value; }
  const Scalar* data() const { return node_->value.data(); }
  Scalar item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag);

  bool has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }
  /// Gradient buffer; zero-filled if nothing has been accumulated yet.
  Array grad() const;
  void zero_grad();
  /// Adds `delta` into the gradient. No-op when requires_grad is false.
  void accumulate_grad(const Eigen::Ref<const Array>& delta) const;

  /// Same values, fresh storage, no gradient participation.
  Tensor detach() const;
  /// Element-type conversion (float <-> double); drops gradient state.
  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape(), values().template cast<Other>());
  }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  struct Node {
    Shape shape;
    Array value;
    Array grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Node> node_;
};

/// Ordered record of differentiable ops for reverse-mode differentiation.
///
/// Constructing a Tape makes it the active tape for its scalar type on the
/// current thread; the previous one is restored on destruction. Ops only
/// record when a tape is active and at least one input requires grad.
template <typename Scalar>
class Tape {
 public:
  using Array = typename Tensor<Scalar>::Array;
  using BackwardFn = std::function<void(const Array& grad_output)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(Tensor<Scalar> output, BackwardFn backward);
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates in reverse recording order.
  void backward(const Tensor<Scalar>& loss);
  /// Seeds an arbitrary output gradient (used for per-pixel probes).
  void backward(const Tensor<Scalar>& output, const Array& seed);

 private:
  struct Entry {
    Tensor<Scalar> output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
  Tape* previous_ = nullptr;
};

namespace detail {

/// Wraps `values` as an op result and records `backward` when any input
/// participates in differentiation.
template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, typename Tensor<Scalar>::Array values,
                           std::initializer_list<const Tensor<Scalar>*> inputs,
                           typename Tape<Scalar>::BackwardFn backward);

}  // namespace detail

struct Conv2dOptions {
  Index stride = 1;
  Index dilation = 1;
  Index padding = 0;
};

/// Cross-correlation of input [N,Cin,H,W] with kernel [Cout,Cin,k,k], zero padding.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel,
                      Conv2dOptions options = {});

/// Transposed convolution; kernel is [Cin,Cout,k,k]. Output side is
/// (H-1)*stride - 2*padding + k.
template <typename Scalar>
Tensor<Scalar> conv_transpose2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel,
                                Index stride, Index padding);

/// weight [n,m] * input [m] + bias [n].
template <typename Scalar>
Tensor<Scalar> affine(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias);

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor);
template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a);
/// mean((a - b)^2) as a scalar tensor.
template <typename Scalar>
Tensor<Scalar> mse(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape);
/// Concatenates NCHW tensors along the channel axis.
template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
/// Copy of `base` with base[indices[j]] replaced by values[j] (flat indices).
template <typename Scalar>
Tensor<Scalar> overwrite(const Tensor<Scalar>& base, const Tensor<Scalar>& values,
                         const std::vector<Index>& indices);

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return add(a, b);
}
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return sub(a, b);
}
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return mul(a, b);
}

}  // namespace dlf
