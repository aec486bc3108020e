#include "dlf/tensor.hpp"

#include "dlf/errors.hpp"

#include <sstream>
#include <utility>

namespace dlf {

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape " + shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

// ---------------------------------------------------------------------------
// Tensor

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Array values, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(Shape shape, bool requires_grad) {
  const Index n = shape_numel(shape);
  return Tensor(std::move(shape), Array::Zero(n), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::full(Shape shape, Scalar value, bool requires_grad) {
  const Index n = shape_numel(shape);
  return Tensor(std::move(shape), Array::Constant(n, value), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_list(Shape shape, std::initializer_list<Scalar> values,
                                         bool requires_grad) {
  Array a(static_cast<Index>(values.size()));
  Index i = 0;
  for (Scalar v : values) a[i++] = v;
  return Tensor(std::move(shape), std::move(a), requires_grad);
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (numel() != 1) throw ContractViolation("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

template <typename Scalar>
void Tensor<Scalar>::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
  if (!flag) node_->grad.resize(0);
}

template <typename Scalar>
typename Tensor<Scalar>::Array Tensor<Scalar>::grad() const {
  if (has_grad()) return node_->grad;
  return Array::Zero(numel());
}

template <typename Scalar>
void Tensor<Scalar>::zero_grad() {
  if (node_) node_->grad.resize(0);
}

template <typename Scalar>
void Tensor<Scalar>::accumulate_grad(const Eigen::Ref<const Array>& delta) const {
  if (!requires_grad()) return;
  if (delta.size() != numel()) {
    throw DimensionError("gradient of size " + std::to_string(delta.size()) +
                         " for tensor " + shape_string(shape()));
  }
  if (!has_grad()) {
    node_->grad = delta;
  } else {
    node_->grad += delta;
  }
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  return Tensor(shape(), values());
}

// ---------------------------------------------------------------------------
// Tape

namespace {
template <typename Scalar>
Tape<Scalar>*& active_tape() {
  thread_local Tape<Scalar>* tape = nullptr;
  return tape;
}
}  // namespace

template <typename Scalar>
Tape<Scalar>::Tape() : previous_(active_tape<Scalar>()) {
  active_tape<Scalar>() = this;
}

template <typename Scalar>
Tape<Scalar>::~Tape() {
  active_tape<Scalar>() = previous_;
}

template <typename Scalar>
Tape<Scalar>* Tape<Scalar>::active() {
  return active_tape<Scalar>();
}

template <typename Scalar>
void Tape<Scalar>::record(Tensor<Scalar> output, BackwardFn backward) {
  entries_.push_back(Entry{std::move(output), std::move(backward)});
}

template <typename Scalar>
void Tape<Scalar>::backward(const Tensor<Scalar>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractViolation("backward() needs a scalar loss, got shape " +
                            (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  backward(loss, Array::Ones(1));
}

template <typename Scalar>
void Tape<Scalar>::backward(const Tensor<Scalar>& output, const Array& seed) {
  if (!output.requires_grad()) {
    throw ContractViolation("backward() from a tensor that is not on the tape");
  }
  output.accumulate_grad(seed);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->backward(it->output.grad());
  }
}

namespace detail {

template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, typename Tensor<Scalar>::Array values,
                           std::initializer_list<const Tensor<Scalar>*> inputs,
                           typename Tape<Scalar>::BackwardFn backward) {
  Tape<Scalar>* tape = Tape<Scalar>::active();
  bool track = false;
  if (tape) {
    for (const Tensor<Scalar>* in : inputs) track = track || in->requires_grad();
  }
  Tensor<Scalar> out(std::move(shape), std::move(values), track);
  if (track) tape->record(out, std::move(backward));
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution helpers

namespace {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

struct Geometry {
  Index channels, height, width;   // image side
  Index kernel, stride, dilation, padding;
  Index out_height, out_width;     // sliding-window grid
};

// col is [channels*k*k, out_h*out_w].
template <typename Scalar>
void im2col(const Scalar* image, const Geometry& g, Scalar* col) {
  const Index grid = g.out_height * g.out_width;
  for (Index c = 0; c < g.channels; ++c) {
    for (Index ki = 0; ki < g.kernel; ++ki) {
      for (Index kj = 0; kj < g.kernel; ++kj) {
        Scalar* row = col + ((c * g.kernel + ki) * g.kernel + kj) * grid;
        for (Index oh = 0; oh < g.out_height; ++oh) {
          const Index ih = oh * g.stride - g.padding + ki * g.dilation;
          Scalar* dst = row + oh * g.out_width;
          if (ih < 0 || ih >= g.height) {
            std::fill(dst, dst + g.out_width, Scalar(0));
            continue;
          }
          const Scalar* src = image + (c * g.height + ih) * g.width;
          for (Index ow = 0; ow < g.out_width; ++ow) {
            const Index iw = ow * g.stride - g.padding + kj * g.dilation;
            dst[ow] = (iw >= 0 && iw < g.width) ? src[iw] : Scalar(0);
          }
        }
      }
    }
  }
}

// Scatter-add of col back onto image (adjoint of im2col).
template <typename Scalar>
void col2im(const Scalar* col, const Geometry& g, Scalar* image) {
  const Index grid = g.out_height * g.out_width;
  for (Index c = 0; c < g.channels; ++c) {
    for (Index ki = 0; ki < g.kernel; ++ki) {
      for (Index kj = 0; kj < g.kernel; ++kj) {
        const Scalar* row = col + ((c * g.kernel + ki) * g.kernel + kj) * grid;
        for (Index oh = 0; oh < g.out_height; ++oh) {
          const Index ih = oh * g.stride - g.padding + ki * g.dilation;
          if (ih < 0 || ih >= g.height) continue;
          const Scalar* src = row + oh * g.out_width;
          Scalar* dst = image + (c * g.height + ih) * g.width;
          for (Index ow = 0; ow < g.out_width; ++ow) {
            const Index iw = ow * g.stride - g.padding + kj * g.dilation;
            if (iw >= 0 && iw < g.width) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.size() != rank) {
    throw DimensionError(std::string(what) + " must have rank " + std::to_string(rank) +
                         ", got " + shape_string(shape));
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel,
                      Conv2dOptions options) {
  using Array = typename Tensor<Scalar>::Array;
  require_rank(input.shape(), 4, "conv2d input");
  require_rank(kernel.shape(), 4, "conv2d kernel");
  const Index n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const Index cout = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != cin || kernel.dim(3) != k) {
    throw DimensionError("conv2d: input " + shape_string(input.shape()) +
                         " incompatible with kernel " + shape_string(kernel.shape()));
  }
  if (options.stride < 1 || options.dilation < 1 || options.padding < 0) {
    throw ContractViolation("conv2d: stride/dilation must be positive and padding non-negative");
  }
  const Index span = options.dilation * (k - 1) + 1;
  const Index oh = (h + 2 * options.padding - span) / options.stride + 1;
  const Index ow = (w + 2 * options.padding - span) / options.stride + 1;
  if (h + 2 * options.padding < span || w + 2 * options.padding < span) {
    throw DimensionError("conv2d: input " + shape_string(input.shape()) +
                         " smaller than kernel " + shape_string(kernel.shape()));
  }
  const Geometry g{cin, h, w, k, options.stride, options.dilation, options.padding, oh, ow};
  const Index rows = cin * k * k, grid = oh * ow;

  Array out(n * cout * grid);
  RowMatrix<Scalar> col(rows, grid);
  ConstMatrixMap<Scalar> kmat(kernel.data(), cout, rows);
  for (Index b = 0; b < n; ++b) {
    im2col(input.data() + b * cin * h * w, g, col.data());
    MatrixMap<Scalar>(out.data() + b * cout * grid, cout, grid).noalias() = kmat * col;
  }

  Tensor<Scalar> in = input, ker = kernel;
  return detail::make_result<Scalar>(
      {n, cout, oh, ow}, std::move(out), {&input, &kernel},
      [in, ker, g, n, cout, rows, grid](const Array& gout) {
        const Index image = g.channels * g.height * g.width;
        ConstMatrixMap<Scalar> kmat(ker.data(), cout, rows);
        RowMatrix<Scalar> col(rows, grid);
        Array dk = ker.requires_grad() ? Array(Array::Zero(ker.numel())) : Array();
        Array dx = in.requires_grad() ? Array(Array::Zero(in.numel())) : Array();
        for (Index b = 0; b < n; ++b) {
          ConstMatrixMap<Scalar> go(gout.data() + b * cout * grid, cout, grid);
          if (ker.requires_grad()) {
            im2col(in.data() + b * image, g, col.data());
            MatrixMap<Scalar>(dk.data(), cout, rows).noalias() += go * col.transpose();
          }
          if (in.requires_grad()) {
            col.noalias() = kmat.transpose() * go;
            col2im(col.data(), g, dx.data() + b * image);
          }
        }
        if (ker.requires_grad()) ker.accumulate_grad(dk);
        if (in.requires_grad()) in.accumulate_grad(dx);
      });
}

template <typename Scalar>
Tensor<Scalar> conv_transpose2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel,
                                Index stride, Index padding) {
  using Array = typename Tensor<Scalar>::Array;
  require_rank(input.shape(), 4, "conv_transpose2d input");
  require_rank(kernel.shape(), 4, "conv_transpose2d kernel");
  const Index n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const Index cout = kernel.dim(1), k = kernel.dim(2);
  if (kernel.dim(0) != cin || kernel.dim(3) != k) {
    throw DimensionError("conv_transpose2d: input " + shape_string(input.shape()) +
                         " incompatible with kernel " + shape_string(kernel.shape()));
  }
  if (stride < 1 || padding < 0) {
    throw ContractViolation("conv_transpose2d: stride must be positive and padding non-negative");
  }
  const Index oh = (h - 1) * stride - 2 * padding + k;
  const Index ow = (w - 1) * stride - 2 * padding + k;
  if (oh < 1 || ow < 1) {
    throw DimensionError("conv_transpose2d: empty output for input " + shape_string(input.shape()));
  }
  // Sliding-window geometry over the *output* image; its grid is the input.
  const Geometry g{cout, oh, ow, k, stride, 1, padding, h, w};
  const Index rows = cout * k * k, grid = h * w;

  Array out = Array::Zero(n * cout * oh * ow);
  RowMatrix<Scalar> col(rows, grid);
  ConstMatrixMap<Scalar> kmat(kernel.data(), cin, rows);
  for (Index b = 0; b < n; ++b) {
    ConstMatrixMap<Scalar> x(input.data() + b * cin * grid, cin, grid);
    col.noalias() = kmat.transpose() * x;
    col2im(col.data(), g, out.data() + b * cout * oh * ow);
  }

  Tensor<Scalar> in = input, ker = kernel;
  return detail::make_result<Scalar>(
      {n, cout, oh, ow}, std::move(out), {&input, &kernel},
      [in, ker, g, n, cin, rows, grid](const Array& gout) {
        const Index image = g.channels * g.height * g.width;
        ConstMatrixMap<Scalar> kmat(ker.data(), cin, rows);
        RowMatrix<Scalar> col(rows, grid);
        Array dk = ker.requires_grad() ? Array(Array::Zero(ker.numel())) : Array();
        Array dx = in.requires_grad() ? Array(Array::Zero(in.numel())) : Array();
        for (Index b = 0; b < n; ++b) {
          im2col(gout.data() + b * image, g, col.data());
          if (in.requires_grad()) {
            MatrixMap<Scalar>(dx.data() + b * cin * grid, cin, grid).noalias() = kmat * col;
          }
          if (ker.requires_grad()) {
            ConstMatrixMap<Scalar> x(in.data() + b * cin * grid, cin, grid);
            MatrixMap<Scalar>(dk.data(), cin, rows).noalias() += x * col.transpose();
          }
        }
        if (ker.requires_grad()) ker.accumulate_grad(dk);
        if (in.requires_grad()) in.accumulate_grad(dx);
      });
}

template <typename Scalar>
Tensor<Scalar> affine(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias) {
  using Array = typename Tensor<Scalar>::Array;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  require_rank(input.shape(), 1, "affine input");
  require_rank(weight.shape(), 2, "affine weight");
  require_rank(bias.shape(), 1, "affine bias");
  const Index rows = weight.dim(0), cols = weight.dim(1);
  if (input.dim(0) != cols || bias.dim(0) != rows) {
    throw DimensionError("affine: weight " + shape_string(weight.shape()) + ", input " +
                         shape_string(input.shape()) + ", bias " + shape_string(bias.shape()));
  }
  ConstMatrixMap<Scalar> a(weight.data(), rows, cols);
  Array out = bias.values() + (a * input.values().matrix()).array();

  Tensor<Scalar> x = input, wt = weight, bs = bias;
  return detail::make_result<Scalar>(
      {rows}, std::move(out), {&input, &weight, &bias},
      [x, wt, bs, rows, cols](const Array& gout) {
        if (bs.requires_grad()) bs.accumulate_grad(gout);
        if (wt.requires_grad()) {
          RowMatrix<Scalar> dw = gout.matrix() * x.values().matrix().transpose();
          wt.accumulate_grad(Eigen::Map<const Array>(dw.data(), dw.size()));
        }
        if (x.requires_grad()) {
          ConstMatrixMap<Scalar> a(wt.data(), rows, cols);
          Vector dx = a.transpose() * gout.matrix();
          x.accumulate_grad(dx.array());
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise and reductions

namespace {
template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}
}  // namespace

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using Array = typename Tensor<Scalar>::Array;
  require_same_shape(a, b, "add");
  Tensor<Scalar> x = a, y = b;
  return detail::make_result<Scalar>(a.shape(), a.values() + b.values(), {&a, &b},
                                     [x, y](const Array& g) {
                                       x.accumulate_grad(g);
                                       y.accumulate_grad(g);
                                     });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using Array = typename Tensor<Scalar>::Array;
  require_same_shape(a, b, "sub");
  Tensor<Scalar> x = a, y = b;
  return detail::make_result<Scalar>(a.shape(), a.values() - b.values(), {&a, &b},
                                     [x, y](const Array& g) {
                                       x.accumulate_grad(g);
                                       if (y.requires_grad()) y.accumulate_grad(-g);
                                     });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using Array = typename Tensor<Scalar>::Array;
  require_same_shape(a, b, "mul");
  Tensor<Scalar> x = a, y = b;
  return detail::make_result<Scalar>(a.shape(), a.values() * b.values(), {&a, &b},
                                     [x, y](const Array& g) {
                                       if (x.requires_grad()) x.accumulate_grad(g * y.values());
                                       if (y.requires_grad()) y.accumulate_grad(g * x.values());
                                     });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  using Array = typename Tensor<Scalar>::Array;
  Tensor<Scalar> x = a;
  return detail::make_result<Scalar>(a.shape(), a.values() * factor, {&a},
                                     [x, factor](const Array& g) { x.accumulate_grad(g * factor); });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a) {
  using Array = typename Tensor<Scalar>::Array;
  Tensor<Scalar> x = a;
  return detail::make_result<Scalar>(
      a.shape(), a.values().max(Scalar(0)), {&a}, [x](const Array& g) {
        x.accumulate_grad((x.values() > Scalar(0)).select(g, Scalar(0)));
      });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  using Array = typename Tensor<Scalar>::Array;
  Tensor<Scalar> x = a;
  Array out = Array::Constant(1, a.values().sum());
  return detail::make_result<Scalar>({1}, std::move(out), {&a}, [x](const Array& g) {
    x.accumulate_grad(Array::Constant(x.numel(), g[0]));
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
  using Array = typename Tensor<Scalar>::Array;
  if (a.numel() == 0) throw DimensionError("mean of an empty tensor");
  Tensor<Scalar> x = a;
  const Scalar inv = Scalar(1) / static_cast<Scalar>(a.numel());
  Array out = Array::Constant(1, a.values().sum() * inv);
  return detail::make_result<Scalar>({1}, std::move(out), {&a}, [x, inv](const Array& g) {
    x.accumulate_grad(Array::Constant(x.numel(), g[0] * inv));
  });
}

template <typename Scalar>
Tensor<Scalar> mse(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using Array = typename Tensor<Scalar>::Array;
  require_same_shape(a, b, "mse");
  if (a.numel() == 0) throw DimensionError("mse of empty tensors");
  const Scalar inv = Scalar(1) / static_cast<Scalar>(a.numel());
  Array diff = a.values() - b.values();
  Array out = Array::Constant(1, diff.square().sum() * inv);
  Tensor<Scalar> x = a, y = b;
  return detail::make_result<Scalar>(
      {1}, std::move(out), {&a, &b}, [x, y, diff, inv](const Array& g) {
        const Array d = diff * (Scalar(2) * inv * g[0]);
        if (x.requires_grad()) x.accumulate_grad(d);
        if (y.requires_grad()) y.accumulate_grad(-d);
      });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  using Array = typename Tensor<Scalar>::Array;
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  Tensor<Scalar> x = a;
  return detail::make_result<Scalar>(std::move(shape), a.values(), {&a},
                                     [x](const Array& g) { x.accumulate_grad(g); });
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using Array = typename Tensor<Scalar>::Array;
  require_rank(a.shape(), 4, "concat_channels lhs");
  require_rank(b.shape(), 4, "concat_channels rhs");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw DimensionError("concat_channels: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  const Index n = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
  Array out(n * (ca + cb) * plane);
  for (Index i = 0; i < n; ++i) {
    out.segment(i * (ca + cb) * plane, ca * plane) = a.values().segment(i * ca * plane, ca * plane);
    out.segment((i * (ca + cb) + ca) * plane, cb * plane) =
        b.values().segment(i * cb * plane, cb * plane);
  }
  Tensor<Scalar> x = a, y = b;
  return detail::make_result<Scalar>(
      {n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {&a, &b},
      [x, y, n, ca, cb, plane](const Array& g) {
        Array ga(n * ca * plane), gb(n * cb * plane);
        for (Index i = 0; i < n; ++i) {
          ga.segment(i * ca * plane, ca * plane) = g.segment(i * (ca + cb) * plane, ca * plane);
          gb.segment(i * cb * plane, cb * plane) =
              g.segment((i * (ca + cb) + ca) * plane, cb * plane);
        }
        x.accumulate_grad(ga);
        y.accumulate_grad(gb);
      });
}

template <typename Scalar>
Tensor<Scalar> overwrite(const Tensor<Scalar>& base, const Tensor<Scalar>& values,
                         const std::vector<Index>& indices) {
  using Array = typename Tensor<Scalar>::Array;
  if (static_cast<Index>(indices.size()) != values.numel()) {
    throw DimensionError("overwrite: " + std::to_string(indices.size()) + " indices for " +
                         std::to_string(values.numel()) + " values");
  }
  Array out = base.values();
  for (std::size_t j = 0; j < indices.size(); ++j) {
    if (indices[j] < 0 || indices[j] >= base.numel()) {
      throw DimensionError("overwrite: index out of range for " + shape_string(base.shape()));
    }
    out[indices[j]] = values.values()[static_cast<Index>(j)];
  }
  Tensor<Scalar> b = base, v = values;
  return detail::make_result<Scalar>(
      base.shape(), std::move(out), {&base, &values}, [b, v, indices](const Array& g) {
        if (v.requires_grad()) {
          Array gv(v.numel());
          for (std::size_t j = 0; j < indices.size(); ++j) gv[static_cast<Index>(j)] = g[indices[j]];
          v.accumulate_grad(gv);
        }
        if (b.requires_grad()) {
          Array gb = g;
          for (Index idx : indices) gb[idx] = Scalar(0);
          b.accumulate_grad(gb);
        }
      });
}

#define DLF_INSTANTIATE_TENSOR(S)                                                              \
  template class Tensor<S>;                                                                    \
  template class Tape<S>;                                                                      \
  template Tensor<S> detail::make_result<S>(Shape, Tensor<S>::Array,                           \
                                            std::initializer_list<const Tensor<S>*>,           \
                                            Tape<S>::BackwardFn);                              \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, Conv2dOptions);                \
  template Tensor<S> conv_transpose2d(const Tensor<S>&, const Tensor<S>&, Index, Index);       \
  template Tensor<S> affine(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);             \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                  \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                  \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                  \
  template Tensor<S> scale(const Tensor<S>&, S);                                               \
  template Tensor<S> relu(const Tensor<S>&);                                                   \
  template Tensor<S> sum(const Tensor<S>&);                                                    \
  template Tensor<S> mean(const Tensor<S>&);                                                   \
  template Tensor<S> mse(const Tensor<S>&, const Tensor<S>&);                                  \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                         \
  template Tensor<S> concat_channels(const Tensor<S>&, const Tensor<S>&);                      \
  template Tensor<S> overwrite(const Tensor<S>&, const Tensor<S>&, const std::vector<Index>&);

DLF_INSTANTIATE_TENSOR(float)
DLF_INSTANTIATE_TENSOR(double)

}  // namespace dlf
