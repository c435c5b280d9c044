#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace psyn {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

const char* dtype_name(DType dt);

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised for rank/extent/dtype violations. The message names the op and
/// both offending shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tensor;

/// Records how a tensor was produced. `backward` maps the incoming gradient
/// to one gradient per input; it is built from differentiable ops so that
/// running it with grad mode enabled yields a differentiable gradient.
struct Node {
  std::string op;
  std::vector<Tensor> inputs;
  std::function<std::vector<Tensor>(const Tensor& grad, const std::vector<bool>& needed)>
      backward;
};

struct TensorImpl {
  Shape shape;
  DType dtype = DType::f32;
  std::variant<std::vector<float>, std::vector<double>> data;
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, DType dt = DType::f32);
  static Tensor full(const Shape& shape, double value, DType dt = DType::f32);
  static Tensor from_values(const Shape& shape, std::span<const double> values,
                            DType dt = DType::f32);
  static Tensor from_values(const Shape& shape, std::initializer_list<double> values,
                            DType dt = DType::f32);
  static Tensor scalar(double value, DType dt = DType::f32);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::int64_t numel() const;
  DType dtype() const { return impl_->dtype; }

  bool requires_grad() const { return impl_->requires_grad; }
  /// Only valid on leaves (tensors without a producing node).
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return impl_->grad_fn == nullptr; }
  const std::shared_ptr<Node>& grad_fn() const { return impl_->grad_fn; }

  template <typename T>
  std::span<T> data() {
    return std::span<T>(std::get<std::vector<T>>(impl_->data));
  }
  template <typename T>
  std::span<const T> data() const {
    return std::span<const T>(std::get<std::vector<T>>(impl_->data));
  }

  double at(std::int64_t flat) const;
  double item() const;
  std::vector<double> values() const;

  /// New leaf sharing no graph history; data is copied.
  Tensor detach() const;
  Tensor clone() const { return detach(); }
  Tensor to(DType dt) const;

  /// Overwrites data in place; bypasses autograd. Used by optimizers and
  /// running statistics.
  void assign_values(std::span<const double> values);

  const TensorImpl* id() const { return impl_.get(); }

  static Tensor make(Shape shape, DType dt);
  static Tensor attach(Tensor out, std::string op, std::vector<Tensor> inputs,
                       std::function<std::vector<Tensor>(const Tensor&, const std::vector<bool>&)>
                           backward);

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Thread-local switch for graph recording.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class EnableGradGuard {
 public:
  explicit EnableGradGuard(bool on) : prev_(GradMode::enabled()) { GradMode::set_enabled(on); }
  ~EnableGradGuard() { GradMode::set_enabled(prev_); }
  EnableGradGuard(const EnableGradGuard&) = delete;
  EnableGradGuard& operator=(const EnableGradGuard&) = delete;

 private:
  bool prev_;
};

enum class Mode { train, eval };

// ---------------------------------------------------------------------------
// Differentiable operations. All inputs must share a dtype.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor abs(const Tensor& a);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);

struct Activation {
  enum class Kind { relu, leaky_relu, tanh, sigmoid } kind;
  double slope = 0.2;

  static Activation Relu() { return {Kind::relu, 0.0}; }
  static Activation LeakyRelu(double s) { return {Kind::leaky_relu, s}; }
  static Activation Tanh() { return {Kind::tanh, 0.0}; }
  static Activation Sigmoid() { return {Kind::sigmoid, 0.0}; }
};

Tensor apply_activation(const Activation& act, const Tensor& x);

/// Sum of all elements as a shape-{1} tensor.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Broadcasts a shape-{1} tensor to `shape`.
Tensor expand_scalar(const Tensor& s, const Shape& shape);

/// [N,C,...] -> [C]
Tensor sum_per_channel(const Tensor& x);
/// [C] -> shape, where shape[1] == C.
Tensor broadcast_channel(const Tensor& v, const Shape& shape);
/// [N,...] -> [N]
Tensor sum_per_sample(const Tensor& x);
/// [N] -> shape, where shape[0] == N.
Tensor broadcast_sample(const Tensor& v, const Shape& shape);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, std::int64_t start, std::int64_t count);
/// Places x at channel offset `start` inside a zero tensor with `total` channels.
Tensor embed_channels(const Tensor& x, std::int64_t start, std::int64_t total);

/// eps * a + (1 - eps) * b
Tensor lerp(const Tensor& a, const Tensor& b, double eps);
/// Per-sample weights eps: [N].
Tensor lerp(const Tensor& a, const Tensor& b, const Tensor& eps);

// Convolutions on [N,C,H,W]. Kernels for conv2d are [F,C,kh,kw]; for
// conv_transpose2d the first kernel axis matches the input channels.

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad);
Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, int stride, int pad);
/// Transposed convolution with an explicit output extent (needed when the
/// forward convolution floored its output size).
Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, int stride, int pad,
                        std::int64_t out_h, std::int64_t out_w);
/// Gradient of <conv2d(input, K), grad_out> with respect to K.
Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& grad_out, std::int64_t kh,
                          std::int64_t kw, int stride, int pad);

class Rng;

/// Per-channel running statistics, updated in train mode.
struct RunningStats {
  Tensor mean;
  Tensor var;
  double momentum = 0.1;
};

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, double eps,
                  Mode mode, RunningStats& stats);

Tensor dropout(const Tensor& x, double rate, Mode mode, Rng& rng);

}  // namespace psyn
