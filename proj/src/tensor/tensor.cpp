#include "psyn/tensor.hpp"

#include <cmath>
#include <sstream>

#include "psyn/detail/dispatch.hpp"
#include "psyn/rng.hpp"

namespace psyn {

using detail::dispatch;

namespace {

thread_local bool g_grad_enabled = true;

void check_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.defined() || !b.defined()) {
    throw ShapeError(std::string(op) + ": undefined tensor");
  }
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  if (a.dtype() != b.dtype()) {
    throw ShapeError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                     dtype_name(b.dtype()));
  }
}

template <typename Fn>
Tensor map_unary(const Tensor& a, Fn fn) {
  Tensor out = Tensor::make(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < x.size(); ++i) o[i] = static_cast<T>(fn(x[i]));
  });
  return out;
}

template <typename Fn>
Tensor map_binary(const Tensor& a, const Tensor& b, const char* op, Fn fn) {
  check_same(a, b, op);
  Tensor out = Tensor::make(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < x.size(); ++i) o[i] = fn(x[i], y[i]);
  });
  return out;
}

// Constant (non-differentiable) elementwise derivative factor.
template <typename Fn>
Tensor constant_map(const Tensor& a, Fn fn) {
  NoGradGuard guard;
  return map_unary(a, fn);
}

std::int64_t channel_inner(const Shape& s) {
  std::int64_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
  return inner;
}

}  // namespace

const char* dtype_name(DType dt) { return dt == DType::f32 ? "f32" : "f64"; }

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::make(Shape shape, DType dt) {
  for (auto d : shape) {
    if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  t.impl_->shape = std::move(shape);
  t.impl_->dtype = dt;
  if (dt == DType::f32) {
    t.impl_->data = std::vector<float>(n, 0.0f);
  } else {
    t.impl_->data = std::vector<double>(n, 0.0);
  }
  return t;
}

Tensor Tensor::zeros(const Shape& shape, DType dt) { return make(shape, dt); }

Tensor Tensor::full(const Shape& shape, double value, DType dt) {
  Tensor t = make(shape, dt);
  dispatch(dt, [&]<typename T>() {
    for (auto& v : t.data<T>()) v = static_cast<T>(value);
  });
  return t;
}

Tensor Tensor::from_values(const Shape& shape, std::span<const double> values, DType dt) {
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
    throw ShapeError("from_values: " + std::to_string(values.size()) +
                     " values do not fill shape " + shape_str(shape));
  }
  Tensor t = make(shape, dt);
  t.assign_values(values);
  return t;
}

Tensor Tensor::from_values(const Shape& shape, std::initializer_list<double> values, DType dt) {
  return from_values(shape, std::span<const double>(values.begin(), values.size()), dt);
}

Tensor Tensor::scalar(double value, DType dt) { return full({1}, value, dt); }

std::int64_t Tensor::numel() const { return shape_numel(impl_->shape); }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw std::logic_error("set_requires_grad on a non-leaf tensor");
  impl_->requires_grad = on;
  return *this;
}

double Tensor::at(std::int64_t flat) const {
  return dispatch(dtype(), [&]<typename T>() -> double {
    return static_cast<double>(data<T>()[static_cast<std::size_t>(flat)]);
  });
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return at(0);
}

std::vector<double> Tensor::values() const {
  return dispatch(dtype(), [&]<typename T>() {
    auto d = data<T>();
    return std::vector<double>(d.begin(), d.end());
  });
}

Tensor Tensor::detach() const {
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = impl_->shape;
  t.impl_->dtype = impl_->dtype;
  t.impl_->data = impl_->data;
  return t;
}

Tensor Tensor::to(DType dt) const {
  if (dt == dtype()) return detach();
  auto v = values();
  return from_values(shape(), v, dt);
}

void Tensor::assign_values(std::span<const double> values) {
  dispatch(dtype(), [&]<typename T>() {
    auto d = data<T>();
    if (values.size() != d.size()) {
      throw ShapeError("assign_values: size mismatch for shape " + shape_str(shape()));
    }
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(values[i]);
  });
}

Tensor Tensor::attach(Tensor out, std::string op, std::vector<Tensor> inputs,
                      std::function<std::vector<Tensor>(const Tensor&, const std::vector<bool>&)>
                          backward) {
  if (!GradMode::enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto node = std::make_shared<Node>();
  node->op = std::move(op);
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  out.impl_->requires_grad = true;
  out.impl_->grad_fn = std::move(node);
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = map_binary(a, b, "add", [](auto x, auto y) { return x + y; });
  return Tensor::attach(out, "add", {a, b}, [](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{g, g};
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tensor out = map_binary(a, b, "sub", [](auto x, auto y) { return x - y; });
  return Tensor::attach(out, "sub", {a, b}, [](const Tensor& g, const std::vector<bool>& need) {
    return std::vector<Tensor>{g, need[1] ? neg(g) : Tensor()};
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tensor out = map_binary(a, b, "mul", [](auto x, auto y) { return x * y; });
  return Tensor::attach(out, "mul", {a, b}, [a, b](const Tensor& g, const std::vector<bool>& need) {
    return std::vector<Tensor>{need[0] ? mul(g, b) : Tensor(), need[1] ? mul(g, a) : Tensor()};
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Tensor out = map_binary(a, b, "div", [](auto x, auto y) { return x / y; });
  return Tensor::attach(out, "div", {a, b}, [a, b](const Tensor& g, const std::vector<bool>& need) {
    Tensor ga = need[0] ? div(g, b) : Tensor();
    Tensor gb = need[1] ? neg(div(mul(g, a), mul(b, b))) : Tensor();
    return std::vector<Tensor>{ga, gb};
  });
}

Tensor neg(const Tensor& a) {
  Tensor out = map_unary(a, [](auto x) { return -x; });
  return Tensor::attach(out, "neg", {a}, [](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{neg(g)};
  });
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = map_unary(a, [s](auto x) { return x * static_cast<decltype(x)>(s); });
  return Tensor::attach(out, "scale", {a}, [s](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{scale(g, s)};
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  Tensor out = map_unary(a, [s](auto x) { return x + static_cast<decltype(x)>(s); });
  return Tensor::attach(out, "add_scalar", {a}, [](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{g};
  });
}

Tensor square(const Tensor& a) {
  Tensor out = map_unary(a, [](auto x) { return x * x; });
  return Tensor::attach(out, "square", {a}, [a](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{mul(g, scale(a, 2.0))};
  });
}

Tensor sqrt(const Tensor& a) {
  Tensor out = map_unary(a, [](auto x) { return std::sqrt(x); });
  return Tensor::attach(out, "sqrt", {a}, [a](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{div(g, scale(sqrt(a), 2.0))};
  });
}

Tensor abs(const Tensor& a) {
  Tensor out = map_unary(a, [](auto x) { return std::abs(x); });
  return Tensor::attach(out, "abs", {a}, [a](const Tensor& g, const std::vector<bool>&) {
    Tensor sign = constant_map(a, [](auto x) {
      using T = decltype(x);
      return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
    });
    return std::vector<Tensor>{mul(g, sign)};
  });
}

// ---------------------------------------------------------------------------
// Activations

Tensor relu(const Tensor& x) {
  Tensor out = map_unary(x, [](auto v) { return v > decltype(v)(0) ? v : decltype(v)(0); });
  return Tensor::attach(out, "relu", {x}, [x](const Tensor& g, const std::vector<bool>&) {
    Tensor mask = constant_map(x, [](auto v) {
      using T = decltype(v);
      return v > T(0) ? T(1) : T(0);
    });
    return std::vector<Tensor>{mul(g, mask)};
  });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  Tensor out = map_unary(x, [slope](auto v) {
    using T = decltype(v);
    return v > T(0) ? v : static_cast<T>(slope) * v;
  });
  return Tensor::attach(out, "leaky_relu", {x}, [x, slope](const Tensor& g,
                                                           const std::vector<bool>&) {
    Tensor mask = constant_map(x, [slope](auto v) {
      using T = decltype(v);
      return v > T(0) ? T(1) : static_cast<T>(slope);
    });
    return std::vector<Tensor>{mul(g, mask)};
  });
}

Tensor tanh(const Tensor& x) {
  Tensor out = map_unary(x, [](auto v) { return std::tanh(v); });
  return Tensor::attach(out, "tanh", {x}, [x](const Tensor& g, const std::vector<bool>&) {
    Tensor t = tanh(x);
    return std::vector<Tensor>{mul(g, add_scalar(neg(square(t)), 1.0))};
  });
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = map_unary(x, [](auto v) {
    using T = decltype(v);
    return T(1) / (T(1) + std::exp(-v));
  });
  return Tensor::attach(out, "sigmoid", {x}, [x](const Tensor& g, const std::vector<bool>&) {
    Tensor s = sigmoid(x);
    return std::vector<Tensor>{mul(g, mul(s, add_scalar(neg(s), 1.0)))};
  });
}

Tensor apply_activation(const Activation& act, const Tensor& x) {
  switch (act.kind) {
    case Activation::Kind::relu:
      return relu(x);
    case Activation::Kind::leaky_relu:
      return leaky_relu(x, act.slope);
    case Activation::Kind::tanh:
      return tanh(x);
    case Activation::Kind::sigmoid:
      return sigmoid(x);
  }
  throw std::logic_error("unknown activation");
}

// ---------------------------------------------------------------------------
// Reductions and broadcasts

Tensor sum(const Tensor& a) {
  Tensor out = Tensor::make({1}, a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    double acc = 0.0;
    for (auto v : a.data<T>()) acc += v;
    out.data<T>()[0] = static_cast<T>(acc);
  });
  Shape shape = a.shape();
  return Tensor::attach(out, "sum", {a}, [shape](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{expand_scalar(g, shape)};
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor expand_scalar(const Tensor& s, const Shape& shape) {
  if (s.numel() != 1) throw ShapeError("expand_scalar: expected one element, got " +
                                       shape_str(s.shape()));
  Tensor out = Tensor::full(shape, s.item(), s.dtype());
  return Tensor::attach(out, "expand_scalar", {s}, [](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{sum(g)};
  });
}

Tensor sum_per_channel(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("sum_per_channel: rank < 2 " + shape_str(x.shape()));
  const auto n = x.dim(0), c = x.dim(1), inner = channel_inner(x.shape());
  Tensor out = Tensor::make({c}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto in = x.data<T>();
    auto o = out.data<T>();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (std::int64_t s = 0; s < n; ++s) {
        const T* p = in.data() + (s * c + ch) * inner;
        for (std::int64_t i = 0; i < inner; ++i) acc += p[i];
      }
      o[ch] = static_cast<T>(acc);
    }
  });
  Shape shape = x.shape();
  return Tensor::attach(out, "sum_per_channel", {x},
                        [shape](const Tensor& g, const std::vector<bool>&) {
                          return std::vector<Tensor>{broadcast_channel(g, shape)};
                        });
}

Tensor broadcast_channel(const Tensor& v, const Shape& shape) {
  if (v.rank() != 1 || shape.size() < 2 || shape[1] != v.dim(0)) {
    throw ShapeError("broadcast_channel: " + shape_str(v.shape()) + " onto " + shape_str(shape));
  }
  const auto n = shape[0], c = shape[1], inner = channel_inner(shape);
  Tensor out = Tensor::make(shape, v.dtype());
  dispatch(v.dtype(), [&]<typename T>() {
    auto src = v.data<T>();
    auto o = out.data<T>();
    for (std::int64_t s = 0; s < n; ++s)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        T* p = o.data() + (s * c + ch) * inner;
        for (std::int64_t i = 0; i < inner; ++i) p[i] = src[ch];
      }
  });
  return Tensor::attach(out, "broadcast_channel", {v},
                        [](const Tensor& g, const std::vector<bool>&) {
                          return std::vector<Tensor>{sum_per_channel(g)};
                        });
}

Tensor sum_per_sample(const Tensor& x) {
  const auto n = x.dim(0);
  const auto inner = x.numel() / n;
  Tensor out = Tensor::make({n}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto in = x.data<T>();
    auto o = out.data<T>();
    for (std::int64_t s = 0; s < n; ++s) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < inner; ++i) acc += in[s * inner + i];
      o[s] = static_cast<T>(acc);
    }
  });
  Shape shape = x.shape();
  return Tensor::attach(out, "sum_per_sample", {x},
                        [shape](const Tensor& g, const std::vector<bool>&) {
                          return std::vector<Tensor>{broadcast_sample(g, shape)};
                        });
}

Tensor broadcast_sample(const Tensor& v, const Shape& shape) {
  if (v.rank() != 1 || shape.empty() || shape[0] != v.dim(0)) {
    throw ShapeError("broadcast_sample: " + shape_str(v.shape()) + " onto " + shape_str(shape));
  }
  const auto n = shape[0];
  const auto inner = shape_numel(shape) / n;
  Tensor out = Tensor::make(shape, v.dtype());
  dispatch(v.dtype(), [&]<typename T>() {
    auto src = v.data<T>();
    auto o = out.data<T>();
    for (std::int64_t s = 0; s < n; ++s)
      for (std::int64_t i = 0; i < inner; ++i) o[s * inner + i] = src[s];
  });
  return Tensor::attach(out, "broadcast_sample", {v},
                        [](const Tensor& g, const std::vector<bool>&) {
                          return std::vector<Tensor>{sum_per_sample(g)};
                        });
}

// ---------------------------------------------------------------------------
// Layout

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor out = Tensor::make(shape, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    std::copy(src.begin(), src.end(), out.data<T>().begin());
  });
  Shape orig = x.shape();
  return Tensor::attach(out, "reshape", {x}, [orig](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{reshape(g, orig)};
  });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) ||
      a.dim(3) != b.dim(3) || a.dtype() != b.dtype()) {
    throw ShapeError("concat_channels: " + shape_str(a.shape()) + " with " +
                     shape_str(b.shape()));
  }
  const auto n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor out = Tensor::make({n, ca + cb, a.dim(2), a.dim(3)}, a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto pa = a.data<T>();
    auto pb = b.data<T>();
    auto o = out.data<T>();
    for (std::int64_t s = 0; s < n; ++s) {
      std::copy_n(pa.data() + s * ca * hw, ca * hw, o.data() + s * (ca + cb) * hw);
      std::copy_n(pb.data() + s * cb * hw, cb * hw, o.data() + (s * (ca + cb) + ca) * hw);
    }
  });
  return Tensor::attach(out, "concat_channels", {a, b},
                        [ca, cb](const Tensor& g, const std::vector<bool>& need) {
                          return std::vector<Tensor>{
                              need[0] ? slice_channels(g, 0, ca) : Tensor(),
                              need[1] ? slice_channels(g, ca, cb) : Tensor()};
                        });
}

Tensor slice_channels(const Tensor& x, std::int64_t start, std::int64_t count) {
  if (x.rank() != 4 || start < 0 || count <= 0 || start + count > x.dim(1)) {
    throw ShapeError("slice_channels: [" + std::to_string(start) + ", +" + std::to_string(count) +
                     ") of " + shape_str(x.shape()));
  }
  const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out = Tensor::make({n, count, x.dim(2), x.dim(3)}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto in = x.data<T>();
    auto o = out.data<T>();
    for (std::int64_t s = 0; s < n; ++s)
      std::copy_n(in.data() + (s * c + start) * hw, count * hw, o.data() + s * count * hw);
  });
  return Tensor::attach(out, "slice_channels", {x},
                        [start, c](const Tensor& g, const std::vector<bool>&) {
                          return std::vector<Tensor>{embed_channels(g, start, c)};
                        });
}

Tensor embed_channels(const Tensor& x, std::int64_t start, std::int64_t total) {
  if (x.rank() != 4 || start < 0 || start + x.dim(1) > total) {
    throw ShapeError("embed_channels: " + shape_str(x.shape()) + " at " + std::to_string(start) +
                     " into " + std::to_string(total));
  }
  const auto n = x.dim(0), count = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out = Tensor::make({n, total, x.dim(2), x.dim(3)}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto in = x.data<T>();
    auto o = out.data<T>();
    for (std::int64_t s = 0; s < n; ++s)
      std::copy_n(in.data() + s * count * hw, count * hw, o.data() + (s * total + start) * hw);
  });
  return Tensor::attach(out, "embed_channels", {x},
                        [start, count](const Tensor& g, const std::vector<bool>&) {
                          return std::vector<Tensor>{slice_channels(g, start, count)};
                        });
}

Tensor lerp(const Tensor& a, const Tensor& b, double eps) {
  check_same(a, b, "lerp");
  return add(scale(a, eps), scale(b, 1.0 - eps));
}

Tensor lerp(const Tensor& a, const Tensor& b, const Tensor& eps) {
  check_same(a, b, "lerp");
  if (eps.rank() != 1 || eps.dim(0) != a.dim(0)) {
    throw ShapeError("lerp: per-sample weights " + shape_str(eps.shape()) + " for " +
                     shape_str(a.shape()));
  }
  Tensor w = broadcast_sample(eps, a.shape());
  // b + w * (a - b)
  return add(b, mul(w, sub(a, b)));
}

// ---------------------------------------------------------------------------
// Normalization and dropout

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, double eps,
                  Mode mode, RunningStats& stats) {
  if (input.rank() != 4 || gamma.rank() != 1 || beta.rank() != 1 ||
      gamma.dim(0) != input.dim(1) || beta.dim(0) != input.dim(1)) {
    throw ShapeError("batch_norm: input " + shape_str(input.shape()) + " gamma " +
                     shape_str(gamma.shape()) + " beta " + shape_str(beta.shape()));
  }
  const auto& shape = input.shape();
  const auto c = input.dim(1);
  const std::int64_t m = input.dim(0) * input.dim(2) * input.dim(3);
  if (!stats.mean.defined()) {
    stats.mean = Tensor::zeros({c}, input.dtype());
    stats.var = Tensor::full({c}, 1.0, input.dtype());
  }

  if (mode == Mode::eval) {
    // running stats never require grad, so only gamma/beta/input are tracked
    Tensor inv = div(Tensor::full({c}, 1.0, input.dtype()), sqrt(add_scalar(stats.var, eps)));
    Tensor centered = sub(input, broadcast_channel(stats.mean, shape));
    return add(mul(centered, broadcast_channel(mul(inv, gamma), shape)),
               broadcast_channel(beta, shape));
  }

  if (m < 2) {
    throw ShapeError("batch_norm: train mode needs at least two values per channel, got " +
                     shape_str(shape));
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  Tensor mu = scale(sum_per_channel(input), inv_m);
  Tensor centered = sub(input, broadcast_channel(mu, shape));
  Tensor var = scale(sum_per_channel(square(centered)), inv_m);
  Tensor inv = div(Tensor::full({c}, 1.0, input.dtype()), sqrt(add_scalar(var, eps)));
  Tensor out = add(mul(centered, broadcast_channel(mul(inv, gamma), shape)),
                   broadcast_channel(beta, shape));

  {
    const double mom = stats.momentum;
    const double unbias = static_cast<double>(m) / static_cast<double>(m - 1);
    auto bm = mu.values();
    auto bv = var.values();
    auto rm = stats.mean.values();
    auto rv = stats.var.values();
    for (std::int64_t i = 0; i < c; ++i) {
      rm[i] = (1.0 - mom) * rm[i] + mom * bm[i];
      rv[i] = (1.0 - mom) * rv[i] + mom * bv[i] * unbias;
    }
    stats.mean.assign_values(rm);
    stats.var.assign_values(rv);
  }
  return out;
}

Tensor dropout(const Tensor& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0) || rate >= 1.0) {
    throw std::invalid_argument("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::eval || rate == 0.0) return x;
  Tensor mask = Tensor::make(x.shape(), x.dtype());
  const double keep = 1.0 / (1.0 - rate);
  dispatch(x.dtype(), [&]<typename T>() {
    for (auto& v : mask.data<T>()) v = rng.uniform() < rate ? T(0) : static_cast<T>(keep);
  });
  return mul(x, mask);
}

}  // namespace psyn
