#include <algorithm>
#include <string>
#include <vector>

#include "psyn/detail/dispatch.hpp"
#include "psyn/tensor.hpp"

namespace psyn {

using detail::dispatch;

namespace {

struct Geometry {
  std::int64_t n, in_c, h, w;     // dense side
  std::int64_t out_c, oh, ow;     // strided side
  std::int64_t kh, kw;
  int stride, pad;
};

// Range of strided-side columns o for which o*stride - pad + k lands in [0, extent).
inline void valid_range(std::int64_t k, std::int64_t extent, std::int64_t out_extent, int stride,
                        int pad, std::int64_t& lo, std::int64_t& hi) {
  // need 0 <= o*s - p + k <= extent-1
  const std::int64_t a = pad - k;
  lo = a <= 0 ? 0 : (a + stride - 1) / stride;
  const std::int64_t b = extent - 1 + pad - k;
  hi = b < 0 ? -1 : b / stride;
  hi = std::min(hi, out_extent - 1);
}

// Patch matrix layout: row r = (c, i, j) of the kernel window, column
// q = n * P + (oy * ow + ox) with P = oh * ow. Out-of-image taps stay zero.
template <typename T>
void im2col(const Geometry& g, const T* x, T* cols) {
  const std::int64_t p = g.oh * g.ow, np = g.n * p;
  for (std::int64_t c = 0; c < g.in_c; ++c) {
    for (std::int64_t i = 0; i < g.kh; ++i) {
      std::int64_t oy_lo, oy_hi;
      valid_range(i, g.h, g.oh, g.stride, g.pad, oy_lo, oy_hi);
      for (std::int64_t j = 0; j < g.kw; ++j) {
        std::int64_t ox_lo, ox_hi;
        valid_range(j, g.w, g.ow, g.stride, g.pad, ox_lo, ox_hi);
        T* row = cols + ((c * g.kh + i) * g.kw + j) * np;
        for (std::int64_t n = 0; n < g.n; ++n) {
          const T* xp = x + (n * g.in_c + c) * g.h * g.w;
          T* dst = row + n * p;
          for (std::int64_t oy = oy_lo; oy <= oy_hi; ++oy) {
            const T* xr = xp + (oy * g.stride - g.pad + i) * g.w - g.pad + j;
            T* d = dst + oy * g.ow;
            const int s = g.stride;
            for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) d[ox] = xr[ox * s];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates patch columns back onto the image.
template <typename T>
void col2im(const Geometry& g, const T* cols, T* x) {
  const std::int64_t p = g.oh * g.ow, np = g.n * p;
  for (std::int64_t c = 0; c < g.in_c; ++c) {
    for (std::int64_t i = 0; i < g.kh; ++i) {
      std::int64_t oy_lo, oy_hi;
      valid_range(i, g.h, g.oh, g.stride, g.pad, oy_lo, oy_hi);
      for (std::int64_t j = 0; j < g.kw; ++j) {
        std::int64_t ox_lo, ox_hi;
        valid_range(j, g.w, g.ow, g.stride, g.pad, ox_lo, ox_hi);
        const T* row = cols + ((c * g.kh + i) * g.kw + j) * np;
        for (std::int64_t n = 0; n < g.n; ++n) {
          T* xp = x + (n * g.in_c + c) * g.h * g.w;
          const T* src = row + n * p;
          for (std::int64_t oy = oy_lo; oy <= oy_hi; ++oy) {
            T* xr = xp + (oy * g.stride - g.pad + i) * g.w - g.pad + j;
            const T* d = src + oy * g.ow;
            const int s = g.stride;
            for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) xr[ox * s] += d[ox];
          }
        }
      }
    }
  }
}

// [N, F, P] <-> [F, N * P]
template <typename T>
void to_feature_major(const Geometry& g, const T* y, T* out) {
  const std::int64_t p = g.oh * g.ow, np = g.n * p;
  for (std::int64_t n = 0; n < g.n; ++n)
    for (std::int64_t f = 0; f < g.out_c; ++f)
      std::copy_n(y + (n * g.out_c + f) * p, p, out + f * np + n * p);
}

template <typename T>
void from_feature_major(const Geometry& g, const T* in, T* y) {
  const std::int64_t p = g.oh * g.ow, np = g.n * p;
  for (std::int64_t n = 0; n < g.n; ++n)
    for (std::int64_t f = 0; f < g.out_c; ++f)
      std::copy_n(in + f * np + n * p, p, y + (n * g.out_c + f) * p);
}

constexpr std::int64_t kColBlock = 256;

// C[m, q] += sum_k A[m, k] * B[k, q]; A is m x k, B is k x cols.
template <typename T>
void gemm_nn(std::int64_t m, std::int64_t k, std::int64_t cols, const T* a, const T* b, T* c) {
  for (std::int64_t q0 = 0; q0 < cols; q0 += kColBlock) {
    const std::int64_t q1 = std::min(cols, q0 + kColBlock);
    for (std::int64_t i = 0; i < m; ++i) {
      T* crow = c + i * cols;
      for (std::int64_t r = 0; r < k; ++r) {
        const T av = a[i * k + r];
        const T* brow = b + r * cols;
        for (std::int64_t q = q0; q < q1; ++q) crow[q] += av * brow[q];
      }
    }
  }
}

// C[k, q] += sum_m A[m, k] * B[m, q]; A is m x k, B is m x cols.
template <typename T>
void gemm_tn(std::int64_t m, std::int64_t k, std::int64_t cols, const T* a, const T* b, T* c) {
  for (std::int64_t q0 = 0; q0 < cols; q0 += kColBlock) {
    const std::int64_t q1 = std::min(cols, q0 + kColBlock);
    for (std::int64_t r = 0; r < k; ++r) {
      T* crow = c + r * cols;
      for (std::int64_t i = 0; i < m; ++i) {
        const T av = a[i * k + r];
        const T* brow = b + i * cols;
        for (std::int64_t q = q0; q < q1; ++q) crow[q] += av * brow[q];
      }
    }
  }
}

// C[m, k] = sum_q A[m, q] * B[k, q]
template <typename T>
void gemm_nt(std::int64_t m, std::int64_t k, std::int64_t cols, const T* a, const T* b, T* c) {
  for (std::int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * cols;
    for (std::int64_t r = 0; r < k; ++r) {
      const T* brow = b + r * cols;
      T acc = 0;
      for (std::int64_t q = 0; q < cols; ++q) acc += arow[q] * brow[q];
      c[i * k + r] = acc;
    }
  }
}

// y = conv2d(x, K)
template <typename T>
void conv2d_kernel(const Geometry& g, const T* x, const T* k, T* y) {
  const std::int64_t ckk = g.in_c * g.kh * g.kw, np = g.n * g.oh * g.ow;
  std::vector<T> cols(static_cast<std::size_t>(ckk * np), T(0));
  std::vector<T> out(static_cast<std::size_t>(g.out_c * np), T(0));
  im2col(g, x, cols.data());
  gemm_nn(g.out_c, ckk, np, k, cols.data(), out.data());
  from_feature_major(g, out.data(), y);
}

// x += conv2d^T(y, K)
template <typename T>
void conv2d_adjoint_kernel(const Geometry& g, const T* y, const T* k, T* x) {
  const std::int64_t ckk = g.in_c * g.kh * g.kw, np = g.n * g.oh * g.ow;
  std::vector<T> ym(static_cast<std::size_t>(g.out_c * np));
  std::vector<T> cols(static_cast<std::size_t>(ckk * np), T(0));
  to_feature_major(g, y, ym.data());
  gemm_tn(g.out_c, ckk, np, k, ym.data(), cols.data());
  col2im(g, cols.data(), x);
}

// dK[f, (c,i,j)] = sum_{n,oy,ox} y[n,f,oy,ox] * x[n,c,oy*s-p+i, ox*s-p+j]
template <typename T>
void conv2d_weight_kernel(const Geometry& g, const T* x, const T* y, T* dk) {
  const std::int64_t ckk = g.in_c * g.kh * g.kw, np = g.n * g.oh * g.ow;
  std::vector<T> cols(static_cast<std::size_t>(ckk * np), T(0));
  std::vector<T> ym(static_cast<std::size_t>(g.out_c * np));
  im2col(g, x, cols.data());
  to_feature_major(g, y, ym.data());
  gemm_nt(g.out_c, ckk, np, ym.data(), cols.data(), dk);
}

void check_conv_args(const char* op, int stride, int pad) {
  if (stride <= 0) throw ShapeError(std::string(op) + ": stride must be positive");
  if (pad < 0) throw ShapeError(std::string(op) + ": padding must be non-negative");
}

void check_rank4(const char* op, const Tensor& t, const char* what) {
  if (!t.defined() || t.rank() != 4) {
    throw ShapeError(std::string(op) + ": " + what + " must be rank 4, got " +
                     (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad) {
  check_conv_args("conv2d", stride, pad);
  check_rank4("conv2d", input, "input");
  check_rank4("conv2d", kernel, "kernel");
  if (input.dim(1) != kernel.dim(1)) {
    throw ShapeError("conv2d: input channels " + std::to_string(input.dim(1)) +
                     " do not match kernel channels " + std::to_string(kernel.dim(1)) +
                     " (input " + shape_str(input.shape()) + ", kernel " +
                     shape_str(kernel.shape()) + ")");
  }
  if (input.dtype() != kernel.dtype()) throw ShapeError("conv2d: dtype mismatch");
  Geometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0), 0, 0,
             kernel.dim(2), kernel.dim(3), stride, pad};
  if (g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw) {
    throw ShapeError("conv2d: kernel " + shape_str(kernel.shape()) + " larger than padded input " +
                     shape_str(input.shape()));
  }
  g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
  g.ow = (g.w + 2 * pad - g.kw) / stride + 1;
  Tensor out = Tensor::make({g.n, g.out_c, g.oh, g.ow}, input.dtype());
  dispatch(input.dtype(), [&]<typename T>() {
    conv2d_kernel<T>(g, input.data<T>().data(), kernel.data<T>().data(), out.data<T>().data());
  });
  const auto h = g.h, w = g.w, kh = g.kh, kw = g.kw;
  return Tensor::attach(
      out, "conv2d", {input, kernel},
      [input, kernel, stride, pad, h, w, kh, kw](const Tensor& grad,
                                                 const std::vector<bool>& need) {
        Tensor gi = need[0] ? conv_transpose2d(grad, kernel, stride, pad, h, w) : Tensor();
        Tensor gk = need[1] ? conv2d_kernel_grad(input, grad, kh, kw, stride, pad) : Tensor();
        return std::vector<Tensor>{gi, gk};
      });
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, int stride, int pad) {
  check_rank4("conv_transpose2d", input, "input");
  check_rank4("conv_transpose2d", kernel, "kernel");
  const auto oh = (input.dim(2) - 1) * stride - 2 * pad + kernel.dim(2);
  const auto ow = (input.dim(3) - 1) * stride - 2 * pad + kernel.dim(3);
  return conv_transpose2d(input, kernel, stride, pad, oh, ow);
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, int stride, int pad,
                        std::int64_t out_h, std::int64_t out_w) {
  check_conv_args("conv_transpose2d", stride, pad);
  check_rank4("conv_transpose2d", input, "input");
  check_rank4("conv_transpose2d", kernel, "kernel");
  if (input.dim(1) != kernel.dim(0)) {
    throw ShapeError("conv_transpose2d: input channels " + std::to_string(input.dim(1)) +
                     " do not match kernel input channels " + std::to_string(kernel.dim(0)) +
                     " (input " + shape_str(input.shape()) + ", kernel " +
                     shape_str(kernel.shape()) + ")");
  }
  if (input.dtype() != kernel.dtype()) throw ShapeError("conv_transpose2d: dtype mismatch");
  if (out_h <= 0 || out_w <= 0) {
    throw ShapeError("conv_transpose2d: non-positive output extent for input " +
                     shape_str(input.shape()));
  }
  // Viewed as the adjoint of a conv2d from the (out_h, out_w) image to `input`.
  Geometry g{input.dim(0), kernel.dim(1), out_h, out_w, kernel.dim(0), input.dim(2), input.dim(3),
             kernel.dim(2), kernel.dim(3), stride, pad};
  if ((g.h + 2 * pad - g.kh) / stride + 1 != g.oh || (g.w + 2 * pad - g.kw) / stride + 1 != g.ow ||
      g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw) {
    throw ShapeError("conv_transpose2d: output extent " + std::to_string(out_h) + "x" +
                     std::to_string(out_w) + " inconsistent with input " +
                     shape_str(input.shape()) + " and kernel " + shape_str(kernel.shape()));
  }
  Tensor out = Tensor::make({g.n, g.in_c, out_h, out_w}, input.dtype());
  dispatch(input.dtype(), [&]<typename T>() {
    conv2d_adjoint_kernel<T>(g, input.data<T>().data(), kernel.data<T>().data(),
                             out.data<T>().data());
  });
  const auto kh = g.kh, kw = g.kw;
  return Tensor::attach(out, "conv_transpose2d", {input, kernel},
                        [input, kernel, stride, pad, kh, kw](const Tensor& grad,
                                                             const std::vector<bool>& need) {
                          Tensor gi = need[0] ? conv2d(grad, kernel, stride, pad) : Tensor();
                          Tensor gk = need[1]
                                          ? conv2d_kernel_grad(grad, input, kh, kw, stride, pad)
                                          : Tensor();
                          return std::vector<Tensor>{gi, gk};
                        });
}

Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& grad_out, std::int64_t kh,
                          std::int64_t kw, int stride, int pad) {
  check_conv_args("conv2d_kernel_grad", stride, pad);
  check_rank4("conv2d_kernel_grad", input, "input");
  check_rank4("conv2d_kernel_grad", grad_out, "grad_out");
  Geometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), grad_out.dim(1),
             grad_out.dim(2), grad_out.dim(3), kh, kw, stride, pad};
  if (grad_out.dim(0) != g.n || (g.h + 2 * pad - kh) / stride + 1 != g.oh ||
      (g.w + 2 * pad - kw) / stride + 1 != g.ow) {
    throw ShapeError("conv2d_kernel_grad: input " + shape_str(input.shape()) +
                     " inconsistent with grad_out " + shape_str(grad_out.shape()));
  }
  if (input.dtype() != grad_out.dtype()) throw ShapeError("conv2d_kernel_grad: dtype mismatch");
  Tensor out = Tensor::make({g.out_c, g.in_c, kh, kw}, input.dtype());
  dispatch(input.dtype(), [&]<typename T>() {
    conv2d_weight_kernel<T>(g, input.data<T>().data(), grad_out.data<T>().data(),
                            out.data<T>().data());
  });
  const auto h = g.h, w = g.w;
  return Tensor::attach(out, "conv2d_kernel_grad", {input, grad_out},
                        [input, grad_out, stride, pad, h, w](const Tensor& grad,
                                                             const std::vector<bool>& need) {
                          // <kgrad(x, y), G> = <conv2d(x, G), y> = <x, convT(y, G)>
                          Tensor gx = need[0]
                                          ? conv_transpose2d(grad_out, grad, stride, pad, h, w)
                                          : Tensor();
                          Tensor gy = need[1] ? conv2d(input, grad, stride, pad) : Tensor();
                          return std::vector<Tensor>{gx, gy};
                        });
}

}  // namespace psyn
