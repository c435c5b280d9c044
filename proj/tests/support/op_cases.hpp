#pragma once

// One randomized small-shape case per differentiable op, f64 throughout.

#include <vector>

#include "gradcheck.hpp"

namespace psyn::testing {

struct OpCase {
  const char* name;
  ScalarFn fn;
  std::vector<Tensor> inputs;
};

inline std::vector<OpCase> differentiable_op_cases(Rng& rng) {
  using Inputs = std::vector<Tensor>;
  auto rt = [&](const Shape& s, double lo = -1.0, double hi = 1.0) { return random_tensor(s, rng, lo, hi); };
  // Weights break the symmetry of plain sums.
  const Tensor wts = rt({2, 3, 4, 4});
  auto weighted = [wts](const Tensor& y) { return sum(mul(y, wts)); };

  return {
      {"add", [=](const Inputs& in) { return weighted(add(in[0], in[1])); }, {rt({2, 3, 4, 4}), rt({2, 3, 4, 4})}},
      {"sub", [=](const Inputs& in) { return weighted(sub(in[0], in[1])); }, {rt({2, 3, 4, 4}), rt({2, 3, 4, 4})}},
      {"mul", [=](const Inputs& in) { return weighted(mul(in[0], in[1])); }, {rt({2, 3, 4, 4}), rt({2, 3, 4, 4})}},
      {"div", [=](const Inputs& in) { return weighted(div(in[0], in[1])); }, {rt({2, 3, 4, 4}), rt({2, 3, 4, 4}, 0.5, 2.0)}},
      {"neg/scale/add_scalar", [=](const Inputs& in) { return weighted(add_scalar(scale(neg(in[0]), 1.7), 0.3)); }, {rt({2, 3, 4, 4})}},
      {"square", [=](const Inputs& in) { return weighted(square(in[0])); }, {rt({2, 3, 4, 4})}},
      {"sqrt", [=](const Inputs& in) { return weighted(sqrt(in[0])); }, {rt({2, 3, 4, 4}, 0.5, 2.0)}},
      {"abs", [=](const Inputs& in) { return weighted(abs(in[0])); }, {rt({2, 3, 4, 4}, 0.1, 1.0)}},
      {"relu", [=](const Inputs& in) { return weighted(relu(in[0])); }, {rt({2, 3, 4, 4})}},
      {"leaky_relu", [=](const Inputs& in) { return weighted(leaky_relu(in[0], 0.2)); }, {rt({2, 3, 4, 4})}},
      {"tanh", [=](const Inputs& in) { return weighted(tanh(in[0])); }, {rt({2, 3, 4, 4})}},
      {"sigmoid", [=](const Inputs& in) { return weighted(sigmoid(in[0])); }, {rt({2, 3, 4, 4})}},
      {"mean", [=](const Inputs& in) { return mean(square(in[0])); }, {rt({2, 3, 4, 4})}},
      {"sum_per_channel", [=](const Inputs& in) { return sum(square(sum_per_channel(in[0]))); }, {rt({2, 3, 4, 4})}},
      {"broadcast_channel", [=](const Inputs& in) { return weighted(broadcast_channel(in[0], {2, 3, 4, 4})); }, {rt({3})}},
      {"sum_per_sample", [=](const Inputs& in) { return sum(square(sum_per_sample(in[0]))); }, {rt({2, 3, 4, 4})}},
      {"broadcast_sample", [=](const Inputs& in) { return weighted(broadcast_sample(in[0], {2, 3, 4, 4})); }, {rt({2})}},
      {"expand_scalar", [=](const Inputs& in) { return weighted(expand_scalar(in[0], {2, 3, 4, 4})); }, {rt({1})}},
      {"reshape", [=](const Inputs& in) { return weighted(reshape(in[0], {2, 3, 4, 4})); }, {rt({6, 16})}},
      {"concat/slice", [=](const Inputs& in) { return weighted(concat_channels(in[0], slice_channels(in[1], 1, 2))); }, {rt({2, 1, 4, 4}), rt({2, 4, 4, 4})}},
      {"embed", [=](const Inputs& in) { return weighted(embed_channels(in[0], 1, 3)); }, {rt({2, 2, 4, 4})}},
      {"lerp", [=](const Inputs& in) { return weighted(lerp(in[0], in[1], 0.3)); }, {rt({2, 3, 4, 4}), rt({2, 3, 4, 4})}},
      {"lerp per-sample", [=](const Inputs& in) { return weighted(lerp(in[0], in[1], in[2])); }, {rt({2, 3, 4, 4}), rt({2, 3, 4, 4}), rt({2}, 0, 1)}},
      {"conv2d", [=](const Inputs& in) { return sum(square(conv2d(in[0], in[1], 2, 1))); }, {rt({2, 3, 6, 6}), rt({4, 3, 4, 4})}},
      {"conv2d 3x3", [=](const Inputs& in) { return sum(square(conv2d(in[0], in[1], 1, 1))); }, {rt({1, 2, 5, 4}), rt({3, 2, 3, 3})}},
      {"conv_transpose2d", [=](const Inputs& in) { return sum(square(conv_transpose2d(in[0], in[1], 2, 1))); }, {rt({2, 3, 3, 3}), rt({3, 2, 4, 4})}},
      {"conv2d_kernel_grad", [=](const Inputs& in) { return sum(square(conv2d_kernel_grad(in[0], in[1], 4, 4, 2, 1))); }, {rt({2, 2, 6, 6}), rt({2, 3, 3, 3})}},
      {"batch_norm train", [=](const Inputs& in) {
         RunningStats st;
         return weighted(batch_norm(in[0], in[1], in[2], 1e-5, Mode::train, st));
       }, {rt({2, 3, 4, 4}), rt({3}, 0.5, 1.5), rt({3})}},
      {"batch_norm eval", [=](const Inputs& in) {
         RunningStats st{Tensor::from_values({3}, {0.1, -0.2, 0.3}, DType::f64),
                         Tensor::from_values({3}, {1.5, 0.7, 2.0}, DType::f64)};
         return weighted(batch_norm(in[0], in[1], in[2], 1e-5, Mode::eval, st));
       }, {rt({2, 3, 4, 4}), rt({3}, 0.5, 1.5), rt({3})}},
  };
}

}  // namespace psyn::testing
