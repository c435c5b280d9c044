#pragma once

#include <span>
#include <vector>

#include "psyn/tensor.hpp"

namespace psyn {

/// Reverse-mode gradients of a scalar `loss` with respect to each tensor in
/// `wrt`. Entries the loss does not depend on get zeros. With
/// `create_graph` the returned gradients carry their own graph, so they can
/// be differentiated again.
std::vector<Tensor> backward(const Tensor& loss, std::span<const Tensor> wrt,
                             bool create_graph = false);

inline std::vector<Tensor> backward(const Tensor& loss, std::initializer_list<Tensor> wrt,
                                    bool create_graph = false) {
  return backward(loss, std::span<const Tensor>(wrt.begin(), wrt.size()), create_graph);
}

}  // namespace psyn
