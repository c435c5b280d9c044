#pragma once

#include "psyn/tensor.hpp"

namespace psyn::detail {

/// Invokes `f.template operator()<T>()` with T matching the runtime dtype.
template <typename F>
decltype(auto) dispatch(DType dt, F&& f) {
  if (dt == DType::f32) {
    return f.template operator()<float>();
  }
  return f.template operator()<double>();
}

}  // namespace psyn::detail
