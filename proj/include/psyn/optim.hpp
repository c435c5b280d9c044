#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "psyn/tensor.hpp"

namespace psyn {

struct AdamState {
  Tensor m;
  Tensor v;
  std::int64_t step = 0;
};

/// Named trainable parameters plus their Adam moments. Paths are unique and
/// iteration follows insertion order, so serialized layouts are stable.
class ParamSet {
 public:
  /// Registers a leaf tensor (grad enabled). Duplicate paths are rejected.
  Tensor& add(const std::string& path, Tensor value);

  bool contains(const std::string& path) const { return index_.count(path) > 0; }
  Tensor& at(const std::string& path);
  const Tensor& at(const std::string& path) const;
  AdamState& state(const std::string& path);
  const AdamState& state(const std::string& path) const;

  std::size_t size() const { return entries_.size(); }
  const std::vector<std::string>& paths() const { return paths_; }
  /// Parameter tensors in insertion order.
  std::vector<Tensor> tensors() const;

  std::int64_t total_elements() const;

  /// FNV-1a over every parameter's bytes; cheap change detector.
  std::uint64_t fingerprint() const;

 private:
  struct Entry {
    Tensor value;
    AdamState state;
  };
  std::vector<std::string> paths_;
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update. `grads` aligns with `params.tensors()`.
void adam_step(ParamSet& params, const std::vector<Tensor>& grads, const AdamConfig& cfg);

}  // namespace psyn
