#include "psyn/optim.hpp"

#include <cmath>
#include <cstring>

#include "psyn/detail/dispatch.hpp"

namespace psyn {

using detail::dispatch;

Tensor& ParamSet::add(const std::string& path, Tensor value) {
  if (index_.count(path)) throw std::invalid_argument("duplicate parameter path: " + path);
  if (!value.is_leaf()) value = value.detach();
  value.set_requires_grad(true);
  index_[path] = entries_.size();
  paths_.push_back(path);
  AdamState st{Tensor::zeros(value.shape(), value.dtype()),
               Tensor::zeros(value.shape(), value.dtype()), 0};
  entries_.push_back({std::move(value), std::move(st)});
  return entries_.back().value;
}

Tensor& ParamSet::at(const std::string& path) {
  auto it = index_.find(path);
  if (it == index_.end()) throw std::out_of_range("unknown parameter path: " + path);
  return entries_[it->second].value;
}

const Tensor& ParamSet::at(const std::string& path) const {
  auto it = index_.find(path);
  if (it == index_.end()) throw std::out_of_range("unknown parameter path: " + path);
  return entries_[it->second].value;
}

AdamState& ParamSet::state(const std::string& path) {
  auto it = index_.find(path);
  if (it == index_.end()) throw std::out_of_range("unknown parameter path: " + path);
  return entries_[it->second].state;
}

const AdamState& ParamSet::state(const std::string& path) const {
  auto it = index_.find(path);
  if (it == index_.end()) throw std::out_of_range("unknown parameter path: " + path);
  return entries_[it->second].state;
}

std::vector<Tensor> ParamSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.value);
  return out;
}

std::int64_t ParamSet::total_elements() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

std::uint64_t ParamSet::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& e : entries_) {
    dispatch(e.value.dtype(), [&]<typename T>() {
      auto d = e.value.data<T>();
      mix(d.data(), d.size_bytes());
    });
  }
  return h;
}

void adam_step(ParamSet& params, const std::vector<Tensor>& grads, const AdamConfig& cfg) {
  if (grads.size() != params.size()) {
    throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  const auto& paths = params.paths();
  for (std::size_t i = 0; i < paths.size(); ++i) {
    Tensor& p = params.at(paths[i]);
    if (grads[i].shape() != p.shape() || grads[i].dtype() != p.dtype()) {
      throw ShapeError("adam_step: gradient " + shape_str(grads[i].shape()) + " for parameter " +
                       paths[i] + " " + shape_str(p.shape()));
    }
  }
  for (std::size_t i = 0; i < paths.size(); ++i) {
    Tensor& p = params.at(paths[i]);
    AdamState& st = params.state(paths[i]);
    st.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    dispatch(p.dtype(), [&]<typename T>() {
      auto w = p.data<T>();
      auto g = grads[i].data<T>();
      auto m = st.m.data<T>();
      auto v = st.v.data<T>();
      const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
      for (std::size_t k = 0; k < w.size(); ++k) {
        m[k] = b1 * m[k] + (T(1) - b1) * g[k];
        v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
        const double mhat = static_cast<double>(m[k]) / bc1;
        const double vhat = static_cast<double>(v[k]) / bc2;
        w[k] = static_cast<T>(static_cast<double>(w[k]) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
      }
    });
  }
}

}  // namespace psyn
