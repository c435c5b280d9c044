#include "psyn/autograd.hpp"

#include <unordered_map>
#include <unordered_set>

namespace psyn {

namespace {

using Key = const TensorImpl*;

// Post-order over the producing graph, restricted to tensors that require grad.
std::vector<Tensor> topo_order(const Tensor& root) {
  std::vector<Tensor> order;
  std::unordered_set<Key> visited;
  struct Frame {
    Tensor t;
    std::size_t next = 0;
  };
  std::vector<Frame> stack;
  stack.push_back({root});
  visited.insert(root.id());
  while (!stack.empty()) {
    Frame& top = stack.back();
    const auto& fn = top.t.grad_fn();
    if (fn && top.next < fn->inputs.size()) {
      const Tensor& in = fn->inputs[top.next++];
      if (in.defined() && in.requires_grad() && visited.insert(in.id()).second) {
        stack.push_back({in});
      }
      continue;
    }
    order.push_back(top.t);
    stack.pop_back();
  }
  return order;
}

}  // namespace

std::vector<Tensor> backward(const Tensor& loss, std::span<const Tensor> wrt, bool create_graph) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }

  std::vector<Tensor> result;
  result.reserve(wrt.size());
  auto zeros_like = [](const Tensor& t) { return Tensor::zeros(t.shape(), t.dtype()); };

  if (!loss.requires_grad()) {
    for (const auto& w : wrt) result.push_back(zeros_like(w));
    return result;
  }

  const std::vector<Tensor> order = topo_order(loss);

  // A tensor needs a gradient if some wrt entry is reachable from it.
  std::unordered_set<Key> targets;
  for (const auto& w : wrt) targets.insert(w.id());
  std::unordered_set<Key> needed;
  for (const auto& t : order) {  // inputs precede consumers in post-order
    bool need = targets.count(t.id()) > 0;
    if (!need && t.grad_fn()) {
      for (const auto& in : t.grad_fn()->inputs) {
        if (in.defined() && needed.count(in.id())) {
          need = true;
          break;
        }
      }
    }
    if (need) needed.insert(t.id());
  }

  EnableGradGuard mode(create_graph);
  std::unordered_map<Key, Tensor> grads;
  grads[loss.id()] = Tensor::full(loss.shape(), 1.0, loss.dtype());

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Tensor& t = *it;
    const auto& fn = t.grad_fn();
    if (!fn || !needed.count(t.id())) continue;
    auto g_it = grads.find(t.id());
    if (g_it == grads.end()) continue;
    const Tensor g = g_it->second;
    // Interior gradients are no longer needed once propagated, unless requested.
    if (!targets.count(t.id())) grads.erase(g_it);

    std::vector<bool> need_in(fn->inputs.size());
    bool any = false;
    for (std::size_t i = 0; i < fn->inputs.size(); ++i) {
      const auto& in = fn->inputs[i];
      need_in[i] = in.defined() && in.requires_grad() && needed.count(in.id()) > 0;
      any = any || need_in[i];
    }
    if (!any) continue;

    std::vector<Tensor> in_grads = fn->backward(g, need_in);
    for (std::size_t i = 0; i < fn->inputs.size(); ++i) {
      if (!need_in[i]) continue;
      const Tensor& gi = in_grads.at(i);
      if (!gi.defined()) continue;
      auto [slot, inserted] = grads.try_emplace(fn->inputs[i].id(), gi);
      if (!inserted) slot->second = add(slot->second, gi);
    }
  }

  for (const auto& w : wrt) {
    auto g_it = grads.find(w.id());
    if (g_it == grads.end()) {
      result.push_back(zeros_like(w));
    } else if (create_graph) {
      result.push_back(g_it->second);
    } else {
      result.push_back(g_it->second.detach());
    }
  }
  return result;
}

}  // namespace psyn
