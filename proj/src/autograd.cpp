#include <unordered_map>
#include <unordered_set>

#include "dcsw/errors.hpp"
#include "dcsw/tensor.hpp"

namespace dcsw {

namespace {

using detail::Node;

// Post-order DFS: every node appears after all of its inputs.
std::vector<const Node*> topological_order(const Node* root, bool only_tracked) {
  std::vector<const Node*> order;
  std::unordered_set<const Node*> visited;
  std::vector<std::pair<const Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const Tensor& in = node->inputs[next++];
      if (!in.defined()) continue;
      const Node* child = in.node();
      if (only_tracked && !child->requires_grad) continue;
      if (visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& wrt, bool create_graph) {
  if (!output.defined() || output.numel() != 1) {
    throw UsageError("grad: output must be a scalar tensor, got shape " +
                     (output.defined() ? shape_str(output.shape()) : std::string("<undefined>")));
  }
  std::vector<Tensor> result(wrt.size());
  if (!output.requires_grad()) {
    for (std::size_t i = 0; i < wrt.size(); ++i) result[i] = Tensor::zeros(wrt[i].shape());
    return result;
  }

  const auto order = topological_order(output.node(), /*only_tracked=*/true);

  std::unordered_set<const Node*> targets;
  for (const auto& t : wrt) targets.insert(t.node());

  // A node needs a gradient when some target is reachable from it.
  std::unordered_set<const Node*> needed;
  for (const Node* node : order) {
    bool need = targets.count(node) > 0;
    for (const auto& in : node->inputs) need = need || (in.defined() && needed.count(in.node()));
    if (need) needed.insert(node);
  }

  std::unordered_map<const Node*, Tensor> grads;
  {
    NoGradGuard no_grad;
    grads[output.node()] = Tensor::full(output.shape(), 1.0);
  }

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Node* node = *it;
    if (node->inputs.empty() || !needed.count(node)) continue;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    if (create_graph && !node->differentiable_backward) throw UnsupportedOpError(node->op);

    std::vector<bool> input_needed(node->inputs.size());
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const Tensor& in = node->inputs[i];
      input_needed[i] = in.defined() && in.requires_grad() && needed.count(in.node()) > 0;
    }

    std::vector<Tensor> input_grads;
    if (create_graph) {
      EnableGradGuard enable;
      input_grads = node->backward(found->second, input_needed);
    } else {
      NoGradGuard no_grad;
      input_grads = node->backward(found->second, input_needed);
    }
    // Intermediate gradients are no longer needed once propagated.
    if (!targets.count(node)) grads.erase(found);

    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      if (!input_needed[i] || !input_grads[i].defined()) continue;
      const Node* in = node->inputs[i].node();
      auto slot = grads.find(in);
      if (slot == grads.end()) {
        grads.emplace(in, input_grads[i]);
      } else if (create_graph) {
        EnableGradGuard enable;
        slot->second = add(slot->second, input_grads[i]);
      } else {
        NoGradGuard no_grad;
        slot->second = add(slot->second, input_grads[i]);
      }
    }
  }

  for (std::size_t i = 0; i < wrt.size(); ++i) {
    auto found = grads.find(wrt[i].node());
    result[i] = found != grads.end() ? found->second : Tensor::zeros(wrt[i].shape());
  }
  return result;
}

std::unordered_map<NodeId, Tensor> backward(const Tensor& output) {
  if (!output.defined() || output.numel() != 1) {
    throw UsageError("backward: loss must be a scalar tensor");
  }
  std::vector<Tensor> leaves;
  for (const Node* node : topological_order(output.node(), /*only_tracked=*/true)) {
    for (const auto& in : node->inputs) {
      if (in.defined() && in.is_leaf() && in.requires_grad()) leaves.push_back(in);
    }
  }
  if (output.is_leaf() && output.requires_grad()) leaves.push_back(output);
  auto gs = grad(output, leaves, false);
  std::unordered_map<NodeId, Tensor> out;
  for (std::size_t i = 0; i < leaves.size(); ++i) out.emplace(leaves[i].id(), gs[i]);
  return out;
}

Tensor gradient_as_graph(const Tensor& scalar, const Tensor& wrt) {
  return grad(scalar, {wrt}, /*create_graph=*/true).front();
}

std::vector<GraphEntry> trace_graph(const Tensor& root) {
  std::vector<GraphEntry> entries;
  for (const Node* node : topological_order(root.node(), /*only_tracked=*/false)) {
    GraphEntry e{node->id, node->op, {}, node->shape};
    for (const auto& in : node->inputs) {
      if (in.defined()) e.inputs.push_back(in.id());
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace dcsw
