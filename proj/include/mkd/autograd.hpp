#pragma once

// Reverse-mode differentiation over the active tape.

#include <initializer_list>
#include <optional>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mkd/ops.hpp"
#include "mkd/tensor.hpp"

namespace mkd {

/// Reverse-mode gradient of the scalar `loss` w.r.t. each tensor in `wrt`.
///
/// With create_graph the backward rules are recorded on the active tape as a
/// new generation, so the returned gradients are themselves differentiable.
/// Parameters that do not influence the loss receive zero tensors.
inline GradMap backward(const Tensor& loss, std::span<const Tensor> wrt,
                        bool create_graph = false) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  for (const auto& w : wrt) {
    if (!w.requires_grad()) {
      throw UnreachableParameterError(
          "backward: parameter of shape " + shape_str(w.shape()) +
          " is not tracked (requires_grad is false), so it cannot be on the tape");
    }
  }

  Tape& tape = active_tape();
  std::optional<NoGradGuard> no_grad;
  if (create_graph) {
    tape.begin_generation();
  } else {
    no_grad.emplace();
  }

  std::unordered_set<const detail::TensorImpl*> keep;
  for (const auto& w : wrt) keep.insert(w.id());

  std::unordered_map<const detail::TensorImpl*, Tensor> grads;
  grads.emplace(loss.id(), Tensor::ones(loss.shape()));

  if (tape.owns(loss)) {
    for (std::size_t i = tape.node_index(loss) + 1; i-- > 0;) {
      const Node& node = tape.node(i);
      auto it = grads.find(node.output.id());
      if (it == grads.end()) continue;
      Tensor g = it->second;
      if (!keep.count(node.output.id())) grads.erase(it);
      std::vector<Tensor> input_grads = tape.run_backward(i, g);
      const Node& same = tape.node(i);
      for (std::size_t k = 0; k < same.inputs.size(); ++k) {
        const Tensor& in = same.inputs[k];
        if (!in.requires_grad() || k >= input_grads.size() || !input_grads[k].defined()) continue;
        auto slot = grads.find(in.id());
        if (slot == grads.end()) {
          grads.emplace(in.id(), input_grads[k]);
        } else {
          slot->second = slot->second + input_grads[k];
        }
      }
    }
  }

  GradMap out;
  for (const auto& w : wrt) {
    auto it = grads.find(w.id());
    out.insert(w, it == grads.end() ? Tensor::zeros(w.shape()) : it->second);
  }
  return out;
}

inline GradMap backward(const Tensor& loss, std::initializer_list<Tensor> wrt,
                        bool create_graph = false) {
  std::vector<Tensor> v(wrt);
  return backward(loss, std::span<const Tensor>(v), create_graph);
}

}  // namespace mkd
