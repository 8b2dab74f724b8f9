#pragma once

// Dense float64 tensors and the reverse-mode differentiation tape.
//
// A Tensor is a shared handle: copies alias the same storage and the same
// graph identity, which is what parameter lookup in a GradMap relies on.
// Operations on tensors that require a gradient append a Node to the active
// Tape. Backward rules are written with the same differentiable operations,
// so running backward with create_graph=true records the backward pass
// itself and its results can be differentiated again.

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mkd/errors.hpp"

namespace mkd {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

class Tape;
class Tensor;

namespace detail {

inline constexpr std::size_t kNoNode = std::numeric_limits<std::size_t>::max();

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  // Identity of the tape that recorded this tensor; 0 when not recorded.
  std::uint64_t tape_id = 0;
  std::size_t node = kNoNode;
};

inline std::uint64_t next_tape_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace detail

class Tensor {
 public:
  /// Null handle. Most operations reject it; use defined() to test.
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data)
      : impl_(std::make_shared<detail::TensorImpl>()) {
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("tensor: shape " + shape_str(shape) + " needs " +
                           std::to_string(shape_numel(shape)) + " values, got " +
                           std::to_string(data.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
  }

  static Tensor full(Shape shape, double value) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }
  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
  static Tensor scalar(double value) { return Tensor({}, {value}); }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }
  static Tensor vector(std::span<const double> values) {
    return Tensor({values.size()}, std::vector<double>(values.begin(), values.end()));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("matrix: ragged initializer rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  bool defined() const { return static_cast<bool>(impl_); }

  const Shape& shape() const { return impl().shape; }
  std::size_t dim() const { return impl().shape.size(); }
  std::size_t size(std::size_t axis) const { return impl().shape.at(axis); }
  std::size_t numel() const { return impl().data.size(); }

  std::span<const double> data() const { return impl().data; }
  /// Direct write access. Only for leaves that are not referenced by a live tape.
  std::span<double> mutable_data() { return impl().data; }
  const std::vector<double>& values() const { return impl().data; }

  double item() const {
    if (numel() != 1) {
      throw ContractError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    }
    return impl().data[0];
  }
  double operator[](std::size_t i) const { return impl().data.at(i); }
  double at(std::size_t row, std::size_t col) const {
    return impl().data.at(row * impl().shape.at(1) + col);
  }

  bool requires_grad() const { return defined() && impl_->requires_grad; }
  Tensor& requires_grad_(bool on = true) {
    impl().requires_grad = on;
    return *this;
  }

  /// Fresh leaf holding a copy of the values, with no gradient tracking.
  Tensor detach() const { return Tensor(shape(), impl().data); }

  /// Deep copy preserving the requires_grad flag but not the graph link.
  Tensor clone_leaf() const {
    Tensor t = detach();
    t.impl_->requires_grad = requires_grad();
    return t;
  }

  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }
  const detail::TensorImpl* id() const { return impl_.get(); }

 private:
  friend class Tape;

  detail::TensorImpl& impl() const {
    if (!impl_) throw ContractError("use of an undefined tensor");
    return *impl_;
  }

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Maps a gradient w.r.t. the tensor flowing out of a node to the gradients
/// w.r.t. each of its inputs. Entries for inputs without gradient may be null.
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_output)>;

struct Node {
  std::string op;
  std::vector<Tensor> inputs;
  Tensor output;
  BackwardFn backward;
  std::uint32_t generation = 0;
};

/// Ordered record of operations. Nodes are appended as operations execute,
/// so index order is a topological order of the graph.
class Tape {
 public:
  Tape() : id_(detail::next_tape_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_.at(i); }
  std::uint32_t generation() const { return generation_; }
  void begin_generation() { ++generation_; }

  /// Drops every node. Tensors recorded earlier become plain leaves.
  void clear() {
    nodes_.clear();
    generation_ = 0;
    id_ = detail::next_tape_id();
  }

  bool owns(const Tensor& t) const {
    return t.defined() && t.impl_->tape_id == id_ && t.impl_->node < nodes_.size();
  }
  std::size_t node_index(const Tensor& t) const { return t.impl_->node; }

  void record(std::string_view op, Tensor& output, std::vector<Tensor> inputs,
              BackwardFn backward) {
    output.impl_->requires_grad = true;
    output.impl_->tape_id = id_;
    output.impl_->node = nodes_.size();
    nodes_.push_back(
        Node{std::string(op), std::move(inputs), output, std::move(backward), generation_});
  }

  /// Runs `fn` on the node at `index`; the deque keeps references stable
  /// while the rule appends new nodes.
  std::vector<Tensor> run_backward(std::size_t index, const Tensor& grad) {
    return nodes_[index].backward(grad);
  }

 private:
  std::deque<Node> nodes_;
  std::uint32_t generation_ = 0;
  std::uint64_t id_;
};

namespace detail {

inline Tape*& active_tape_slot() {
  thread_local Tape* slot = nullptr;
  return slot;
}

inline Tape& fallback_tape() {
  thread_local Tape tape;
  return tape;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline Tape& active_tape() {
  Tape* t = detail::active_tape_slot();
  return t ? *t : detail::fallback_tape();
}

inline bool grad_enabled() { return detail::grad_mode(); }

/// Installs a fresh tape for the lifetime of the scope and clears it on exit.
class TapeScope {
 public:
  TapeScope() : previous_(detail::active_tape_slot()) { detail::active_tape_slot() = &tape_; }
  ~TapeScope() {
    detail::active_tape_slot() = previous_;
    tape_.clear();
  }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

  Tape& tape() { return tape_; }

 private:
  Tape tape_;
  Tape* previous_;
};

/// Disables recording on this thread for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Wraps a freshly computed value as the result of `op`, recording a node
/// when gradient mode is on and some input requires a gradient.
inline Tensor make_result(std::string_view op, Shape shape, std::vector<double> data,
                          std::vector<Tensor> inputs, BackwardFn backward) {
  Tensor out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool track = false;
  for (const auto& in : inputs) track = track || in.requires_grad();
  if (track) active_tape().record(op, out, std::move(inputs), std::move(backward));
  return out;
}

/// Same as make_result, for rules that are written in terms of the output
/// (exp, sigmoid, softmax). `build` receives the output handle.
template <class Build>
Tensor make_result_with_output(std::string_view op, Shape shape, std::vector<double> data,
                               std::vector<Tensor> inputs, Build build) {
  Tensor out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool track = false;
  for (const auto& in : inputs) track = track || in.requires_grad();
  if (track) active_tape().record(op, out, std::move(inputs), BackwardFn(build(out)));
  return out;
}

/// Gradients keyed by parameter identity, in the order the parameters were given.
class GradMap {
 public:
  void insert(Tensor key, Tensor grad) {
    if (key.shape() != grad.shape()) {
      throw DimensionError("GradMap: gradient shape " + shape_str(grad.shape()) +
                           " differs from parameter shape " + shape_str(key.shape()));
    }
    index_[key.id()] = keys_.size();
    keys_.push_back(std::move(key));
    grads_.push_back(std::move(grad));
  }

  bool contains(const Tensor& key) const { return index_.count(key.id()) != 0; }

  const Tensor& operator[](const Tensor& key) const {
    auto it = index_.find(key.id());
    if (it == index_.end()) throw ContractError("GradMap: no gradient for parameter");
    return grads_[it->second];
  }

  std::size_t size() const { return keys_.size(); }
  const std::vector<Tensor>& keys() const { return keys_; }
  const std::vector<Tensor>& grads() const { return grads_; }

  double norm() const {
    double s = 0.0;
    for (const auto& g : grads_)
      for (double v : g.data()) s += v * v;
    return std::sqrt(s);
  }

 private:
  std::vector<Tensor> keys_;
  std::vector<Tensor> grads_;
  std::unordered_map<const detail::TensorImpl*, std::size_t> index_;
};

}  // namespace mkd
