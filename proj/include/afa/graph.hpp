#pragma once

#include <functional>
#include <initializer_list>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "afa/tensor.hpp"

namespace afa {

/// Gradient buffers keyed by tensor identity.
template <typename T>
class GradMap {
 public:
  /// Accumulates a contribution into the gradient buffer for `id`.
  void add(std::int64_t id, const Tensor<T>& g) {
    auto it = grads_.find(id);
    if (it == grads_.end()) {
      grads_.emplace(id, g);
      return;
    }
    Tensor<T>& acc = it->second;
    if (acc.shape != g.shape) {
      throw ShapeError("gradient shape mismatch for tensor " + std::to_string(id) + ": " +
                       to_string(acc.shape) + " vs " + to_string(g.shape));
    }
    for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += g.data[i];
  }

  void set(std::int64_t id, Tensor<T> g) { grads_[id] = std::move(g); }

  bool contains(std::int64_t id) const { return grads_.count(id) != 0; }

  const Tensor<T>* find(std::int64_t id) const {
    auto it = grads_.find(id);
    return it == grads_.end() ? nullptr : &it->second;
  }

  const Tensor<T>& at(std::int64_t id) const {
    auto it = grads_.find(id);
    if (it == grads_.end()) {
      throw ValueError("no gradient recorded for tensor " + std::to_string(id));
    }
    return it->second;
  }

  const Tensor<T>& at(const Tensor<T>& t) const { return at(t.id); }

  /// Gradient for `t`, or zeros when the tensor never reached the loss.
  Tensor<T> get_or_zero(const Tensor<T>& t) const {
    const Tensor<T>* p = find(t.id);
    if (p != nullptr) return *p;
    return Tensor<T>(t.shape[0], t.shape[1], t.shape[2], t.shape[3], T(0));
  }

  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<std::int64_t, Tensor<T>> grads_;
};

/// Reverse-mode tape. Single-writer: recording and backward must not be
/// interleaved from multiple threads. Distinct graphs are independent.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(const Tensor<T>& grad_out, GradMap<T>& grads)>;

  /// Turns recording off for inference-only passes. Ops still compute
  /// forward values; nothing is saved for backward.
  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }

  /// Registers a node. Inputs are inspected for gradient leaves; the output
  /// tensor should already carry requires_grad propagated by the op.
  void record(const char* op, std::initializer_list<const Tensor<T>*> inputs,
              const Tensor<T>& output, BackwardFn backward) {
    record_many(op, std::vector<const Tensor<T>*>(inputs), output, std::move(backward));
  }

  void record_many(const char* op, const std::vector<const Tensor<T>*>& inputs,
                   const Tensor<T>& output, BackwardFn backward) {
    if (!recording_ || !output.requires_grad) return;
    Node node;
    node.op = op;
    for (const Tensor<T>* in : inputs) {
      node.input_ids.push_back(in->id);
      if (in->requires_grad && produced_.count(in->id) == 0) {
        leaves_.emplace(in->id, in->shape);
      }
    }
    node.output_id = output.id;
    node.backward = std::move(backward);
    produced_.insert(output.id);
    nodes_.push_back(std::move(node));
  }

  /// Reverse-topological gradient accumulation from a scalar loss.
  /// Gradients of registered-but-unreached leaves are zero-filled.
  GradMap<T> backward(const Tensor<T>& loss) const {
    if (!loss.is_scalar()) {
      throw ShapeError("backward: loss must have shape (1,1,1,1), got " + to_string(loss.shape));
    }
    GradMap<T> grads;
    grads.set(loss.id, Tensor<T>::ones(1, 1, 1, 1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      const Tensor<T>* g = grads.find(it->output_id);
      if (g == nullptr) continue;  // branch not reachable from the loss
      // Copy: backward calls may rehash the map and invalidate g.
      Tensor<T> gout = *g;
      it->backward(gout, grads);
    }
    for (const auto& [id, shape] : leaves_) {
      if (!grads.contains(id)) {
        grads.set(id, Tensor<T>(shape[0], shape[1], shape[2], shape[3], T(0)));
      }
    }
    return grads;
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    const char* op = "";
    std::vector<std::int64_t> input_ids;
    std::int64_t output_id = 0;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::unordered_map<std::int64_t, Shape> leaves_;
  std::unordered_set<std::int64_t> produced_;
  bool recording_ = true;
};

}  // namespace afa
