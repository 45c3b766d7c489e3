// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dnls/tensor/batched_array.hpp"
#include "dnls/tensor/ops.hpp"

namespace dnls {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
// lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const noexcept { return tape_; }
  int id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  const BatchedArray& value() const;
  const Shape& shape() const { return value().shape(); }
  std::int64_t batch() const { return value().batch(); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

using Inputs = std::vector<const BatchedArray*>;
// Recomputes a node's output from its input values (used for replay).
using ForwardFn = std::function<BatchedArray(const Inputs& in)>;
// Returns one gradient per input; an empty array means "no contribution".
using VjpFn = std::function<std::vector<BatchedArray>(const BatchedArray& grad_out, const Inputs& in,
                                                      const BatchedArray& out)>;

struct BackwardResult {
  // Gradients of named differentiable leaves that the seeds reach.
  std::map<std::string, BatchedArray> leaf_grads;
  // Gradients of every reached leaf, keyed by node id.
  std::map<int, BatchedArray> by_id;
  std::size_t nodes_visited = 0;
  // Smallest op-node id whose VJP ran, or the tape size if none did.
  std::size_t min_node_visited = 0;

  const BatchedArray* grad(const std::string& name) const {
    auto it = leaf_grads.find(name);
    return it == leaf_grads.end() ? nullptr : &it->second;
  }
  const BatchedArray* grad(const Var& v) const {
    auto it = by_id.find(v.id());
    return it == by_id.end() ? nullptr : &it->second;
  }
};

// Append-only record of primitive operations. Nodes only reference earlier
// nodes, so the node list is already a topological order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(std::string name, BatchedArray value, bool differentiable = true);
  Var constant(BatchedArray value);

  // Records an op whose value is computed by `forward` from the inputs.
  Var record(const char* op, const std::vector<Var>& inputs, ForwardFn forward, VjpFn vjp);
  // Same, with a value the caller already computed (must equal forward(in)).
  Var record_value(const char* op, const std::vector<Var>& inputs, BatchedArray value, ForwardFn forward,
                   VjpFn vjp);

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t op_count() const noexcept;
  // Position marker; nodes recorded afterwards have ids >= the marker.
  std::size_t mark() const noexcept { return nodes_.size(); }

  const BatchedArray& value(int id) const;
  bool is_leaf(int id) const { return nodes_.at(static_cast<std::size_t>(id)).is_leaf; }
  const std::string& op_name(int id) const { return nodes_.at(static_cast<std::size_t>(id)).op; }
  std::optional<Var> find_leaf(const std::string& name);

  // Reverse accumulation from the seeds. Op nodes with id < `stop` are never
  // expanded: values entering the window are treated as constants, while
  // leaves recorded before the window still receive gradient.
  BackwardResult backward(const std::vector<std::pair<Var, BatchedArray>>& seeds, std::size_t stop = 0) const;

  // Re-executes every op node from the leaf values; returns all node values.
  std::vector<BatchedArray> replay() const;

  // Frees op nodes older than `marker` that no node at or after the marker
  // reads. Reading a released node later throws.
  void release_before(std::size_t marker);
  std::size_t released_count() const noexcept { return released_; }

 private:
  struct Node {
    std::string op;
    std::string name;
    bool is_leaf = false;
    bool differentiable = false;
    bool released = false;
    std::vector<int> inputs;
    std::shared_ptr<const BatchedArray> value;
    ForwardFn forward;
    VjpFn vjp;
  };

  Inputs input_values(const Node& n) const;

  std::vector<Node> nodes_;
  std::map<std::string, int> leaf_index_;
  std::size_t released_ = 0;
  std::size_t release_scan_from_ = 0;
};

inline const BatchedArray& value(const Var& v) { return v.value(); }
inline Var constant_like(const Var& proto, BatchedArray c) { return proto.tape()->constant(std::move(c)); }

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sin(const Var& a);
Var cos(const Var& a);
Var sqrt(const Var& a);
Var atan2(const Var& y, const Var& x);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var scale(const Var& a, const Var& s);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var sum(const Var& a);
Var squared_norm(const Var& a);
Var slice(const Var& a, int axis, std::int64_t start, std::int64_t len);
Var concat(const std::vector<Var>& parts, int axis);
Var reshape(const Var& a, const Shape& item_shape);
Var concat_batch(const std::vector<Var>& parts);
Var slice_rows(const Var& a, std::int64_t start, std::int64_t count);
Var fold_batch(const Var& a, std::int64_t groups);
Var select(const Mask& mask, const Var& a, const Var& b);

// Leaves addressed by name inside a recorded expression.
class LeafMap {
 public:
  explicit LeafMap(std::map<std::string, Var> leaves) : leaves_(std::move(leaves)) {}
  const Var& operator[](const std::string& name) const;

 private:
  std::map<std::string, Var> leaves_;
};

struct Recorded {
  std::unique_ptr<Tape> tape;
  Var output;
  BatchedArray value;
};

// Records `expr` over fresh leaves. Names listed in `constants` become
// non-differentiable leaves.
Recorded evaluate_recorded(const std::function<Var(const LeafMap&)>& expr,
                           const std::map<std::string, BatchedArray>& leaves,
                           const std::vector<std::string>& constants = {});

// Gradients of the recorded output contracted with `seed`, per leaf name.
std::map<std::string, BatchedArray> backward_accumulate(const Recorded& rec, const BatchedArray& seed);

}  // namespace dnls
