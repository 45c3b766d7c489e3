// SPDX-License-Identifier: Apache-2.0
#include "dnls/tensor/tape.hpp"

#include <algorithm>

#include "dnls/error.hpp"

namespace dnls {

const BatchedArray& Var::value() const {
  if (tape_ == nullptr) throw Error("Var: uninitialized handle");
  return tape_->value(id_);
}

Var Tape::leaf(std::string name, BatchedArray value, bool differentiable) {
  if (!name.empty() && leaf_index_.count(name)) throw Error("Tape: duplicate leaf name '" + name + "'");
  Node n;
  n.op = "leaf";
  n.name = name;
  n.is_leaf = true;
  n.differentiable = differentiable;
  n.value = std::make_shared<const BatchedArray>(std::move(value));
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(std::move(n));
  if (!name.empty()) leaf_index_[name] = id;
  return Var(this, id);
}

Var Tape::constant(BatchedArray value) { return leaf("", std::move(value), false); }

Var Tape::record(const char* op, const std::vector<Var>& inputs, ForwardFn forward, VjpFn vjp) {
  Inputs in;
  in.reserve(inputs.size());
  for (const auto& v : inputs) {
    if (v.tape() != this) throw Error(std::string(op) + ": operand recorded on a different tape");
    in.push_back(&value(v.id()));
  }
  BatchedArray out = forward(in);
  return record_value(op, inputs, std::move(out), std::move(forward), std::move(vjp));
}

Var Tape::record_value(const char* op, const std::vector<Var>& inputs, BatchedArray value, ForwardFn forward,
                       VjpFn vjp) {
  Node n;
  n.op = op;
  n.inputs.reserve(inputs.size());
  for (const auto& v : inputs) {
    if (v.tape() != this) throw Error(std::string(op) + ": operand recorded on a different tape");
    n.inputs.push_back(v.id());
  }
  n.value = std::make_shared<const BatchedArray>(std::move(value));
  n.forward = std::move(forward);
  n.vjp = std::move(vjp);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

std::size_t Tape::op_count() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return !n.is_leaf; }));
}

const BatchedArray& Tape::value(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw Error("Tape: node id " + std::to_string(id) + " out of range");
  }
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.released) throw Error("Tape: node " + std::to_string(id) + " (" + n.op + ") was released");
  return *n.value;
}

std::optional<Var> Tape::find_leaf(const std::string& name) {
  auto it = leaf_index_.find(name);
  if (it == leaf_index_.end()) return std::nullopt;
  return Var(this, it->second);
}

Inputs Tape::input_values(const Node& n) const {
  Inputs in;
  in.reserve(n.inputs.size());
  for (int i : n.inputs) in.push_back(&value(i));
  return in;
}

BackwardResult Tape::backward(const std::vector<std::pair<Var, BatchedArray>>& seeds, std::size_t stop) const {
  if (nodes_.empty()) throw Error("backward: empty tape");
  std::vector<std::optional<BatchedArray>> grads(nodes_.size());
  int top = -1;
  for (const auto& [v, seed] : seeds) {
    if (v.tape() != this) throw Error("backward: seed variable belongs to a different tape");
    const BatchedArray& val = value(v.id());
    if (seed.shape() != val.shape()) {
      throw ShapeError("backward: seed shape " + seed.shape_string() + " does not match output " +
                       val.shape_string());
    }
    auto& g = grads[static_cast<std::size_t>(v.id())];
    g = g ? add(*g, seed) : seed;
    top = std::max(top, v.id());
  }

  BackwardResult res;
  res.min_node_visited = nodes_.size();
  for (int id = top; id >= 0; --id) {
    auto& g = grads[static_cast<std::size_t>(id)];
    if (!g) continue;
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.is_leaf) {
      if (n.differentiable) {
        if (!n.name.empty()) res.leaf_grads[n.name] = *g;
        res.by_id[id] = *g;
      }
      g.reset();
      continue;
    }
    if (static_cast<std::size_t>(id) < stop) {
      g.reset();
      continue;
    }
    ++res.nodes_visited;
    res.min_node_visited = std::min(res.min_node_visited, static_cast<std::size_t>(id));
    const Inputs in = input_values(n);
    std::vector<BatchedArray> gin = n.vjp(*g, in, *n.value);
    g.reset();
    for (std::size_t k = 0; k < n.inputs.size() && k < gin.size(); ++k) {
      if (gin[k].empty()) continue;
      const int src = n.inputs[k];
      const Node& sn = nodes_[static_cast<std::size_t>(src)];
      if (sn.is_leaf && !sn.differentiable) continue;
      auto& acc = grads[static_cast<std::size_t>(src)];
      acc = acc ? add(*acc, gin[k]) : std::move(gin[k]);
    }
  }
  return res;
}

std::vector<BatchedArray> Tape::replay() const {
  std::vector<BatchedArray> vals(nodes_.size());
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (n.released) throw Error("replay: node " + std::to_string(id) + " was released");
    if (n.is_leaf) {
      vals[id] = *n.value;
      continue;
    }
    Inputs in;
    in.reserve(n.inputs.size());
    for (int i : n.inputs) in.push_back(&vals[static_cast<std::size_t>(i)]);
    vals[id] = n.forward(in);
  }
  return vals;
}

void Tape::release_before(std::size_t marker) {
  marker = std::min(marker, nodes_.size());
  std::vector<char> needed(marker, 0);
  for (std::size_t id = marker; id < nodes_.size(); ++id) {
    for (int i : nodes_[id].inputs) {
      if (static_cast<std::size_t>(i) < marker) needed[static_cast<std::size_t>(i)] = 1;
    }
  }
  for (std::size_t id = release_scan_from_; id < marker; ++id) {
    Node& n = nodes_[id];
    if (n.is_leaf || n.released || needed[id]) continue;
    n.released = true;
    n.value.reset();
    n.forward = nullptr;
    n.vjp = nullptr;
    ++released_;
  }
  // Everything before the first still-live op node is settled.
  while (release_scan_from_ < marker &&
         (nodes_[release_scan_from_].released || nodes_[release_scan_from_].is_leaf)) {
    ++release_scan_from_;
  }
}

// ---------------------------------------------------------------------------
// Primitive ops on Var

namespace {

Tape* tape_of(const char* op, const Var& a) {
  if (!a.valid()) throw Error(std::string(op) + ": uninitialized Var");
  return a.tape();
}

Tape* tape_of(const char* op, const Var& a, const Var& b) {
  if (!a.valid() || !b.valid()) throw Error(std::string(op) + ": uninitialized Var");
  if (a.tape() != b.tape()) throw Error(std::string(op) + ": operands on different tapes");
  return a.tape();
}

using G = std::vector<BatchedArray>;

}  // namespace

Var add(const Var& a, const Var& b) {
  return tape_of("add", a, b)->record(
      "add", {a, b}, [](const Inputs& in) { return add(*in[0], *in[1]); },
      [](const BatchedArray& g, const Inputs& in, const BatchedArray&) {
        return G{reduce_to_batch(g, in[0]->batch()), reduce_to_batch(g, in[1]->batch())};
      });
}

Var sub(const Var& a, const Var& b) {
  return tape_of("sub", a, b)->record(
      "sub", {a, b}, [](const Inputs& in) { return sub(*in[0], *in[1]); },
      [](const BatchedArray& g, const Inputs& in, const BatchedArray&) {
        return G{reduce_to_batch(g, in[0]->batch()), reduce_to_batch(neg(g), in[1]->batch())};
      });
}

Var mul(const Var& a, const Var& b) {
  return tape_of("mul", a, b)->record(
      "mul", {a, b}, [](const Inputs& in) { return mul(*in[0], *in[1]); },
      [](const BatchedArray& g, const Inputs& in, const BatchedArray&) {
        return G{reduce_to_batch(mul(g, *in[1]), in[0]->batch()), reduce_to_batch(mul(g, *in[0]), in[1]->batch())};
      });
}

Var div(const Var& a, const Var& b) {
  return tape_of("div", a, b)->record(
      "div", {a, b}, [](const Inputs& in) { return div(*in[0], *in[1]); },
      [](const BatchedArray& g, const Inputs& in, const BatchedArray& out) {
        BatchedArray ga = div(g, *in[1]);
        BatchedArray gb = neg(mul(ga, out));
        return G{reduce_to_batch(ga, in[0]->batch()), reduce_to_batch(gb, in[1]->batch())};
      });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var exp(const Var& a) {
  return tape_of("exp", a)->record(
      "exp", {a}, [](const Inputs& in) { return exp(*in[0]); },
      [](const BatchedArray& g, const Inputs&, const BatchedArray& out) { return G{mul(g, out)}; });
}

Var log(const Var& a) {
  return tape_of("log", a)->record(
      "log", {a}, [](const Inputs& in) { return log(*in[0]); },
      [](const BatchedArray& g, const Inputs& in, const BatchedArray&) { return G{div(g, *in[0])}; });
}

Var sin(const Var& a) {
  return tape_of("sin", a)->record(
      "sin", {a}, [](const Inputs& in) { return sin(*in[0]); },
      [](const BatchedArray& g, const Inputs& in, const BatchedArray&) { return G{mul(g, cos(*in[0]))}; });
}

Var cos(const Var& a) {
  return tape_of("cos", a)->record(
      "cos", {a}, [](const Inputs& in) { return cos(*in[0]); },
      [](const BatchedArray& g, const Inputs& in, const BatchedArray&) { return G{neg(mul(g, sin(*in[0])))}; });
}

Var sqrt(const Var& a) {
  return tape_of("sqrt", a)->record(
      "sqrt", {a}, [](const Inputs& in) { return sqrt(*in[0]); },
      [](const BatchedArray& g, const Inputs&, const BatchedArray& out) { return G{scale(div(g, out), 0.5)}; });
}

Var atan2(const Var& y, const Var& x) {
  return tape_of("atan2", y, x)->record(
      "atan2", {y, x}, [](const Inputs& in) { return atan2(*in[0], *in[1]); },
      [](const BatchedArray& g, const Inputs& in, const BatchedArray&) {
        const BatchedArray& yv = *in[0];
        const BatchedArray& xv = *in[1];
        BatchedArray r2 = add(mul(xv, xv), mul(yv, yv));
        BatchedArray gy = div(mul(g, xv), r2);
        BatchedArray gx = neg(div(mul(g, yv), r2));
        return G{reduce_to_batch(gy, yv.batch()), reduce_to_batch(gx, xv.batch())};
      });
}

Var scale(const Var& a, double s) {
  return tape_of("scale", a)->record(
      "scale", {a}, [s](const Inputs& in) { return scale(*in[0], s); },
      [s](const BatchedArray& g, const Inputs&, const BatchedArray&) { return G{scale(g, s)}; });
}

Var add_scalar(const Var& a, double s) {
  return tape_of("add_scalar", a)->record(
      "add_scalar", {a}, [s](const Inputs& in) { return add_scalar(*in[0], s); },
      [](const BatchedArray& g, const Inputs&, const BatchedArray&) { return G{g}; });
}

Var scale(const Var& a, const Var& s) {
  return tape_of("scale", a, s)->record(
      "scale_rows", {a, s}, [](const Inputs& in) { return scale(*in[0], *in[1]); },
      [](const BatchedArray& g, const Inputs& in, const BatchedArray&) {
        BatchedArray ga = scale(g, *in[1]);
        BatchedArray gs = sum(mul(g, in[0]->broadcast_to(g.batch())));
        return G{reduce_to_batch(ga, in[0]->batch()), reduce_to_batch(gs, in[1]->batch())};
      });
}

Var matmul(const Var& a, const Var& b) {
  return tape_of("matmul", a, b)->record(
      "matmul", {a, b}, [](const Inputs& in) { return matmul(*in[0], *in[1]); },
      [](const BatchedArray& g, const Inputs& in, const BatchedArray&) {
        BatchedArray ga = matmul(g, transpose(*in[1]));
        BatchedArray gb = matmul(transpose(*in[0]), g);
        return G{reduce_to_batch(ga, in[0]->batch()), reduce_to_batch(gb, in[1]->batch())};
      });
}

Var transpose(const Var& a) {
  return tape_of("transpose", a)->record(
      "transpose", {a}, [](const Inputs& in) { return transpose(*in[0]); },
      [](const BatchedArray& g, const Inputs&, const BatchedArray&) { return G{transpose(g)}; });
}

Var sum(const Var& a) {
  return tape_of("sum", a)->record(
      "sum", {a}, [](const Inputs& in) { return sum(*in[0]); },
      [](const BatchedArray& g, const Inputs& in, const BatchedArray&) {
        return G{scale(BatchedArray(in[0]->shape(), 1.0), g)};
      });
}

Var squared_norm(const Var& a) {
  return tape_of("squared_norm", a)->record(
      "squared_norm", {a}, [](const Inputs& in) { return squared_norm(*in[0]); },
      [](const BatchedArray& g, const Inputs& in, const BatchedArray&) {
        return G{scale(scale(*in[0], g), 2.0)};
      });
}

Var slice(const Var& a, int axis, std::int64_t start, std::int64_t len) {
  return tape_of("slice", a)->record(
      "slice", {a}, [=](const Inputs& in) { return slice(*in[0], axis, start, len); },
      [=](const BatchedArray& g, const Inputs& in, const BatchedArray&) {
        // Scatter g back into a zero array shaped like the input.
        const BatchedArray& src = *in[0];
        const std::int64_t d = src.dim(axis);
        std::vector<BatchedArray> parts;
        Shape s = g.shape();
        if (start > 0) {
          s[static_cast<std::size_t>(axis)] = start;
          parts.emplace_back(s);
        }
        parts.push_back(g);
        if (start + len < d) {
          s[static_cast<std::size_t>(axis)] = d - start - len;
          parts.emplace_back(s);
        }
        return G{parts.size() == 1 ? g : concat(parts, axis)};
      });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Tape* t = tape_of("concat", parts[0]);
  for (const auto& p : parts) tape_of("concat", parts[0], p);
  return t->record(
      "concat", parts,
      [axis](const Inputs& in) {
        std::vector<BatchedArray> v;
        v.reserve(in.size());
        for (const auto* p : in) v.push_back(*p);
        return concat(v, axis);
      },
      [axis](const BatchedArray& g, const Inputs& in, const BatchedArray&) {
        G out;
        out.reserve(in.size());
        std::int64_t offset = 0;
        for (const auto* p : in) {
          const std::int64_t d = p->dim(axis);
          out.push_back(reduce_to_batch(slice(g, axis, offset, d), p->batch()));
          offset += d;
        }
        return out;
      });
}

Var reshape(const Var& a, const Shape& item_shape) {
  return tape_of("reshape", a)->record(
      "reshape", {a}, [item_shape](const Inputs& in) { return reshape(*in[0], item_shape); },
      [](const BatchedArray& g, const Inputs& in, const BatchedArray&) {
        return G{reshape(g, in[0]->item_shape())};
      });
}

Var concat_batch(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_batch: no operands");
  Tape* t = tape_of("concat_batch", parts[0]);
  for (const auto& p : parts) tape_of("concat_batch", parts[0], p);
  return t->record(
      "concat_batch", parts,
      [](const Inputs& in) {
        std::vector<BatchedArray> v;
        v.reserve(in.size());
        for (const auto* p : in) v.push_back(*p);
        return concat_batch(v);
      },
      [](const BatchedArray& g, const Inputs& in, const BatchedArray&) {
        G out;
        out.reserve(in.size());
        std::int64_t row = 0;
        for (const auto* p : in) {
          out.push_back(slice_rows(g, row, p->batch()));
          row += p->batch();
        }
        return out;
      });
}

Var slice_rows(const Var& a, std::int64_t start, std::int64_t count) {
  return tape_of("slice_rows", a)->record(
      "slice_rows", {a}, [=](const Inputs& in) { return slice_rows(*in[0], start, count); },
      [=](const BatchedArray& g, const Inputs& in, const BatchedArray&) {
        BatchedArray full(in[0]->shape());
        std::copy(g.data(), g.data() + g.numel(), full.item(start));
        return G{full};
      });
}

Var fold_batch(const Var& a, std::int64_t groups) {
  return tape_of("fold_batch", a)->record(
      "fold_batch", {a}, [groups](const Inputs& in) { return fold_batch(*in[0], groups); },
      [groups](const BatchedArray& g, const Inputs&, const BatchedArray&) {
        return G{concat_batch(std::vector<BatchedArray>(static_cast<std::size_t>(groups), g))};
      });
}

Var select(const Mask& mask, const Var& a, const Var& b) {
  return tape_of("select", a, b)->record(
      "select", {a, b}, [mask](const Inputs& in) { return select(mask, *in[0], *in[1]); },
      [mask](const BatchedArray& g, const Inputs& in, const BatchedArray&) {
        Mask inv(mask.size());
        for (std::size_t i = 0; i < mask.size(); ++i) inv[i] = mask[i] ? 0 : 1;
        BatchedArray zero(g.shape());
        return G{reduce_to_batch(select(mask, g, zero), in[0]->batch()),
                 reduce_to_batch(select(inv, g, zero), in[1]->batch())};
      });
}

// ---------------------------------------------------------------------------

const Var& LeafMap::operator[](const std::string& name) const {
  auto it = leaves_.find(name);
  if (it == leaves_.end()) throw Error("unknown leaf '" + name + "'");
  return it->second;
}

Recorded evaluate_recorded(const std::function<Var(const LeafMap&)>& expr,
                           const std::map<std::string, BatchedArray>& leaves,
                           const std::vector<std::string>& constants) {
  Recorded rec;
  rec.tape = std::make_unique<Tape>();
  std::map<std::string, Var> vars;
  for (const auto& [name, val] : leaves) {
    const bool is_const = std::find(constants.begin(), constants.end(), name) != constants.end();
    vars.emplace(name, rec.tape->leaf(name, val, !is_const));
  }
  rec.output = expr(LeafMap(std::move(vars)));
  rec.value = rec.output.value();
  return rec;
}

std::map<std::string, BatchedArray> backward_accumulate(const Recorded& rec, const BatchedArray& seed) {
  if (!rec.tape || rec.tape->size() == 0) throw Error("backward_accumulate: empty tape");
  return rec.tape->backward({{rec.output, seed}}).leaf_grads;
}

}  // namespace dnls
