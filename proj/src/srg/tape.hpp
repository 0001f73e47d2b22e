#pragma once

#include <functional>
#include <vector>

#include "srg/rng.hpp"
#include "srg/tensor.hpp"

namespace srg {

// A named, checkpoint-addressable weight. grad accumulates across backward
// calls until zero_grad.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  bool weight_decay = true;  // off for embeddings, norms, biases

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) { grad = Tensor(value.shape); }
  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), real(0)); }
};

class Tape;

// Handle into a tape node. Cheap to copy; valid until the tape is cleared.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& val() const;
  int rows() const { return val().rows(); }
  int cols() const { return val().cols(); }
};

// Reverse-mode tape. Nodes are recorded in construction order, which is a
// topological order for a dynamic graph, so backward is a single reverse
// sweep that touches each edge exactly once.
class Tape {
 public:
  struct Node {
    const char* op = "";
    std::vector<int> inputs;
    Tensor value;                      // owned output (unused for leaf views)
    const Tensor* extern_value = nullptr;
    Tensor grad;                       // allocated lazily during backward
    bool requires_grad = false;
    Parameter* param = nullptr;        // leaf hook
    std::function<void(Tape&, int)> back;

    const Tensor& val() const { return extern_value ? *extern_value : value; }
  };

  Tape() { nodes_.reserve(1024); }

  // Leaves.
  Var leaf(Parameter& p);
  Var constant(Tensor t);
  Var constant_view(const Tensor* t);

  // Elementwise / shape.
  Var add(Var a, Var b);
  Var add_rowvec(Var a, Var row);  // m x n  +  row of n
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, real c);
  Var transpose(Var a);
  Var reshape(Var a, std::vector<int> shape);
  Var concat(const std::vector<Var>& xs, int axis);
  Var slice_rows(Var a, int r0, int r1);  // [r0, r1)
  Var relu(Var a);
  Var gelu(Var a);
  Var layer_norm(Var x, Var gain, Var bias);  // row-wise, eps 1e-5
  Var embedding(Var table, std::vector<int> ids);
  Var dropout(Var a, real rate, Rng& rng);  // mask recorded on the tape

  // Reductions / losses.
  Var sum_all(Var a);
  Var mean_all(Var a);
  Var softmax_rows(Var a);
  Var logsigmoid(Var a);
  Var matmul(Var a, Var b);
  Var cross_entropy(Var logits, std::vector<int> targets);
  Var mse(Var a, Var b);
  Var colmax(Var a);

  // omega_ij = sum_k A[i,k] * B[i*N+j,k]  for A: N x k, B: N*N x k.
  // Contracts per-query feature rows against a block of per-pair rows; used
  // for the spatial relevance scores and the contextual fusion mode.
  Var pair_scores(Var a, Var b);

  void backward(Var loss);

  const Tensor& val(Var v) const { return nodes_[size_t(v.id)].val(); }
  Tensor& grad(Var v) { return ensure_grad(v.id); }
  const Node& node(int id) const { return nodes_[size_t(id)]; }
  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  friend struct Var;
  std::vector<Node> nodes_;

  int push(Node n) {
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
  }
  Var wrap(int id) { return Var{this, id}; }
  Tensor& ensure_grad(int id);
  void add_grad(int id, const Tensor& g);
  bool any_requires(const std::vector<int>& ids) const;
  Var unary(const char* op, Var a, Tensor value, std::function<void(Tape&, int)> back);
};

inline const Tensor& Var::val() const { return tape->val(*this); }

}  // namespace srg
