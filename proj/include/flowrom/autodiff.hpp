#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "flowrom/matrix.hpp"

namespace flowrom::ad {

// Reverse-mode tape over Matrix values. Graphs are built per forward pass;
// backward() walks the graph in reverse topological order and accumulates
// gradients into every node that requires them, frozen parameters included
// (whether a gradient is *applied* is the optimizer's business, not the
// tape's).
struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node&)>;

struct Node {
    Matrix value;
    Matrix grad;  // empty until backward touches this node
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::string op;
    BackwardFn backward;

    void accumulate(const Matrix& g);
    void accumulate_at(std::size_t i, std::size_t j, double g);
};

class Var {
public:
    Var() = default;
    explicit Var(NodePtr node) : node_(std::move(node)) {}

    const Matrix& value() const { return node_->value; }
    const Matrix& grad() const;
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void clear_grad() { node_->grad = Matrix(); }
    NodePtr node() const { return node_; }
    bool valid() const { return node_ != nullptr; }

private:
    NodePtr node_;
};

Var leaf(Matrix value);      // gradient is tracked
Var constant(Matrix value);  // gradient flow stops here

// Escape hatch used by all ops; a null backward on a differentiable path is
// reported as an unsupported op.
Var make_op(Matrix value, std::vector<Var> parents, std::string op, BackwardFn backward);

Var matmul(const Var& a, const Var& b);
// matmul whose forward product was already computed (batch-level caching of
// parameter-only products); the backward pass is the ordinary matmul one.
Var matmul_cached(Matrix product, const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var add(const Var& a, const Var& b);
Var add_row_broadcast(const Var& a, const Var& bias);  // bias is 1 x cols
Var scale(const Var& a, double s);
Var softmax_rows(const Var& a);
Var gelu(const Var& a);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps);
Var concat_rows(const Var& a, const Var& b);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& a, std::size_t i0, std::size_t i1);
Var slice_cols(const Var& a, std::size_t j0, std::size_t j1);
Var flatten_rows(const Var& a);  // 1 x (rows*cols), row-major
Var gather_rows(const Var& table, std::vector<int> ids);
Var mse(const Var& pred, const Var& target);  // 1 x 1

// Seeds d(loss)/d(loss) = 1 and accumulates into all reachable grads.
// loss must be scalar (1 x 1).
void backward(const Var& loss);

}  // namespace flowrom::ad
