#include "flowrom/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace flowrom::ad {

namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143267794;

bool any_requires(const std::vector<Var>& parents) {
    for (const Var& p : parents) {
        if (p.requires_grad()) return true;
    }
    return false;
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" + a.shape_str() + " vs " +
                                b.shape_str() + ")");
}

}  // namespace

void Node::accumulate(const Matrix& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) grad = Matrix(value.rows, value.cols);
    if (!grad.same_shape(g)) shape_error("accumulate", grad, g);
    for (std::size_t i = 0; i < grad.data.size(); ++i) grad.data[i] += g.data[i];
}

void Node::accumulate_at(std::size_t i, std::size_t j, double g) {
    if (!requires_grad) return;
    if (grad.size() == 0) grad = Matrix(value.rows, value.cols);
    grad(i, j) += g;
}

const Matrix& Var::grad() const {
    if (node_->grad.size() == 0) {
        throw std::logic_error("Var::grad: no gradient recorded for op \"" + node_->op + "\"");
    }
    return node_->grad;
}

Var leaf(Matrix value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    node->op = "leaf";
    return Var(node);
}

Var constant(Matrix value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = false;
    node->op = "constant";
    return Var(node);
}

Var make_op(Matrix value, std::vector<Var> parents, std::string op, BackwardFn backward) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = any_requires(parents);
    node->parents.reserve(parents.size());
    for (Var& p : parents) node->parents.push_back(p.node());
    node->op = std::move(op);
    node->backward = std::move(backward);
    return Var(node);
}

namespace {

void matmul_backward(Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate(num::matmul_nt(self.grad, pb.value));
    if (pb.requires_grad) pb.accumulate(num::matmul_tn(pa.value, self.grad));
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
    return make_op(num::matmul(a.value(), b.value()), {a, b}, "matmul", matmul_backward);
}

Var matmul_cached(Matrix product, const Var& a, const Var& b) {
    if (a.value().cols != b.value().rows || product.rows != a.value().rows ||
        product.cols != b.value().cols) {
        shape_error("matmul_cached", a.value(), b.value());
    }
    return make_op(std::move(product), {a, b}, "matmul", matmul_backward);
}

Var matmul_nt(const Var& a, const Var& b) {
    return make_op(num::matmul_nt(a.value(), b.value()), {a, b}, "matmul_nt", [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) pa.accumulate(num::matmul(self.grad, pb.value));
        if (pb.requires_grad) pb.accumulate(num::matmul_tn(self.grad, pa.value));
    });
}

Var add(const Var& a, const Var& b) {
    return make_op(num::add(a.value(), b.value()), {a, b}, "add", [](Node& self) {
        self.parents[0]->accumulate(self.grad);
        self.parents[1]->accumulate(self.grad);
    });
}

Var add_row_broadcast(const Var& a, const Var& bias) {
    const Matrix& av = a.value();
    const Matrix& bv = bias.value();
    if (bv.rows != 1 || bv.cols != av.cols) shape_error("add_row_broadcast", av, bv);
    Matrix out = av;
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += bv(0, j);
    return make_op(std::move(out), {a, bias}, "add_row_broadcast", [](Node& self) {
        self.parents[0]->accumulate(self.grad);
        Node& pb = *self.parents[1];
        if (pb.requires_grad) {
            Matrix colsum(1, self.grad.cols);
            for (std::size_t i = 0; i < self.grad.rows; ++i)
                for (std::size_t j = 0; j < self.grad.cols; ++j)
                    colsum(0, j) += self.grad(i, j);
            pb.accumulate(colsum);
        }
    });
}

Var scale(const Var& a, double s) {
    return make_op(num::scale(a.value(), s), {a}, "scale", [s](Node& self) {
        self.parents[0]->accumulate(num::scale(self.grad, s));
    });
}

Var softmax_rows(const Var& a) {
    const Matrix& av = a.value();
    Matrix out(av.rows, av.cols);
    for (std::size_t i = 0; i < av.rows; ++i) {
        const std::vector<double> row = num::softmax(av.row(i));
        for (std::size_t j = 0; j < av.cols; ++j) out(i, j) = row[j];
    }
    return make_op(std::move(out), {a}, "softmax_rows", [](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        Matrix dz(self.value.rows, self.value.cols);
        for (std::size_t i = 0; i < self.value.rows; ++i) {
            double weighted = 0.0;
            for (std::size_t j = 0; j < self.value.cols; ++j)
                weighted += self.grad(i, j) * self.value(i, j);
            for (std::size_t j = 0; j < self.value.cols; ++j)
                dz(i, j) = self.value(i, j) * (self.grad(i, j) - weighted);
        }
        pa.accumulate(dz);
    });
}

Var gelu(const Var& a) {
    const Matrix& av = a.value();
    Matrix out = av;
    for (double& v : out.data) v = num::gelu(v);
    return make_op(std::move(out), {a}, "gelu", [](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        Matrix dx(pa.value.rows, pa.value.cols);
        for (std::size_t k = 0; k < pa.value.data.size(); ++k) {
            const double x = pa.value.data[k];
            const double phi = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
            const double dens = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            dx.data[k] = self.grad.data[k] * (phi + x * dens);
        }
        pa.accumulate(dx);
    });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Matrix& xv = x.value();
    const Matrix& gv = gamma.value();
    const Matrix& bv = beta.value();
    if (gv.rows != 1 || gv.cols != xv.cols) shape_error("layer_norm_rows", xv, gv);
    if (bv.rows != 1 || bv.cols != xv.cols) shape_error("layer_norm_rows", xv, bv);

    // Normalized rows and inverse scales are captured for the backward pass.
    auto x_hat = std::make_shared<Matrix>(xv.rows, xv.cols);
    auto inv_s = std::make_shared<std::vector<double>>(xv.rows, 0.0);
    Matrix out(xv.rows, xv.cols);
    const double n = static_cast<double>(xv.cols);
    for (std::size_t i = 0; i < xv.rows; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < xv.cols; ++j) mean += xv(i, j);
        mean /= n;
        double var = 0.0;
        for (std::size_t j = 0; j < xv.cols; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
        var /= n;
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_s)[i] = inv;
        for (std::size_t j = 0; j < xv.cols; ++j) {
            (*x_hat)(i, j) = (xv(i, j) - mean) * inv;
            out(i, j) = (*x_hat)(i, j) * gv(0, j) + bv(0, j);
        }
    }
    return make_op(std::move(out), {x, gamma, beta}, "layer_norm_rows",
                   [x_hat, inv_s](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pg = *self.parents[1];
                       Node& pb = *self.parents[2];
                       const Matrix& g = self.grad;
                       const std::size_t cols = g.cols;
                       const double n = static_cast<double>(cols);
                       if (pg.requires_grad) {
                           Matrix dgamma(1, cols);
                           for (std::size_t i = 0; i < g.rows; ++i)
                               for (std::size_t j = 0; j < cols; ++j)
                                   dgamma(0, j) += g(i, j) * (*x_hat)(i, j);
                           pg.accumulate(dgamma);
                       }
                       if (pb.requires_grad) {
                           Matrix dbeta(1, cols);
                           for (std::size_t i = 0; i < g.rows; ++i)
                               for (std::size_t j = 0; j < cols; ++j) dbeta(0, j) += g(i, j);
                           pb.accumulate(dbeta);
                       }
                       if (px.requires_grad) {
                           Matrix dx(g.rows, cols);
                           for (std::size_t i = 0; i < g.rows; ++i) {
                               double mean_gh = 0.0;
                               double mean_ghx = 0.0;
                               for (std::size_t j = 0; j < cols; ++j) {
                                   const double gh = g(i, j) * pg.value(0, j);
                                   mean_gh += gh;
                                   mean_ghx += gh * (*x_hat)(i, j);
                               }
                               mean_gh /= n;
                               mean_ghx /= n;
                               for (std::size_t j = 0; j < cols; ++j) {
                                   const double gh = g(i, j) * pg.value(0, j);
                                   dx(i, j) = (*inv_s)[i] *
                                              (gh - mean_gh - (*x_hat)(i, j) * mean_ghx);
                               }
                           }
                           px.accumulate(dx);
                       }
                   });
}

Var concat_rows(const Var& a, const Var& b) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (av.rows > 0 && bv.rows > 0 && av.cols != bv.cols) shape_error("concat_rows", av, bv);
    Matrix out(av.rows + bv.rows, av.rows > 0 ? av.cols : bv.cols);
    for (std::size_t i = 0; i < av.rows; ++i)
        for (std::size_t j = 0; j < av.cols; ++j) out(i, j) = av(i, j);
    for (std::size_t i = 0; i < bv.rows; ++i)
        for (std::size_t j = 0; j < bv.cols; ++j) out(av.rows + i, j) = bv(i, j);
    const std::size_t split = av.rows;
    return make_op(std::move(out), {a, b}, "concat_rows", [split](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad && split > 0) {
            Matrix ga(split, self.grad.cols);
            for (std::size_t i = 0; i < split; ++i)
                for (std::size_t j = 0; j < self.grad.cols; ++j) ga(i, j) = self.grad(i, j);
            pa.accumulate(ga);
        }
        if (pb.requires_grad && self.grad.rows > split) {
            Matrix gb(self.grad.rows - split, self.grad.cols);
            for (std::size_t i = split; i < self.grad.rows; ++i)
                for (std::size_t j = 0; j < self.grad.cols; ++j)
                    gb(i - split, j) = self.grad(i, j);
            pb.accumulate(gb);
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    std::size_t total = 0;
    for (const Var& p : parts) {
        if (p.value().rows != parts[0].value().rows)
            shape_error("concat_cols", parts[0].value(), p.value());
        total += p.value().cols;
    }
    Matrix out(parts[0].value().rows, total);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const Var& p : parts) {
        offsets.push_back(off);
        const Matrix& pv = p.value();
        for (std::size_t i = 0; i < pv.rows; ++i)
            for (std::size_t j = 0; j < pv.cols; ++j) out(i, off + j) = pv(i, j);
        off += pv.cols;
    }
    return make_op(std::move(out), parts, "concat_cols", [offsets](Node& self) {
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            Node& parent = *self.parents[p];
            if (!parent.requires_grad) continue;
            Matrix gp(parent.value.rows, parent.value.cols);
            for (std::size_t i = 0; i < gp.rows; ++i)
                for (std::size_t j = 0; j < gp.cols; ++j)
                    gp(i, j) = self.grad(i, offsets[p] + j);
            parent.accumulate(gp);
        }
    });
}

Var slice_rows(const Var& a, std::size_t i0, std::size_t i1) {
    const Matrix& av = a.value();
    if (i0 >= i1 || i1 > av.rows)
        throw std::invalid_argument("slice_rows: range [" + std::to_string(i0) + ", " +
                                    std::to_string(i1) + ") invalid for " + av.shape_str());
    Matrix out(i1 - i0, av.cols);
    for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = 0; j < av.cols; ++j) out(i - i0, j) = av(i, j);
    return make_op(std::move(out), {a}, "slice_rows", [i0](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        Matrix gp(pa.value.rows, pa.value.cols);
        for (std::size_t i = 0; i < self.grad.rows; ++i)
            for (std::size_t j = 0; j < self.grad.cols; ++j) gp(i0 + i, j) = self.grad(i, j);
        pa.accumulate(gp);
    });
}

Var slice_cols(const Var& a, std::size_t j0, std::size_t j1) {
    const Matrix& av = a.value();
    if (j0 >= j1 || j1 > av.cols)
        throw std::invalid_argument("slice_cols: range [" + std::to_string(j0) + ", " +
                                    std::to_string(j1) + ") invalid for " + av.shape_str());
    Matrix out(av.rows, j1 - j0);
    for (std::size_t i = 0; i < av.rows; ++i)
        for (std::size_t j = j0; j < j1; ++j) out(i, j - j0) = av(i, j);
    return make_op(std::move(out), {a}, "slice_cols", [j0](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        Matrix gp(pa.value.rows, pa.value.cols);
        for (std::size_t i = 0; i < self.grad.rows; ++i)
            for (std::size_t j = 0; j < self.grad.cols; ++j) gp(i, j0 + j) = self.grad(i, j);
        pa.accumulate(gp);
    });
}

Var flatten_rows(const Var& a) {
    Matrix out(1, a.value().size(), a.value().data);
    return make_op(std::move(out), {a}, "flatten_rows", [](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        pa.accumulate(Matrix(pa.value.rows, pa.value.cols, self.grad.data));
    });
}

Var gather_rows(const Var& table, std::vector<int> ids) {
    const Matrix& tv = table.value();
    Matrix out(ids.size(), tv.cols);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const int id = ids[i];
        if (id < 0 || static_cast<std::size_t>(id) >= tv.rows)
            throw std::invalid_argument("gather_rows: id " + std::to_string(id) +
                                        " out of range [0, " + std::to_string(tv.rows) + ")");
        for (std::size_t j = 0; j < tv.cols; ++j)
            out(i, j) = tv(static_cast<std::size_t>(id), j);
    }
    return make_op(std::move(out), {table}, "gather_rows", [ids = std::move(ids)](Node& self) {
        Node& pt = *self.parents[0];
        if (!pt.requires_grad) return;
        Matrix gp(pt.value.rows, pt.value.cols);
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < self.grad.cols; ++j)
                gp(static_cast<std::size_t>(ids[i]), j) += self.grad(i, j);
        pt.accumulate(gp);
    });
}

Var mse(const Var& pred, const Var& target) {
    const Matrix& pv = pred.value();
    const Matrix& tv = target.value();
    if (!pv.same_shape(tv)) shape_error("mse", pv, tv);
    if (pv.size() == 0) throw std::invalid_argument("mse: empty input");
    double acc = 0.0;
    for (std::size_t k = 0; k < pv.data.size(); ++k) {
        const double d = pv.data[k] - tv.data[k];
        acc += d * d;
    }
    Matrix out(1, 1);
    out(0, 0) = acc / static_cast<double>(pv.size());
    return make_op(std::move(out), {pred, target}, "mse", [](Node& self) {
        Node& pp = *self.parents[0];
        Node& pt = *self.parents[1];
        const double g = self.grad(0, 0);
        const double n = static_cast<double>(pp.value.size());
        Matrix dp(pp.value.rows, pp.value.cols);
        for (std::size_t k = 0; k < dp.data.size(); ++k)
            dp.data[k] = g * 2.0 * (pp.value.data[k] - pt.value.data[k]) / n;
        if (pp.requires_grad) pp.accumulate(dp);
        if (pt.requires_grad) pt.accumulate(num::scale(dp, -1.0));
    });
}

void backward(const Var& loss) {
    if (!loss.valid()) throw std::invalid_argument("backward: invalid loss");
    if (loss.value().rows != 1 || loss.value().cols != 1)
        throw std::invalid_argument("backward: loss must be scalar, got " +
                                    loss.value().shape_str());

    // Iterative post-order DFS; reversed it is a valid topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (!visited.count(parent) && parent->requires_grad) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    Matrix seed(1, 1);
    seed(0, 0) = 1.0;
    loss.node()->accumulate(seed);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (!node->requires_grad || node->parents.empty()) continue;
        if (node->grad.size() == 0) continue;  // unreachable from the seed
        if (!node->backward) {
            throw std::runtime_error("backward: unsupported op \"" + node->op +
                                     "\" in recorded graph");
        }
        node->backward(*node);
    }
}

}  // namespace flowrom::ad
