#pragma once

// Dense row-major tensors over a caller-chosen scalar type, with
// reverse-mode differentiation.  Operations record a single-use graph;
// Tensor::backward() walks it once in reverse topological order and
// accumulates (sums) gradients into every reachable tensor that has
// requires_grad set.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vtar/errors.hpp"
#include "vtar/rng.hpp"

namespace vtar {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

namespace detail {

/// One vertex of the recorded computation graph.
template <typename T>
struct GraphNode {
    const char* op = "leaf";
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated on demand, same length as value
    bool requires_grad = false;
    bool consumed = false;  // a backward pass already ran through here
    std::vector<std::shared_ptr<GraphNode>> parents;
    // Pushes this node's grad into its parents.  Receives the node itself
    // so the closure never has to capture it (that would be a cycle).
    std::function<void(GraphNode&)> backward_fn;

    std::size_t numel() const { return value.size(); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

}  // namespace detail

template <typename T>
class Tensor {
public:
    using Node = detail::GraphNode<T>;

    Tensor() : node_(std::make_shared<Node>()) {}

    static Tensor zeros(Shape shape) {
        return from_values(shape, std::vector<T>(shape_numel(shape), T(0)));
    }

    static Tensor full(Shape shape, T fill) {
        return from_values(shape, std::vector<T>(shape_numel(shape), fill));
    }

    static Tensor scalar(T v) { return from_values({1}, {v}); }

    static Tensor from_values(Shape shape, std::vector<T> values) {
        if (shape_numel(shape) != values.size()) {
            throw ShapeError("tensor: " + shape_str(shape) + " cannot hold " +
                             std::to_string(values.size()) + " values");
        }
        Tensor t;
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(values);
        return t;
    }

    static Tensor randn(Shape shape, Rng& rng, T stddev, T mean = T(0)) {
        std::vector<T> v(shape_numel(shape));
        for (T& x : v) x = static_cast<T>(rng.normal(0.0, 1.0)) * stddev + mean;
        return from_values(std::move(shape), std::move(v));
    }

    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->value.size(); }
    std::size_t rank() const { return node_->shape.size(); }

    std::size_t rows() const {
        require_rank2("rows");
        return node_->shape[0];
    }
    std::size_t cols() const {
        require_rank2("cols");
        return node_->shape[1];
    }

    const std::vector<T>& values() const { return node_->value; }
    std::vector<T>& values() { return node_->value; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        node_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    const std::vector<T>& grad() const {
        if (!has_grad()) throw DomainError("tensor has no gradient; run backward first");
        return node_->grad;
    }
    void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

    T item() const {
        if (numel() != 1) {
            throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
        }
        return node_->value[0];
    }

    T at(std::size_t i) const { return node_->value.at(i); }
    T at(std::size_t r, std::size_t c) const {
        require_rank2("at");
        return node_->value.at(r * node_->shape[1] + c);
    }

    /// Reverse-mode pass from a scalar.  The graph is single-use: the
    /// nodes it visited are released afterwards and a second pass over
    /// them is an error.
    void backward() const {
        if (numel() != 1) {
            throw ShapeError("backward: loss must be scalar, got " + shape_str(shape()));
        }
        if (node_->consumed) {
            throw DomainError("backward: graph already consumed; rebuild the forward pass");
        }

        std::vector<Node*> order;
        topo_sort(order);

        node_->ensure_grad();
        node_->grad[0] += T(1);

        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backward_fn) {
                n->ensure_grad();
                n->backward_fn(*n);
            }
            n->consumed = true;
        }
        // Release the recorded graph; leaf gradients stay in place.
        for (Node* n : order) {
            n->backward_fn = nullptr;
            n->parents.clear();
        }
    }

    std::shared_ptr<Node> node() const { return node_; }

private:
    void require_rank2(const char* what) const {
        if (node_->shape.size() != 2) {
            throw ShapeError(std::string(what) + ": tensor " + shape_str(shape()) +
                             " is not 2-D");
        }
    }

    void topo_sort(std::vector<Node*>& order) const {
        std::unordered_set<Node*> seen;
        std::vector<std::pair<Node*, std::size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                Node* p = n->parents[next++].get();
                if (p->requires_grad && !seen.count(p)) {
                    seen.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node> node_;
};

namespace detail {

/// Builds an op result node.  When no parent needs gradients the result
/// is a plain leaf and nothing is recorded.
template <typename T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> value,
                  const std::vector<Tensor<T>>& parents,
                  std::function<void(GraphNode<T>&)> backward_fn) {
    Tensor<T> out = Tensor<T>::from_values(std::move(shape), std::move(value));
    bool needs_grad = false;
    for (const auto& p : parents) needs_grad = needs_grad || p.requires_grad();
    if (!needs_grad) return out;

    auto node = out.node();
    node->op = op;
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
    return out;
}

template <typename T>
void accumulate(const std::shared_ptr<GraphNode<T>>& node, std::size_t idx, T delta) {
    if (!node->requires_grad) return;
    node->ensure_grad();
    node->grad[idx] += delta;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<T> out(m * n, T(0));
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t t = 0; t < k; ++t) {
            const T ait = av[i * k + t];
            if (ait == T(0)) continue;
            for (std::size_t j = 0; j < n; ++j) {
                out[i * n + j] += ait * bv[t * n + j];
            }
        }
    }
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op<T>(
        "matmul", {m, n}, std::move(out), {a, b},
        [an, bn, m, k, n](detail::GraphNode<T>& self) {
            const auto& g = self.grad;
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const T gij = g[i * n + j];
                        for (std::size_t t = 0; t < k; ++t)
                            an->grad[i * k + t] += gij * bn->value[t * n + j];
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const T gij = g[i * n + j];
                        for (std::size_t t = 0; t < k; ++t)
                            bn->grad[t * n + j] += an->value[i * k + t] * gij;
                    }
            }
        });
}

/// a × bᵀ without materializing the transpose: [m×k] · [n×k]ᵀ → [m×n].
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    std::vector<T> out(m * n, T(0));
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            T acc = T(0);
            for (std::size_t t = 0; t < k; ++t) acc += av[i * k + t] * bv[j * k + t];
            out[i * n + j] = acc;
        }
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op<T>(
        "matmul_nt", {m, n}, std::move(out), {a, b},
        [an, bn, m, k, n](detail::GraphNode<T>& self) {
            const auto& g = self.grad;
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const T gij = g[i * n + j];
                        for (std::size_t t = 0; t < k; ++t)
                            an->grad[i * k + t] += gij * bn->value[j * k + t];
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const T gij = g[i * n + j];
                        for (std::size_t t = 0; t < k; ++t)
                            bn->grad[j * k + t] += gij * an->value[i * k + t];
                    }
            }
        });
}

// ---------------------------------------------------------------------------
// Elementwise and broadcast ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op<T>("add", a.shape(), std::move(out), {a, b},
                              [an, bn](detail::GraphNode<T>& self) {
                                  if (an->requires_grad) {
                                      an->ensure_grad();
                                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                                          an->grad[i] += self.grad[i];
                                  }
                                  if (bn->requires_grad) {
                                      bn->ensure_grad();
                                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                                          bn->grad[i] += self.grad[i];
                                  }
                              });
}

/// Adds a length-n vector to every row of an [m×n] matrix.
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.numel() != a.cols()) {
        throw ShapeError("add_rowvec: " + shape_str(a.shape()) + " + " +
                         shape_str(b.shape()));
    }
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<T> out(a.values());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b.values()[j];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op<T>("add_rowvec", a.shape(), std::move(out), {a, b},
                              [an, bn, m, n](detail::GraphNode<T>& self) {
                                  if (an->requires_grad) {
                                      an->ensure_grad();
                                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                                          an->grad[i] += self.grad[i];
                                  }
                                  if (bn->requires_grad) {
                                      bn->ensure_grad();
                                      for (std::size_t i = 0; i < m; ++i)
                                          for (std::size_t j = 0; j < n; ++j)
                                              bn->grad[j] += self.grad[i * n + j];
                                  }
                              });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op<T>("mul", a.shape(), std::move(out), {a, b},
                              [an, bn](detail::GraphNode<T>& self) {
                                  if (an->requires_grad) {
                                      an->ensure_grad();
                                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                                          an->grad[i] += self.grad[i] * bn->value[i];
                                  }
                                  if (bn->requires_grad) {
                                      bn->ensure_grad();
                                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                                          bn->grad[i] += self.grad[i] * an->value[i];
                                  }
                              });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * factor;
    auto an = a.node();
    return detail::make_op<T>("scale", a.shape(), std::move(out), {a},
                              [an, factor](detail::GraphNode<T>& self) {
                                  an->ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      an->grad[i] += self.grad[i] * factor;
                              });
}

/// Multiplies a tensor by a 1-element tensor (broadcast scalar).
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, const Tensor<T>& s) {
    if (s.numel() != 1) {
        throw ShapeError("mul_scalar: scalar operand has shape " + shape_str(s.shape()));
    }
    const T sv = s.values()[0];
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * sv;
    auto an = a.node();
    auto sn = s.node();
    return detail::make_op<T>("mul_scalar", a.shape(), std::move(out), {a, s},
                              [an, sn, sv](detail::GraphNode<T>& self) {
                                  if (an->requires_grad) {
                                      an->ensure_grad();
                                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                                          an->grad[i] += self.grad[i] * sv;
                                  }
                                  if (sn->requires_grad) {
                                      sn->ensure_grad();
                                      T acc = T(0);
                                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                                          acc += self.grad[i] * an->value[i];
                                      sn->grad[0] += acc;
                                  }
                              });
}

template <typename T>
Tensor<T> exp_elem(const Tensor<T>& a) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.values()[i]);
    auto an = a.node();
    return detail::make_op<T>("exp", a.shape(), std::move(out), {a},
                              [an](detail::GraphNode<T>& self) {
                                  an->ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      an->grad[i] += self.grad[i] * self.value[i];
                              });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.values()[i], T(0));
    auto an = a.node();
    return detail::make_op<T>("relu", a.shape(), std::move(out), {a},
                              [an](detail::GraphNode<T>& self) {
                                  an->ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      if (an->value[i] > T(0)) an->grad[i] += self.grad[i];
                              });
}

// ---------------------------------------------------------------------------
// Reductions and structural ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = T(0);
    for (T v : a.values()) acc += v;
    auto an = a.node();
    return detail::make_op<T>("sum", {1}, {acc}, {a}, [an](detail::GraphNode<T>& self) {
        an->ensure_grad();
        const T g = self.grad[0];
        for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
    });
}

/// Column means of an [m×n] matrix: the mean-pool over rows, giving [1×n].
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& a) {
    if (a.rank() != 2) {
        throw ShapeError("mean_rows: tensor " + shape_str(a.shape()) + " is not 2-D");
    }
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<T> out(n, T(0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += a.values()[i * n + j];
    const T inv = T(1) / static_cast<T>(m);
    for (T& v : out) v *= inv;
    auto an = a.node();
    return detail::make_op<T>("mean_rows", {1, n}, std::move(out), {a},
                              [an, m, n, inv](detail::GraphNode<T>& self) {
                                  an->ensure_grad();
                                  for (std::size_t i = 0; i < m; ++i)
                                      for (std::size_t j = 0; j < n; ++j)
                                          an->grad[i * n + j] += self.grad[j] * inv;
                              });
}

template <typename T>
Tensor<T> take_row(const Tensor<T>& a, std::size_t row) {
    if (a.rank() != 2) {
        throw ShapeError("take_row: tensor " + shape_str(a.shape()) + " is not 2-D");
    }
    if (row >= a.rows()) {
        throw IndexError("take_row: row " + std::to_string(row) + " out of range for " +
                         shape_str(a.shape()));
    }
    const std::size_t n = a.cols();
    std::vector<T> out(a.values().begin() + row * n, a.values().begin() + (row + 1) * n);
    auto an = a.node();
    return detail::make_op<T>("take_row", {1, n}, std::move(out), {a},
                              [an, row, n](detail::GraphNode<T>& self) {
                                  an->ensure_grad();
                                  for (std::size_t j = 0; j < n; ++j)
                                      an->grad[row * n + j] += self.grad[j];
                              });
}

/// Stacks m tensors of shape [n] or [1×n] into an [m×n] matrix.
template <typename T>
Tensor<T> stack_rows(const std::vector<Tensor<T>>& rows) {
    if (rows.empty()) throw ShapeError("stack_rows: no rows");
    const std::size_t n = rows.front().numel();
    std::vector<T> out;
    out.reserve(rows.size() * n);
    for (const auto& r : rows) {
        if (r.numel() != n) {
            throw ShapeError("stack_rows: row " + shape_str(r.shape()) +
                             " does not match width " + std::to_string(n));
        }
        out.insert(out.end(), r.values().begin(), r.values().end());
    }
    std::vector<std::shared_ptr<detail::GraphNode<T>>> nodes;
    nodes.reserve(rows.size());
    for (const auto& r : rows) nodes.push_back(r.node());
    return detail::make_op<T>("stack_rows", {rows.size(), n}, std::move(out), rows,
                              [nodes, n](detail::GraphNode<T>& self) {
                                  for (std::size_t i = 0; i < nodes.size(); ++i) {
                                      if (!nodes[i]->requires_grad) continue;
                                      nodes[i]->ensure_grad();
                                      for (std::size_t j = 0; j < n; ++j)
                                          nodes[i]->grad[j] += self.grad[i * n + j];
                                  }
                              });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t start, std::size_t len) {
    if (a.rank() != 2 || start + len > a.cols()) {
        throw ShapeError("slice_cols: [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of range for " +
                         shape_str(a.shape()));
    }
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<T> out(m * len);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < len; ++j) out[i * len + j] = a.values()[i * n + start + j];
    auto an = a.node();
    return detail::make_op<T>("slice_cols", {m, len}, std::move(out), {a},
                              [an, start, len, m, n](detail::GraphNode<T>& self) {
                                  an->ensure_grad();
                                  for (std::size_t i = 0; i < m; ++i)
                                      for (std::size_t j = 0; j < len; ++j)
                                          an->grad[i * n + start + j] += self.grad[i * len + j];
                              });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    const std::size_t m = parts.front().rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.rows() != m) {
            throw ShapeError("concat_cols: part " + shape_str(p.shape()) +
                             " does not have " + std::to_string(m) + " rows");
        }
        total += p.cols();
    }
    std::vector<T> out(m * total);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * total + off + j] = p.values()[i * w + j];
        off += w;
    }
    std::vector<std::shared_ptr<detail::GraphNode<T>>> nodes;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        nodes.push_back(p.node());
        widths.push_back(p.cols());
    }
    return detail::make_op<T>("concat_cols", {m, total}, std::move(out), parts,
                              [nodes, widths, m, total](detail::GraphNode<T>& self) {
                                  std::size_t off = 0;
                                  for (std::size_t k = 0; k < nodes.size(); ++k) {
                                      const std::size_t w = widths[k];
                                      if (nodes[k]->requires_grad) {
                                          nodes[k]->ensure_grad();
                                          for (std::size_t i = 0; i < m; ++i)
                                              for (std::size_t j = 0; j < w; ++j)
                                                  nodes[k]->grad[i * w + j] +=
                                                      self.grad[i * total + off + j];
                                      }
                                      off += w;
                                  }
                              });
}

/// Gathers rows of an embedding table: table[V×d], ids → [len(ids)×d].
template <typename T>
Tensor<T> embedding_rows(const Tensor<T>& table, const std::vector<int>& ids) {
    if (table.rank() != 2) {
        throw ShapeError("embedding_rows: table " + shape_str(table.shape()) + " is not 2-D");
    }
    const std::size_t v = table.rows(), d = table.cols();
    std::vector<T> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
            throw IndexError("embedding_rows: id " + std::to_string(ids[i]) +
                             " out of range [0," + std::to_string(v) + ")");
        }
        const T* src = table.values().data() + static_cast<std::size_t>(ids[i]) * d;
        std::copy(src, src + d, out.begin() + i * d);
    }
    auto tn = table.node();
    return detail::make_op<T>("embedding_rows", {ids.size(), d}, std::move(out), {table},
                              [tn, ids, d](detail::GraphNode<T>& self) {
                                  tn->ensure_grad();
                                  for (std::size_t i = 0; i < ids.size(); ++i)
                                      for (std::size_t j = 0; j < d; ++j)
                                          tn->grad[static_cast<std::size_t>(ids[i]) * d + j] +=
                                              self.grad[i * d + j];
                              });
}

// ---------------------------------------------------------------------------
// Neural-network primitives
// ---------------------------------------------------------------------------

/// Temperature softmax over the last dimension (rows of a matrix, or the
/// whole of a vector), computed with max-subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits, T temperature) {
    if (!(temperature > T(0))) {
        throw DomainError("softmax: temperature must be positive, got " +
                          std::to_string(static_cast<double>(temperature)));
    }
    const std::size_t k = logits.rank() == 2 ? logits.cols() : logits.numel();
    const std::size_t m = logits.numel() / k;
    std::vector<T> out(logits.numel());
    const auto& z = logits.values();
    const T inv_t = T(1) / temperature;
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = z.data() + i * k;
        T max_v = row[0];
        for (std::size_t j = 1; j < k; ++j) max_v = std::max(max_v, row[j]);
        T denom = T(0);
        for (std::size_t j = 0; j < k; ++j) {
            const T e = std::exp((row[j] - max_v) * inv_t);
            out[i * k + j] = e;
            denom += e;
        }
        const T inv_d = T(1) / denom;
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] *= inv_d;
    }
    auto ln = logits.node();
    return detail::make_op<T>("softmax", logits.shape(), std::move(out), {logits},
                              [ln, m, k, inv_t](detail::GraphNode<T>& self) {
                                  ln->ensure_grad();
                                  for (std::size_t i = 0; i < m; ++i) {
                                      const T* y = self.value.data() + i * k;
                                      const T* gy = self.grad.data() + i * k;
                                      T dot = T(0);
                                      for (std::size_t j = 0; j < k; ++j) dot += gy[j] * y[j];
                                      for (std::size_t j = 0; j < k; ++j)
                                          ln->grad[i * k + j] += y[j] * (gy[j] - dot) * inv_t;
                                  }
                              });
}

/// Normalizes each length-d slice to zero mean, unit variance, then
/// applies gain and bias.  Population variance; eps inside the sqrt.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5)) {
    const std::size_t d = x.rank() == 2 ? x.cols() : x.numel();
    const std::size_t m = x.numel() / d;
    if (gain.numel() != d || bias.numel() != d) {
        throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match width " + std::to_string(d));
    }
    if (!(eps > T(0))) throw DomainError("layer_norm: eps must be positive");
    std::vector<T> out(x.numel());
    std::vector<T> inv_std(m);
    std::vector<T> xhat(x.numel());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = xv.data() + i * d;
        T mean = T(0);
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<T>(d);
        T var = T(0);
        for (std::size_t j = 0; j < d; ++j) {
            const T c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[i] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const T h = (row[j] - mean) * is;
            xhat[i * d + j] = h;
            out[i * d + j] = gain.values()[j] * h + bias.values()[j];
        }
    }
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    return detail::make_op<T>(
        "layer_norm", x.shape(), std::move(out), {x, gain, bias},
        [xn, gn, bn, m, d, inv_std = std::move(inv_std),
         xhat = std::move(xhat)](detail::GraphNode<T>& self) {
            for (std::size_t i = 0; i < m; ++i) {
                const T* gy = self.grad.data() + i * d;
                const T* h = xhat.data() + i * d;
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    for (std::size_t j = 0; j < d; ++j) gn->grad[j] += gy[j] * h[j];
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (std::size_t j = 0; j < d; ++j) bn->grad[j] += gy[j];
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    T sum_dh = T(0), sum_dh_h = T(0);
                    for (std::size_t j = 0; j < d; ++j) {
                        const T dh = gy[j] * gn->value[j];
                        sum_dh += dh;
                        sum_dh_h += dh * h[j];
                    }
                    const T inv_d = T(1) / static_cast<T>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        const T dh = gy[j] * gn->value[j];
                        xn->grad[i * d + j] +=
                            inv_std[i] * (dh - sum_dh * inv_d - h[j] * sum_dh_h * inv_d);
                    }
                }
            }
        });
}

/// Scales each length-d slice to unit L2 norm.  Slices with norm below
/// eps are divided by eps instead, so exact zeros stay zero.
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, T eps = T(1e-12)) {
    const std::size_t d = x.rank() == 2 ? x.cols() : x.numel();
    const std::size_t m = x.numel() / d;
    std::vector<T> out(x.numel());
    std::vector<T> denom(m);
    const auto& xv = x.values();
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = xv.data() + i * d;
        T sq = T(0);
        for (std::size_t j = 0; j < d; ++j) sq += row[j] * row[j];
        const T norm = std::sqrt(sq);
        denom[i] = std::max(norm, eps);
        const T inv = T(1) / denom[i];
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = row[j] * inv;
    }
    auto xn = x.node();
    return detail::make_op<T>(
        "l2_normalize", x.shape(), std::move(out), {x},
        [xn, m, d, eps, denom = std::move(denom)](detail::GraphNode<T>& self) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const T* y = self.value.data() + i * d;
                const T* gy = self.grad.data() + i * d;
                const T inv = T(1) / denom[i];
                if (denom[i] <= eps) {
                    // Guarded branch: y = x / eps is linear.
                    for (std::size_t j = 0; j < d; ++j) xn->grad[i * d + j] += gy[j] * inv;
                    continue;
                }
                T dot = T(0);
                for (std::size_t j = 0; j < d; ++j) dot += gy[j] * y[j];
                for (std::size_t j = 0; j < d; ++j)
                    xn->grad[i * d + j] += (gy[j] - y[j] * dot) * inv;
            }
        });
}

template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& u, const Tensor<T>& v) {
    if (u.numel() != v.numel()) {
        throw ShapeError("cosine_similarity: " + shape_str(u.shape()) + " vs " +
                         shape_str(v.shape()));
    }
    const std::size_t d = u.numel();
    T dot = T(0), uu = T(0), vv = T(0);
    for (std::size_t j = 0; j < d; ++j) {
        dot += u.values()[j] * v.values()[j];
        uu += u.values()[j] * u.values()[j];
        vv += v.values()[j] * v.values()[j];
    }
    if (uu == T(0) || vv == T(0)) {
        throw DomainError("cosine_similarity: zero vector");
    }
    const T nu = std::sqrt(uu), nv = std::sqrt(vv);
    const T c = dot / (nu * nv);
    auto un = u.node();
    auto vn = v.node();
    return detail::make_op<T>("cosine_similarity", {1}, {c}, {u, v},
                              [un, vn, nu, nv, uu, vv, c, d](detail::GraphNode<T>& self) {
                                  const T g = self.grad[0];
                                  if (un->requires_grad) {
                                      un->ensure_grad();
                                      for (std::size_t j = 0; j < d; ++j)
                                          un->grad[j] += g * (vn->value[j] / (nu * nv) -
                                                              c * un->value[j] / uu);
                                  }
                                  if (vn->requires_grad) {
                                      vn->ensure_grad();
                                      for (std::size_t j = 0; j < d; ++j)
                                          vn->grad[j] += g * (un->value[j] / (nu * nv) -
                                                              c * vn->value[j] / vv);
                                  }
                              });
}

/// Mean over the batch of -log softmax(logits)[target], stabilized with
/// log-sum-exp.  logits: [B×K] (or [K] for a single example).
template <typename T>
Tensor<T> cross_entropy_from_logits(const Tensor<T>& logits,
                                    const std::vector<std::size_t>& targets) {
    const std::size_t k = logits.rank() == 2 ? logits.cols() : logits.numel();
    const std::size_t b = logits.numel() / k;
    if (targets.size() != b) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for batch of " + std::to_string(b));
    }
    const auto& z = logits.values();
    T total = T(0);
    for (std::size_t i = 0; i < b; ++i) {
        if (targets[i] >= k) {
            throw IndexError("cross_entropy: target " + std::to_string(targets[i]) +
                             " out of range [0," + std::to_string(k) + ")");
        }
        const T* row = z.data() + i * k;
        T max_v = row[0];
        for (std::size_t j = 1; j < k; ++j) max_v = std::max(max_v, row[j]);
        T denom = T(0);
        for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - max_v);
        total += std::log(denom) + max_v - row[targets[i]];
    }
    total /= static_cast<T>(b);
    auto ln = logits.node();
    return detail::make_op<T>(
        "cross_entropy", {1}, {total}, {logits},
        [ln, targets, b, k](detail::GraphNode<T>& self) {
            ln->ensure_grad();
            const T g = self.grad[0] / static_cast<T>(b);
            for (std::size_t i = 0; i < b; ++i) {
                const T* row = ln->value.data() + i * k;
                T max_v = row[0];
                for (std::size_t j = 1; j < k; ++j) max_v = std::max(max_v, row[j]);
                T denom = T(0);
                for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - max_v);
                const T inv_d = T(1) / denom;
                for (std::size_t j = 0; j < k; ++j) {
                    T p = std::exp(row[j] - max_v) * inv_d;
                    if (j == targets[i]) p -= T(1);
                    ln->grad[i * k + j] += p * g;
                }
            }
        });
}

}  // namespace vtar
