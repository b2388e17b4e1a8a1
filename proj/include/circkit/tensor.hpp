#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <vector>

#include "circkit/common.hpp"

namespace circkit {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out + "]";
}

/// Thread-local forward-op FLOP counter. Multiply-add counts as 2,
/// transcendental and elementwise ops as 1 per element.
struct flops {
    static std::int64_t& counter() {
        thread_local std::int64_t c = 0;
        return c;
    }
    static void reset() { counter() = 0; }
    static std::int64_t count() { return counter(); }
    static void add(std::int64_t n) { counter() += n; }
};

/// Dense tensor of rank <= 3 participating in reverse-mode differentiation.
/// A TensorT is a cheap handle onto a shared graph node; ops build new nodes
/// that keep their inputs alive. Scalar type is float for training and
/// double for verification runs.
template <class S>
class TensorT {
    static_assert(std::is_floating_point_v<S>);

public:
    struct Node {
        Shape shape;
        std::vector<S> value;
        std::vector<S> grad;  // allocated on demand, same size as value
        bool requires_grad = false;
        bool backward_ran = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backprop;

        std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
        void ensure_grad() {
            if (grad.size() != value.size()) grad.assign(value.size(), S(0));
        }
        void zero_grad() { std::fill(grad.begin(), grad.end(), S(0)); }
    };

    TensorT() = default;

    static TensorT zeros(Shape shape) { return full(std::move(shape), S(0)); }

    static TensorT full(Shape shape, S v) {
        TensorT t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->value.assign(static_cast<std::size_t>(shape_numel(t.node_->shape)), v);
        return t;
    }

    static TensorT scalar(S v) { return full({1}, v); }

    static TensorT from_vector(std::vector<S> data, Shape shape) {
        if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
            throw std::invalid_argument("from_vector: data size " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        TensorT t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(data);
        return t;
    }

    static TensorT uniform(Shape shape, S lo, S hi, Rng& rng) {
        TensorT t = zeros(std::move(shape));
        for (auto& v : t.values()) v = static_cast<S>(rng.uniform(lo, hi));
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
    std::int64_t size() const { return node_->numel(); }

    std::vector<S>& values() { return node_->value; }
    const std::vector<S>& values() const { return node_->value; }
    std::vector<S>& grads() { return node_->grad; }
    const std::vector<S>& grads() const { return node_->grad; }

    S item() const {
        if (size() != 1) throw std::runtime_error("item: tensor has " + std::to_string(size()) + " elements");
        return node_->value[0];
    }

    S& at(int i) { return node_->value[static_cast<std::size_t>(i)]; }
    S& at(int i, int j) { return node_->value[static_cast<std::size_t>(i) * dim(1) + j]; }
    S& at(int i, int j, int k) {
        return node_->value[(static_cast<std::size_t>(i) * dim(1) + j) * dim(2) + k];
    }
    S at(int i) const { return node_->value[static_cast<std::size_t>(i)]; }
    S at(int i, int j) const { return node_->value[static_cast<std::size_t>(i) * dim(1) + j]; }
    S at(int i, int j, int k) const {
        return node_->value[(static_cast<std::size_t>(i) * dim(1) + j) * dim(2) + k];
    }

    TensorT& set_requires_grad(bool flag = true) {
        node_->requires_grad = flag;
        if (flag) node_->ensure_grad();
        return *this;
    }
    bool requires_grad() const { return node_->requires_grad; }

    void zero_grad() {
        node_->ensure_grad();
        node_->zero_grad();
    }

    std::shared_ptr<Node> node() const { return node_; }

    /// Reverse-mode accumulation from a scalar loss. Populates .grad on every
    /// reachable node flagged requires_grad (parameters and marked inputs).
    void backward() {
        if (size() != 1)
            throw std::runtime_error("backward: loss must be scalar, got shape " + shape_str(shape()));
        if (node_->backward_ran)
            throw std::runtime_error("backward: already ran on this node; rebuild the graph first");
        node_->backward_ran = true;

        std::vector<Node*> order;
        topo_order(node_.get(), order);

        node_->ensure_grad();
        node_->grad[0] = S(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backprop && n->requires_grad) n->backprop(*n);
        }
    }

    static TensorT wrap(std::shared_ptr<Node> n) {
        TensorT t;
        t.node_ = std::move(n);
        return t;
    }

    /// Builds a graph node; requires_grad is inherited from parents.
    static TensorT make(Shape shape, std::vector<TensorT> parents, std::function<void(Node&)> backprop) {
        TensorT t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->value.assign(static_cast<std::size_t>(shape_numel(t.node_->shape)), S(0));
        bool rg = false;
        t.node_->parents.reserve(parents.size());
        for (auto& p : parents) {
            rg = rg || p.node_->requires_grad;
            t.node_->parents.push_back(p.node_);
        }
        t.node_->requires_grad = rg;
        if (rg) t.node_->backprop = std::move(backprop);
        return t;
    }

private:
    static void topo_order(Node* root, std::vector<Node*>& order) {
        std::unordered_set<Node*> seen;
        // Iterative DFS; graphs for long sequences overflow the call stack otherwise.
        std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
        seen.insert(root);
        while (!stack.empty()) {
            auto& [n, idx] = stack.back();
            if (idx < n->parents.size()) {
                Node* p = n->parents[idx++].get();
                if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node> node_;
};

namespace detail {

template <class S>
void check_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

#if !defined(NDEBUG)
template <class S>
void debug_check_finite(const TensorT<S>& t, const char* op) {
    for (S v : t.values())
        if (!std::isfinite(v))
            throw std::runtime_error(std::string(op) + ": non-finite value in forward output");
}
#else
template <class S>
void debug_check_finite(const TensorT<S>&, const char*) {}
#endif

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    detail::check_same_shape(a, b, "add");
    auto out = TensorT<S>::make(a.shape(), {a, b}, [](auto& n) {
        for (int p = 0; p < 2; ++p) {
            auto& par = *n.parents[p];
            if (!par.requires_grad) continue;
            par.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) par.grad[i] += n.grad[i];
        }
    });
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    flops::add(out.size());
    detail::debug_check_finite(out, "add");
    return out;
}

template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    detail::check_same_shape(a, b, "sub");
    auto out = TensorT<S>::make(a.shape(), {a, b}, [](auto& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] -= n.grad[i];
        }
    });
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    flops::add(out.size());
    detail::debug_check_finite(out, "sub");
    return out;
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    detail::check_same_shape(a, b, "mul");
    auto out = TensorT<S>::make(a.shape(), {a, b}, [](auto& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i] * pa.value[i];
        }
    });
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    flops::add(out.size());
    detail::debug_check_finite(out, "mul");
    return out;
}

template <class S>
TensorT<S> scale(const TensorT<S>& a, S c) {
    auto out = TensorT<S>::make(a.shape(), {a}, [c](auto& n) {
        auto& pa = *n.parents[0];
        pa.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * c;
    });
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
    flops::add(out.size());
    detail::debug_check_finite(out, "scale");
    return out;
}

template <class S>
TensorT<S> relu(const TensorT<S>& a) {
    auto out = TensorT<S>::make(a.shape(), {a}, [](auto& n) {
        auto& pa = *n.parents[0];
        pa.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (pa.value[i] > S(0)) pa.grad[i] += n.grad[i];
    });
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > S(0) ? av[i] : S(0);
    flops::add(out.size());
    return out;
}

template <class S>
TensorT<S> sigmoid(const TensorT<S>& a) {
    auto out = TensorT<S>::make(a.shape(), {a}, [](auto& n) {
        auto& pa = *n.parents[0];
        pa.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const S y = n.value[i];
            pa.grad[i] += n.grad[i] * y * (S(1) - y);
        }
    });
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) {
        const S z = av[i];
        ov[i] = z >= S(0) ? S(1) / (S(1) + std::exp(-z)) : std::exp(z) / (S(1) + std::exp(z));
    }
    flops::add(out.size());
    detail::debug_check_finite(out, "sigmoid");
    return out;
}

template <class S>
TensorT<S> exp(const TensorT<S>& a) {
    auto out = TensorT<S>::make(a.shape(), {a}, [](auto& n) {
        auto& pa = *n.parents[0];
        pa.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * n.value[i];
    });
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::exp(av[i]);
    flops::add(out.size());
    return out;
}

// ---------------------------------------------------------------------------
// Reductions and broadcasts

template <class S>
TensorT<S> sum(const TensorT<S>& a) {
    auto out = TensorT<S>::make({1}, {a}, [](auto& n) {
        auto& pa = *n.parents[0];
        pa.ensure_grad();
        for (auto& g : pa.grad) g += n.grad[0];
    });
    const auto& av = a.values();
    out.values()[0] = std::accumulate(av.begin(), av.end(), S(0));
    flops::add(a.size());
    detail::debug_check_finite(out, "sum");
    return out;
}

template <class S>
TensorT<S> mean(const TensorT<S>& a) {
    const S inv = S(1) / static_cast<S>(a.size());
    auto out = TensorT<S>::make({1}, {a}, [inv](auto& n) {
        auto& pa = *n.parents[0];
        pa.ensure_grad();
        for (auto& g : pa.grad) g += n.grad[0] * inv;
    });
    const auto& av = a.values();
    out.values()[0] = std::accumulate(av.begin(), av.end(), S(0)) * inv;
    flops::add(a.size());
    detail::debug_check_finite(out, "mean");
    return out;
}

/// Row sums of a [N x M] matrix, keepdim: result is [N x 1].
template <class S>
TensorT<S> row_sum(const TensorT<S>& a) {
    if (a.rank() != 2) throw std::invalid_argument("row_sum: expected rank-2, got " + shape_str(a.shape()));
    const int n = a.dim(0), m = a.dim(1);
    auto out = TensorT<S>::make({n, 1}, {a}, [m](auto& nd) {
        auto& pa = *nd.parents[0];
        pa.ensure_grad();
        const int rows = static_cast<int>(nd.value.size());
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < m; ++j) pa.grad[static_cast<std::size_t>(i) * m + j] += nd.grad[i];
    });
    for (int i = 0; i < n; ++i) {
        S acc = 0;
        const S* row = a.values().data() + static_cast<std::size_t>(i) * m;
        for (int j = 0; j < m; ++j) acc += row[j];
        out.values()[static_cast<std::size_t>(i)] = acc;
    }
    flops::add(a.size());
    detail::debug_check_finite(out, "row_sum");
    return out;
}

/// x[i,j] + col[i] for x [N x M], col [N x 1].
template <class S>
TensorT<S> rowwise_add(const TensorT<S>& x, const TensorT<S>& col) {
    if (x.rank() != 2 || col.rank() != 2 || col.dim(1) != 1 || col.dim(0) != x.dim(0))
        throw std::invalid_argument("rowwise_add: shape mismatch " + shape_str(x.shape()) + " vs " +
                                    shape_str(col.shape()));
    const int n = x.dim(0), m = x.dim(1);
    auto out = TensorT<S>::make({n, m}, {x, col}, [n, m](auto& nd) {
        auto& px = *nd.parents[0];
        auto& pc = *nd.parents[1];
        if (px.requires_grad) {
            px.ensure_grad();
            for (std::size_t i = 0; i < nd.grad.size(); ++i) px.grad[i] += nd.grad[i];
        }
        if (pc.requires_grad) {
            pc.ensure_grad();
            for (int i = 0; i < n; ++i) {
                S acc = 0;
                for (int j = 0; j < m; ++j) acc += nd.grad[static_cast<std::size_t>(i) * m + j];
                pc.grad[static_cast<std::size_t>(i)] += acc;
            }
        }
    });
    for (int i = 0; i < n; ++i) {
        const S c = col.values()[static_cast<std::size_t>(i)];
        const S* xi = x.values().data() + static_cast<std::size_t>(i) * m;
        S* oi = out.values().data() + static_cast<std::size_t>(i) * m;
        for (int j = 0; j < m; ++j) oi[j] = xi[j] + c;
    }
    flops::add(out.size());
    detail::debug_check_finite(out, "rowwise_add");
    return out;
}

/// x[i,j] / col[i] for x [N x M], col [N x 1].
template <class S>
TensorT<S> rowwise_div(const TensorT<S>& x, const TensorT<S>& col) {
    if (x.rank() != 2 || col.rank() != 2 || col.dim(1) != 1 || col.dim(0) != x.dim(0))
        throw std::invalid_argument("rowwise_div: shape mismatch " + shape_str(x.shape()) + " vs " +
                                    shape_str(col.shape()));
    const int n = x.dim(0), m = x.dim(1);
    auto out = TensorT<S>::make({n, m}, {x, col}, [n, m](auto& nd) {
        auto& px = *nd.parents[0];
        auto& pc = *nd.parents[1];
        for (int i = 0; i < n; ++i) {
            const S c = pc.value[static_cast<std::size_t>(i)];
            const S inv = S(1) / c;
            S acc = 0;
            for (int j = 0; j < m; ++j) {
                const std::size_t k = static_cast<std::size_t>(i) * m + j;
                if (px.requires_grad) {
                    px.ensure_grad();
                    px.grad[k] += nd.grad[k] * inv;
                }
                acc += nd.grad[k] * px.value[k];
            }
            if (pc.requires_grad) {
                pc.ensure_grad();
                pc.grad[static_cast<std::size_t>(i)] -= acc * inv * inv;
            }
        }
    });
    for (int i = 0; i < n; ++i) {
        const S inv = S(1) / col.values()[static_cast<std::size_t>(i)];
        const S* xi = x.values().data() + static_cast<std::size_t>(i) * m;
        S* oi = out.values().data() + static_cast<std::size_t>(i) * m;
        for (int j = 0; j < m; ++j) oi[j] = xi[j] * inv;
    }
    flops::add(out.size());
    detail::debug_check_finite(out, "rowwise_div");
    return out;
}

/// Adds a single-element tensor to every element (scalar bias broadcast).
template <class S>
TensorT<S> add_bcast(const TensorT<S>& x, const TensorT<S>& b) {
    if (b.size() != 1) throw std::invalid_argument("add_bcast: bias must be a single element");
    auto out = TensorT<S>::make(x.shape(), {x, b}, [](auto& nd) {
        auto& px = *nd.parents[0];
        auto& pb = *nd.parents[1];
        if (px.requires_grad) {
            px.ensure_grad();
            for (std::size_t i = 0; i < nd.grad.size(); ++i) px.grad[i] += nd.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            S acc = 0;
            for (std::size_t i = 0; i < nd.grad.size(); ++i) acc += nd.grad[i];
            pb.grad[0] += acc;
        }
    });
    const S c = b.values()[0];
    for (std::size_t i = 0; i < out.values().size(); ++i) out.values()[i] = x.values()[i] + c;
    flops::add(out.size());
    detail::debug_check_finite(out, "add_bcast");
    return out;
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()));
    const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
    auto out = TensorT<S>::make({n, m}, {a, b}, [n, k, m](auto& nd) {
        auto& pa = *nd.parents[0];
        auto& pb = *nd.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            // dA = dC * B^T
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < m; ++j) {
                    const S g = nd.grad[static_cast<std::size_t>(i) * m + j];
                    if (g == S(0)) continue;
                    S* arow = pa.grad.data() + static_cast<std::size_t>(i) * k;
                    for (int t = 0; t < k; ++t) arow[t] += g * pb.value[static_cast<std::size_t>(t) * m + j];
                }
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            // dB = A^T * dC
            for (int i = 0; i < n; ++i) {
                const S* arow = pa.value.data() + static_cast<std::size_t>(i) * k;
                const S* grow = nd.grad.data() + static_cast<std::size_t>(i) * m;
                for (int t = 0; t < k; ++t) {
                    const S av = arow[t];
                    if (av == S(0)) continue;
                    S* brow = pb.grad.data() + static_cast<std::size_t>(t) * m;
                    for (int j = 0; j < m; ++j) brow[j] += av * grow[j];
                }
            }
        }
    });
    auto& ov = out.values();
    for (int i = 0; i < n; ++i) {
        const S* arow = a.values().data() + static_cast<std::size_t>(i) * k;
        S* orow = ov.data() + static_cast<std::size_t>(i) * m;
        for (int t = 0; t < k; ++t) {
            const S av = arow[t];
            if (av == S(0)) continue;
            const S* brow = b.values().data() + static_cast<std::size_t>(t) * m;
            for (int j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
    flops::add(2ll * n * k * m);
    detail::debug_check_finite(out, "matmul");
    return out;
}

template <class S>
TensorT<S> transpose(const TensorT<S>& a) {
    if (a.rank() != 2) throw std::invalid_argument("transpose: expected rank-2, got " + shape_str(a.shape()));
    const int n = a.dim(0), m = a.dim(1);
    auto out = TensorT<S>::make({m, n}, {a}, [n, m](auto& nd) {
        auto& pa = *nd.parents[0];
        pa.ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                pa.grad[static_cast<std::size_t>(j) * m + i] += nd.grad[static_cast<std::size_t>(i) * n + j];
    });
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
            out.values()[static_cast<std::size_t>(j) * n + i] = a.values()[static_cast<std::size_t>(i) * m + j];
    return out;
}

/// Row-wise softmax of a [N x M] matrix, numerically stable.
template <class S>
TensorT<S> softmax_rows(const TensorT<S>& a) {
    if (a.rank() != 2) throw std::invalid_argument("softmax_rows: expected rank-2");
    const int n = a.dim(0), m = a.dim(1);
    auto out = TensorT<S>::make({n, m}, {a}, [n, m](auto& nd) {
        auto& pa = *nd.parents[0];
        pa.ensure_grad();
        for (int i = 0; i < n; ++i) {
            const S* y = nd.value.data() + static_cast<std::size_t>(i) * m;
            const S* g = nd.grad.data() + static_cast<std::size_t>(i) * m;
            S dot = 0;
            for (int j = 0; j < m; ++j) dot += g[j] * y[j];
            S* px = pa.grad.data() + static_cast<std::size_t>(i) * m;
            for (int j = 0; j < m; ++j) px[j] += y[j] * (g[j] - dot);
        }
    });
    for (int i = 0; i < n; ++i) {
        const S* x = a.values().data() + static_cast<std::size_t>(i) * m;
        S* y = out.values().data() + static_cast<std::size_t>(i) * m;
        S mx = x[0];
        for (int j = 1; j < m; ++j) mx = std::max(mx, x[j]);
        S acc = 0;
        for (int j = 0; j < m; ++j) {
            y[j] = std::exp(x[j] - mx);
            acc += y[j];
        }
        const S inv = S(1) / acc;
        for (int j = 0; j < m; ++j) y[j] *= inv;
    }
    flops::add(5ll * n * m);
    detail::debug_check_finite(out, "softmax_rows");
    return out;
}

// ---------------------------------------------------------------------------
// Sequence ops

/// 1-D convolution with "same" zero padding.
/// input [B x L x Cin], weight [K x Cin x Cout] (K odd), bias [Cout].
/// out[b,l,o] = bias[o] + sum_{k,c} input[b, l + (k - K/2)*dilation, c] * weight[k,c,o]
template <class S>
TensorT<S> conv1d(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& bias, int dilation = 1) {
    if (x.rank() != 3 || w.rank() != 3 || bias.rank() != 1)
        throw std::invalid_argument("conv1d: expected input [BxLxCin], weight [KxCinxCout], bias [Cout]");
    const int B = x.dim(0), L = x.dim(1), Ci = x.dim(2);
    const int K = w.dim(0), Co = w.dim(2);
    if (w.dim(1) != Ci)
        throw std::invalid_argument("conv1d: weight expects " + std::to_string(w.dim(1)) +
                                    " input channels, input has " + std::to_string(Ci));
    if (bias.dim(0) != Co) throw std::invalid_argument("conv1d: bias size does not match output channels");
    if (K % 2 == 0) throw std::invalid_argument("conv1d: kernel size must be odd");
    if (dilation < 1) throw std::invalid_argument("conv1d: dilation must be >= 1");
    const int half = K / 2;

    auto out = TensorT<S>::make({B, L, Co}, {x, w, bias}, [B, L, Ci, K, Co, dilation, half](auto& nd) {
        auto& px = *nd.parents[0];
        auto& pw = *nd.parents[1];
        auto& pb = *nd.parents[2];
        const bool gx = px.requires_grad, gw = pw.requires_grad, gb = pb.requires_grad;
        if (gx) px.ensure_grad();
        if (gw) pw.ensure_grad();
        if (gb) pb.ensure_grad();
        for (int b = 0; b < B; ++b) {
            for (int l = 0; l < L; ++l) {
                const S* grow = nd.grad.data() + (static_cast<std::size_t>(b) * L + l) * Co;
                if (gb)
                    for (int o = 0; o < Co; ++o) pb.grad[static_cast<std::size_t>(o)] += grow[o];
                for (int k = 0; k < K; ++k) {
                    const int src = l + (k - half) * dilation;
                    if (src < 0 || src >= L) continue;
                    const S* xrow = px.value.data() + (static_cast<std::size_t>(b) * L + src) * Ci;
                    for (int c = 0; c < Ci; ++c) {
                        const S* wrow = pw.value.data() + (static_cast<std::size_t>(k) * Ci + c) * Co;
                        if (gw) {
                            S* wg = pw.grad.data() + (static_cast<std::size_t>(k) * Ci + c) * Co;
                            const S xv = xrow[c];
                            for (int o = 0; o < Co; ++o) wg[o] += xv * grow[o];
                        }
                        if (gx) {
                            S acc = 0;
                            for (int o = 0; o < Co; ++o) acc += wrow[o] * grow[o];
                            px.grad[(static_cast<std::size_t>(b) * L + src) * Ci + c] += acc;
                        }
                    }
                }
            }
        }
    });

    auto& ov = out.values();
    for (int b = 0; b < B; ++b)
        for (int l = 0; l < L; ++l) {
            S* orow = ov.data() + (static_cast<std::size_t>(b) * L + l) * Co;
            for (int o = 0; o < Co; ++o) orow[o] = bias.values()[static_cast<std::size_t>(o)];
            for (int k = 0; k < K; ++k) {
                const int src = l + (k - half) * dilation;
                if (src < 0 || src >= L) continue;
                const S* xrow = x.values().data() + (static_cast<std::size_t>(b) * L + src) * Ci;
                for (int c = 0; c < Ci; ++c) {
                    const S xv = xrow[c];
                    if (xv == S(0)) continue;
                    const S* wrow = w.values().data() + (static_cast<std::size_t>(k) * Ci + c) * Co;
                    for (int o = 0; o < Co; ++o) orow[o] += xv * wrow[o];
                }
            }
        }
    flops::add(2ll * B * L * K * Ci * Co);
    detail::debug_check_finite(out, "conv1d");
    return out;
}

/// Layer normalization over the last axis with learnable gain/offset.
template <class S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gain, const TensorT<S>& offset,
                      S eps = S(1e-5)) {
    if (x.rank() < 1) throw std::invalid_argument("layer_norm: scalar input");
    const int d = x.dim(x.rank() - 1);
    if (gain.rank() != 1 || gain.dim(0) != d || offset.rank() != 1 || offset.dim(0) != d)
        throw std::invalid_argument("layer_norm: gain/offset must be [D], D=" + std::to_string(d));
    if (!(eps > S(0))) throw std::invalid_argument("layer_norm: eps must be positive");
    const std::int64_t slices = x.size() / d;

    auto out = TensorT<S>::make(x.shape(), {x, gain, offset}, [d, slices, eps](auto& nd) {
        auto& px = *nd.parents[0];
        auto& pg = *nd.parents[1];
        auto& po = *nd.parents[2];
        const bool gx = px.requires_grad, gg = pg.requires_grad, go = po.requires_grad;
        if (gx) px.ensure_grad();
        if (gg) pg.ensure_grad();
        if (go) po.ensure_grad();
        for (std::int64_t s = 0; s < slices; ++s) {
            const S* xv = px.value.data() + s * d;
            const S* g = nd.grad.data() + s * d;
            S mu = 0;
            for (int j = 0; j < d; ++j) mu += xv[j];
            mu /= static_cast<S>(d);
            S var = 0;
            for (int j = 0; j < d; ++j) var += (xv[j] - mu) * (xv[j] - mu);
            var /= static_cast<S>(d);
            const S istd = S(1) / std::sqrt(var + eps);
            if (gg || go) {
                for (int j = 0; j < d; ++j) {
                    const S xhat = (xv[j] - mu) * istd;
                    if (gg) pg.grad[static_cast<std::size_t>(j)] += g[j] * xhat;
                    if (go) po.grad[static_cast<std::size_t>(j)] += g[j];
                }
            }
            if (gx) {
                // dxhat_j = g_j * gain_j; dx via standard layernorm backward
                S sum_dxhat = 0, sum_dxhat_xhat = 0;
                for (int j = 0; j < d; ++j) {
                    const S xhat = (xv[j] - mu) * istd;
                    const S dxhat = g[j] * pg.value[static_cast<std::size_t>(j)];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
                S* xg = px.grad.data() + s * d;
                for (int j = 0; j < d; ++j) {
                    const S xhat = (xv[j] - mu) * istd;
                    const S dxhat = g[j] * pg.value[static_cast<std::size_t>(j)];
                    xg[j] += istd * (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) / static_cast<S>(d));
                }
            }
        }
    });

    for (std::int64_t s = 0; s < slices; ++s) {
        const S* xv = x.values().data() + s * d;
        S* ov = out.values().data() + s * d;
        S mu = 0;
        for (int j = 0; j < d; ++j) mu += xv[j];
        mu /= static_cast<S>(d);
        S var = 0;
        for (int j = 0; j < d; ++j) var += (xv[j] - mu) * (xv[j] - mu);
        var /= static_cast<S>(d);
        const S istd = S(1) / std::sqrt(var + eps);
        for (int j = 0; j < d; ++j)
            ov[j] = (xv[j] - mu) * istd * gain.values()[static_cast<std::size_t>(j)] +
                    offset.values()[static_cast<std::size_t>(j)];
    }
    flops::add(8ll * x.size());
    detail::debug_check_finite(out, "layer_norm");
    return out;
}

/// Mean over the length axis: [B x L x D] -> [B x D].
template <class S>
TensorT<S> global_avg_pool(const TensorT<S>& x) {
    if (x.rank() != 3) throw std::invalid_argument("global_avg_pool: expected [BxLxD]");
    const int B = x.dim(0), L = x.dim(1), D = x.dim(2);
    if (L < 1) throw std::invalid_argument("global_avg_pool: empty length axis");
    const S inv = S(1) / static_cast<S>(L);
    auto out = TensorT<S>::make({B, D}, {x}, [B, L, D, inv](auto& nd) {
        auto& px = *nd.parents[0];
        px.ensure_grad();
        for (int b = 0; b < B; ++b)
            for (int l = 0; l < L; ++l) {
                S* xg = px.grad.data() + (static_cast<std::size_t>(b) * L + l) * D;
                const S* g = nd.grad.data() + static_cast<std::size_t>(b) * D;
                for (int j = 0; j < D; ++j) xg[j] += g[j] * inv;
            }
    });
    for (int b = 0; b < B; ++b) {
        S* orow = out.values().data() + static_cast<std::size_t>(b) * D;
        for (int l = 0; l < L; ++l) {
            const S* xrow = x.values().data() + (static_cast<std::size_t>(b) * L + l) * D;
            for (int j = 0; j < D; ++j) orow[j] += xrow[j];
        }
        for (int j = 0; j < D; ++j) orow[j] *= inv;
    }
    flops::add(x.size());
    detail::debug_check_finite(out, "global_avg_pool");
    return out;
}

// ---------------------------------------------------------------------------
// Structural ops

/// Slice along the leading axis: [B x ...] -> [...] for one index.
template <class S>
TensorT<S> batch_slice(const TensorT<S>& x, int index) {
    if (x.rank() < 2) throw std::invalid_argument("batch_slice: rank must be >= 2");
    if (index < 0 || index >= x.dim(0)) throw std::out_of_range("batch_slice: index out of range");
    Shape sub(x.shape().begin() + 1, x.shape().end());
    const std::int64_t stride = shape_numel(sub);
    auto out = TensorT<S>::make(sub, {x}, [index, stride](auto& nd) {
        auto& px = *nd.parents[0];
        px.ensure_grad();
        S* xg = px.grad.data() + static_cast<std::size_t>(index) * stride;
        for (std::int64_t i = 0; i < stride; ++i) xg[i] += nd.grad[static_cast<std::size_t>(i)];
    });
    const S* src = x.values().data() + static_cast<std::size_t>(index) * stride;
    std::copy(src, src + stride, out.values().begin());
    return out;
}

/// Stacks equally shaped tensors along a new leading axis.
/// Single-element tensors stack to a rank-1 vector.
template <class S>
TensorT<S> stack(const std::vector<TensorT<S>>& parts) {
    if (parts.empty()) throw std::invalid_argument("stack: empty input");
    const Shape& s0 = parts[0].shape();
    for (const auto& p : parts) detail::check_same_shape(parts[0], p, "stack");
    const std::int64_t stride = shape_numel(s0);
    Shape out_shape;
    if (stride == 1)
        out_shape = {static_cast<int>(parts.size())};
    else {
        out_shape.push_back(static_cast<int>(parts.size()));
        out_shape.insert(out_shape.end(), s0.begin(), s0.end());
        if (out_shape.size() > 3) throw std::invalid_argument("stack: result would exceed rank 3");
    }
    auto out = TensorT<S>::make(out_shape, parts, [stride](auto& nd) {
        for (std::size_t p = 0; p < nd.parents.size(); ++p) {
            auto& par = *nd.parents[p];
            if (!par.requires_grad) continue;
            par.ensure_grad();
            const S* g = nd.grad.data() + p * static_cast<std::size_t>(stride);
            for (std::int64_t i = 0; i < stride; ++i) par.grad[static_cast<std::size_t>(i)] += g[i];
        }
    });
    for (std::size_t p = 0; p < parts.size(); ++p)
        std::copy(parts[p].values().begin(), parts[p].values().end(),
                  out.values().begin() + p * static_cast<std::size_t>(stride));
    return out;
}

/// Column slice of a [N x M] matrix: columns [c0, c1).
template <class S>
TensorT<S> col_slice(const TensorT<S>& x, int c0, int c1) {
    if (x.rank() != 2) throw std::invalid_argument("col_slice: expected rank-2");
    const int n = x.dim(0), m = x.dim(1);
    if (c0 < 0 || c1 > m || c0 >= c1) throw std::out_of_range("col_slice: bad column range");
    const int w = c1 - c0;
    auto out = TensorT<S>::make({n, w}, {x}, [n, m, c0, w](auto& nd) {
        auto& px = *nd.parents[0];
        px.ensure_grad();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < w; ++j)
                px.grad[static_cast<std::size_t>(i) * m + c0 + j] += nd.grad[static_cast<std::size_t>(i) * w + j];
    });
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < w; ++j)
            out.values()[static_cast<std::size_t>(i) * w + j] = x.values()[static_cast<std::size_t>(i) * m + c0 + j];
    return out;
}

/// Concatenates [N x Mi] matrices along columns.
template <class S>
TensorT<S> col_concat(const std::vector<TensorT<S>>& parts) {
    if (parts.empty()) throw std::invalid_argument("col_concat: empty input");
    const int n = parts[0].dim(0);
    int m = 0;
    std::vector<int> widths;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != n) throw std::invalid_argument("col_concat: row counts differ");
        widths.push_back(p.dim(1));
        m += p.dim(1);
    }
    auto out = TensorT<S>::make({n, m}, parts, [n, m, widths](auto& nd) {
        int off = 0;
        for (std::size_t p = 0; p < nd.parents.size(); ++p) {
            auto& par = *nd.parents[p];
            const int w = widths[p];
            if (par.requires_grad) {
                par.ensure_grad();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < w; ++j)
                        par.grad[static_cast<std::size_t>(i) * w + j] +=
                            nd.grad[static_cast<std::size_t>(i) * m + off + j];
            }
            off += w;
        }
    });
    int off = 0;
    for (const auto& p : parts) {
        const int w = p.dim(1);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < w; ++j)
                out.values()[static_cast<std::size_t>(i) * m + off + j] =
                    p.values()[static_cast<std::size_t>(i) * w + j];
        off += w;
    }
    return out;
}

template <class S>
TensorT<S> reshape(const TensorT<S>& x, Shape shape) {
    if (shape_numel(shape) != x.size())
        throw std::invalid_argument("reshape: element count mismatch " + shape_str(x.shape()) + " -> " +
                                    shape_str(shape));
    auto out = TensorT<S>::make(std::move(shape), {x}, [](auto& nd) {
        auto& px = *nd.parents[0];
        px.ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) px.grad[i] += nd.grad[i];
    });
    out.values() = x.values();
    return out;
}

/// Extracts one element as a scalar node (flat index).
template <class S>
TensorT<S> element(const TensorT<S>& x, std::int64_t flat_index) {
    if (flat_index < 0 || flat_index >= x.size()) throw std::out_of_range("element: index out of range");
    auto out = TensorT<S>::make({1}, {x}, [flat_index](auto& nd) {
        auto& px = *nd.parents[0];
        px.ensure_grad();
        px.grad[static_cast<std::size_t>(flat_index)] += nd.grad[0];
    });
    out.values()[0] = x.values()[static_cast<std::size_t>(flat_index)];
    return out;
}

// ---------------------------------------------------------------------------
// Losses

/// Mean of -[w_pos * y * log(sigmoid(z)) + (1-y) * log(1 - sigmoid(z))],
/// evaluated in softplus form so large |z| cannot overflow.
template <class S>
TensorT<S> weighted_bce_with_logits(const TensorT<S>& logits, const std::vector<S>& targets, S pos_weight) {
    if (static_cast<std::int64_t>(targets.size()) != logits.size())
        throw std::invalid_argument("weighted_bce_with_logits: target count " +
                                    std::to_string(targets.size()) + " vs logits " +
                                    std::to_string(logits.size()));
    if (pos_weight < S(1)) throw std::invalid_argument("weighted_bce_with_logits: pos_weight must be >= 1");
    const std::int64_t n = logits.size();
    const S inv = S(1) / static_cast<S>(n);
    auto softplus = [](S t) { return std::log1p(std::exp(-std::abs(t))) + std::max(t, S(0)); };
    auto sgm = [](S z) {
        return z >= S(0) ? S(1) / (S(1) + std::exp(-z)) : std::exp(z) / (S(1) + std::exp(z));
    };

    auto out = TensorT<S>::make({1}, {logits}, [targets, pos_weight, inv, sgm](auto& nd) {
        auto& pz = *nd.parents[0];
        pz.ensure_grad();
        for (std::size_t i = 0; i < pz.value.size(); ++i) {
            const S z = pz.value[i];
            const S y = targets[i];
            // d/dz = -w*y*sigmoid(-z) + (1-y)*sigmoid(z)
            const S g = -pos_weight * y * sgm(-z) + (S(1) - y) * sgm(z);
            pz.grad[i] += nd.grad[0] * g * inv;
        }
    });
    S acc = 0;
    for (std::size_t i = 0; i < logits.values().size(); ++i) {
        const S z = logits.values()[i];
        const S y = targets[i];
        acc += pos_weight * y * softplus(-z) + (S(1) - y) * softplus(z);
    }
    out.values()[0] = acc * inv;
    flops::add(6ll * n);
    detail::debug_check_finite(out, "weighted_bce_with_logits");
    return out;
}

// ---------------------------------------------------------------------------
// Verification

/// Compares an analytic gradient against central finite differences of a
/// scalar function. `eval` must be a pure function of the flat point vector.
/// Returns the worst relative error, denominator max(|analytic|, |numeric|, 1e-8).
template <class S, class Fn>
double finite_diff_check(Fn&& eval, std::vector<S> point, const std::vector<S>& analytic_grad, S step) {
    if (point.size() != analytic_grad.size())
        throw std::invalid_argument("finite_diff_check: gradient size mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < point.size(); ++i) {
        const S orig = point[i];
        point[i] = orig + step;
        const double fp = static_cast<double>(eval(point));
        point[i] = orig - step;
        const double fm = static_cast<double>(eval(point));
        point[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("finite_diff_check: non-finite function value");
        const double numeric = (fp - fm) / (2.0 * static_cast<double>(step));
        const double analytic = static_cast<double>(analytic_grad[i]);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
    return worst;
}

/// Convenience overload: builds the graph via `fn(x)` (x is a leaf with
/// requires_grad), runs backward for the analytic gradient, then compares.
template <class S>
double finite_diff_check(const std::function<TensorT<S>(const TensorT<S>&)>& fn, const TensorT<S>& point,
                         S step) {
    TensorT<S> x = TensorT<S>::from_vector(point.values(), point.shape());
    x.set_requires_grad();
    TensorT<S> loss = fn(x);
    if (loss.size() != 1) throw std::invalid_argument("finite_diff_check: fn must return a scalar");
    loss.backward();
    const std::vector<S> analytic = x.grads();
    auto eval = [&](const std::vector<S>& p) {
        TensorT<S> xp = TensorT<S>::from_vector(p, point.shape());
        return fn(xp).item();
    };
    return finite_diff_check<S>(eval, point.values(), analytic, step);
}

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

}  // namespace circkit
