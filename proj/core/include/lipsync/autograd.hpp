#pragma once

// Reverse-mode autodiff over dense tensors. The graph is a tape of
// shared-ownership nodes; an op records a backward closure only
// when gradients can actually flow, so inference pays nothing for the tape.

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lipsync/tensor.hpp"

namespace lipsync {

namespace detail {
inline thread_local bool grad_enabled = true;
}

struct NoGradGuard {
    NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_mode_enabled() { return detail::grad_enabled; }

template <typename T>
class VarT;

template <typename T>
struct VarNodeT {
    TensorT<T> value;
    TensorT<T> grad;  // empty means zero
    bool requires_grad = false;
    bool needs_grad = false;  // requires_grad or downstream of one
    std::vector<VarT<T>> parents;
    std::function<void(VarNodeT<T>&)> backward_fn;

    void accumulate(const TensorT<T>& g) {
        if (grad.empty()) {
            grad = g;
        } else {
            for (int64_t i = 0; i < grad.numel(); ++i) {
                grad[i] += g[i];
            }
        }
    }
};

template <typename T>
class VarT {
public:
    using Node = VarNodeT<T>;

    VarT() = default;

    explicit VarT(TensorT<T> value, bool requires_grad = false) {
        node_ = std::make_shared<Node>();
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
        node_->needs_grad = requires_grad;
    }

    static VarT param(TensorT<T> value) { return VarT(std::move(value), true); }
    static VarT constant(TensorT<T> value) { return VarT(std::move(value), false); }

    bool defined() const { return node_ != nullptr; }
    const TensorT<T>& value() const { return node_->value; }
    TensorT<T>& value() { return node_->value; }
    const TensorT<T>& grad() const { return node_->grad; }
    TensorT<T> grad_or_zeros() const {
        return node_->grad.empty() ? TensorT<T>::zeros(node_->value.shape()) : node_->grad;
    }
    void clear_grad() { node_->grad = TensorT<T>(); }

    const Shape& shape() const { return node_->value.shape(); }
    int64_t numel() const { return node_->value.numel(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool needs_grad() const { return node_ && node_->needs_grad; }

    std::shared_ptr<Node> node() const { return node_; }

    VarT detach() const { return VarT(node_->value, false); }

    // Reverse pass from a scalar output.
    void backward() const {
        require(numel() == 1, ErrorCode::ShapeMismatch, "backward() requires a scalar output");
        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        topo(node_.get(), seen, order);
        node_->grad = TensorT<T>::full({1}, T(1));
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backward_fn && !n->grad.empty()) {
                n->backward_fn(*n);
            }
        }
    }

private:
    static void topo(Node* n, std::unordered_set<Node*>& seen, std::vector<Node*>& order) {
        if (!n || seen.count(n)) {
            return;
        }
        // Iterative DFS; graphs get deep during long rollouts.
        std::vector<std::pair<Node*, size_t>> stack{{n, 0}};
        seen.insert(n);
        while (!stack.empty()) {
            auto& [cur, idx] = stack.back();
            if (idx < cur->parents.size()) {
                Node* p = cur->parents[idx].node().get();
                ++idx;
                if (p && !seen.count(p)) {
                    seen.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(cur);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node> node_;
};

using Var = VarT<float>;
using VarD = VarT<double>;

namespace ag {

template <typename T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatrixRM<T>>;
template <typename T>
using MapCM = Eigen::Map<const MatrixRM<T>>;

template <typename T>
bool tracing(std::initializer_list<const VarT<T>*> inputs) {
    if (!grad_mode_enabled()) {
        return false;
    }
    for (const VarT<T>* v : inputs) {
        if (v->defined() && v->needs_grad()) {
            return true;
        }
    }
    return false;
}

template <typename T>
VarT<T> make_result(TensorT<T> value, std::vector<VarT<T>> parents,
                    std::function<void(VarNodeT<T>&)> backward) {
    VarT<T> out(std::move(value), false);
    out.node()->needs_grad = true;
    out.node()->parents = std::move(parents);
    out.node()->backward_fn = std::move(backward);
    return out;
}

template <typename T>
VarT<T> add(const VarT<T>& a, const VarT<T>& b) {
    check_same_shape(a.value(), b.value(), "add");
    TensorT<T> out = a.value();
    const TensorT<T>& bv = b.value();
    for (int64_t i = 0; i < out.numel(); ++i) {
        out[i] += bv[i];
    }
    if (!tracing<T>({&a, &b})) {
        return VarT<T>::constant(std::move(out));
    }
    return make_result<T>(std::move(out), {a, b}, [](VarNodeT<T>& n) {
        if (n.parents[0].needs_grad()) {
            n.parents[0].node()->accumulate(n.grad);
        }
        if (n.parents[1].needs_grad()) {
            n.parents[1].node()->accumulate(n.grad);
        }
    });
}

template <typename T>
VarT<T> sub(const VarT<T>& a, const VarT<T>& b) {
    check_same_shape(a.value(), b.value(), "sub");
    TensorT<T> out = a.value();
    const TensorT<T>& bv = b.value();
    for (int64_t i = 0; i < out.numel(); ++i) {
        out[i] -= bv[i];
    }
    if (!tracing<T>({&a, &b})) {
        return VarT<T>::constant(std::move(out));
    }
    return make_result<T>(std::move(out), {a, b}, [](VarNodeT<T>& n) {
        if (n.parents[0].needs_grad()) {
            n.parents[0].node()->accumulate(n.grad);
        }
        if (n.parents[1].needs_grad()) {
            TensorT<T> neg = n.grad;
            for (int64_t i = 0; i < neg.numel(); ++i) {
                neg[i] = -neg[i];
            }
            n.parents[1].node()->accumulate(neg);
        }
    });
}

template <typename T>
VarT<T> mul(const VarT<T>& a, const VarT<T>& b) {
    check_same_shape(a.value(), b.value(), "mul");
    TensorT<T> out = a.value();
    const TensorT<T>& bv = b.value();
    for (int64_t i = 0; i < out.numel(); ++i) {
        out[i] *= bv[i];
    }
    if (!tracing<T>({&a, &b})) {
        return VarT<T>::constant(std::move(out));
    }
    return make_result<T>(std::move(out), {a, b}, [](VarNodeT<T>& n) {
        const TensorT<T>& av = n.parents[0].value();
        const TensorT<T>& bv2 = n.parents[1].value();
        if (n.parents[0].needs_grad()) {
            TensorT<T> g(av.shape());
            for (int64_t i = 0; i < g.numel(); ++i) {
                g[i] = n.grad[i] * bv2[i];
            }
            n.parents[0].node()->accumulate(g);
        }
        if (n.parents[1].needs_grad()) {
            TensorT<T> g(bv2.shape());
            for (int64_t i = 0; i < g.numel(); ++i) {
                g[i] = n.grad[i] * av[i];
            }
            n.parents[1].node()->accumulate(g);
        }
    });
}

template <typename T>
VarT<T> scale(const VarT<T>& a, T s) {
    TensorT<T> out = a.value();
    for (int64_t i = 0; i < out.numel(); ++i) {
        out[i] *= s;
    }
    if (!tracing<T>({&a})) {
        return VarT<T>::constant(std::move(out));
    }
    return make_result<T>(std::move(out), {a}, [s](VarNodeT<T>& n) {
        if (!n.parents[0].needs_grad()) {
            return;
        }
        TensorT<T> g = n.grad;
        for (int64_t i = 0; i < g.numel(); ++i) {
            g[i] *= s;
        }
        n.parents[0].node()->accumulate(g);
    });
}

template <typename T>
VarT<T> add_scalar(const VarT<T>& a, T s) {
    TensorT<T> out = a.value();
    for (int64_t i = 0; i < out.numel(); ++i) {
        out[i] += s;
    }
    if (!tracing<T>({&a})) {
        return VarT<T>::constant(std::move(out));
    }
    return make_result<T>(std::move(out), {a}, [](VarNodeT<T>& n) {
        if (n.parents[0].needs_grad()) {
            n.parents[0].node()->accumulate(n.grad);
        }
    });
}

template <typename T>
VarT<T> silu(const VarT<T>& x) {
    TensorT<T> out(x.shape());
    const TensorT<T>& xv = x.value();
    for (int64_t i = 0; i < out.numel(); ++i) {
        T s = T(1) / (T(1) + std::exp(-xv[i]));
        out[i] = xv[i] * s;
    }
    if (!tracing<T>({&x})) {
        return VarT<T>::constant(std::move(out));
    }
    return make_result<T>(std::move(out), {x}, [](VarNodeT<T>& n) {
        if (!n.parents[0].needs_grad()) {
            return;
        }
        const TensorT<T>& xv = n.parents[0].value();
        TensorT<T> g(xv.shape());
        for (int64_t i = 0; i < g.numel(); ++i) {
            T s = T(1) / (T(1) + std::exp(-xv[i]));
            g[i] = n.grad[i] * (s * (T(1) + xv[i] * (T(1) - s)));
        }
        n.parents[0].node()->accumulate(g);
    });
}

// Softmax over the last dimension.
template <typename T>
VarT<T> softmax_lastdim(const VarT<T>& x) {
    const TensorT<T>& xv = x.value();
    require(xv.dims() >= 1, ErrorCode::ShapeMismatch, "softmax needs at least 1-d input");
    int64_t cols = xv.dim(xv.dims() - 1);
    int64_t rows = xv.numel() / cols;
    TensorT<T> out(xv.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const T* src = xv.data() + r * cols;
        T* dst = out.data() + r * cols;
        T m = src[0];
        for (int64_t c = 1; c < cols; ++c) {
            m = std::max(m, src[c]);
        }
        T denom = T(0);
        for (int64_t c = 0; c < cols; ++c) {
            dst[c] = std::exp(src[c] - m);
            denom += dst[c];
        }
        for (int64_t c = 0; c < cols; ++c) {
            dst[c] /= denom;
        }
    }
    if (!tracing<T>({&x})) {
        return VarT<T>::constant(std::move(out));
    }
    TensorT<T> saved = out;
    return make_result<T>(std::move(out), {x}, [saved, cols, rows](VarNodeT<T>& n) {
        if (!n.parents[0].needs_grad()) {
            return;
        }
        TensorT<T> g(saved.shape());
        for (int64_t r = 0; r < rows; ++r) {
            const T* y = saved.data() + r * cols;
            const T* go = n.grad.data() + r * cols;
            T* gi = g.data() + r * cols;
            T dot = T(0);
            for (int64_t c = 0; c < cols; ++c) {
                dot += go[c] * y[c];
            }
            for (int64_t c = 0; c < cols; ++c) {
                gi[c] = y[c] * (go[c] - dot);
            }
        }
        n.parents[0].node()->accumulate(g);
    });
}

template <typename T>
VarT<T> matmul(const VarT<T>& a, const VarT<T>& b) {
    const TensorT<T>& av = a.value();
    const TensorT<T>& bv = b.value();
    require(av.dims() == 2 && bv.dims() == 2 && av.dim(1) == bv.dim(0), ErrorCode::ShapeMismatch,
            "matmul " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    int64_t m = av.dim(0), k = av.dim(1), n2 = bv.dim(1);
    TensorT<T> out({m, n2});
    MapCM<T> A(av.data(), m, k);
    MapCM<T> B(bv.data(), k, n2);
    MapM<T> C(out.data(), m, n2);
    C.noalias() = A * B;
    if (!tracing<T>({&a, &b})) {
        return VarT<T>::constant(std::move(out));
    }
    return make_result<T>(std::move(out), {a, b}, [m, k, n2](VarNodeT<T>& n) {
        MapCM<T> G(n.grad.data(), m, n2);
        if (n.parents[0].needs_grad()) {
            TensorT<T> ga({m, k});
            MapCM<T> B(n.parents[1].value().data(), k, n2);
            MapM<T> GA(ga.data(), m, k);
            GA.noalias() = G * B.transpose();
            n.parents[0].node()->accumulate(ga);
        }
        if (n.parents[1].needs_grad()) {
            TensorT<T> gb({k, n2});
            MapCM<T> A(n.parents[0].value().data(), m, k);
            MapM<T> GB(gb.data(), k, n2);
            GB.noalias() = A.transpose() * G;
            n.parents[1].node()->accumulate(gb);
        }
    });
}

// Batched matmul: [B, M, K] x [B, K, N] -> [B, M, N].
template <typename T>
VarT<T> bmm(const VarT<T>& a, const VarT<T>& b) {
    const TensorT<T>& av = a.value();
    const TensorT<T>& bv = b.value();
    require(av.dims() == 3 && bv.dims() == 3 && av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(1),
            ErrorCode::ShapeMismatch,
            "bmm " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    int64_t bs = av.dim(0), m = av.dim(1), k = av.dim(2), n2 = bv.dim(2);
    TensorT<T> out({bs, m, n2});
    for (int64_t i = 0; i < bs; ++i) {
        MapCM<T> A(av.data() + i * m * k, m, k);
        MapCM<T> B(bv.data() + i * k * n2, k, n2);
        MapM<T> C(out.data() + i * m * n2, m, n2);
        C.noalias() = A * B;
    }
    if (!tracing<T>({&a, &b})) {
        return VarT<T>::constant(std::move(out));
    }
    return make_result<T>(std::move(out), {a, b}, [bs, m, k, n2](VarNodeT<T>& n) {
        if (n.parents[0].needs_grad()) {
            TensorT<T> ga({bs, m, k});
            for (int64_t i = 0; i < bs; ++i) {
                MapCM<T> G(n.grad.data() + i * m * n2, m, n2);
                MapCM<T> B(n.parents[1].value().data() + i * k * n2, k, n2);
                MapM<T> GA(ga.data() + i * m * k, m, k);
                GA.noalias() = G * B.transpose();
            }
            n.parents[0].node()->accumulate(ga);
        }
        if (n.parents[1].needs_grad()) {
            TensorT<T> gb({bs, k, n2});
            for (int64_t i = 0; i < bs; ++i) {
                MapCM<T> G(n.grad.data() + i * m * n2, m, n2);
                MapCM<T> A(n.parents[0].value().data() + i * m * k, m, k);
                MapM<T> GB(gb.data() + i * k * n2, k, n2);
                GB.noalias() = A.transpose() * G;
            }
            n.parents[1].node()->accumulate(gb);
        }
    });
}

template <typename T>
VarT<T> reshape(const VarT<T>& x, Shape shape) {
    TensorT<T> out = x.value().reshaped(shape);
    if (!tracing<T>({&x})) {
        return VarT<T>::constant(std::move(out));
    }
    Shape orig = x.shape();
    return make_result<T>(std::move(out), {x}, [orig](VarNodeT<T>& n) {
        if (n.parents[0].needs_grad()) {
            n.parents[0].node()->accumulate(n.grad.reshaped(orig));
        }
    });
}

namespace detail_perm {

template <typename T>
TensorT<T> apply_permute(const TensorT<T>& x, const std::vector<int>& perm) {
    int nd = x.dims();
    Shape out_shape(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) {
        out_shape[static_cast<size_t>(i)] = x.dim(perm[static_cast<size_t>(i)]);
    }
    TensorT<T> out(out_shape);
    std::vector<int64_t> in_strides(static_cast<size_t>(nd), 1);
    for (int i = nd - 2; i >= 0; --i) {
        in_strides[static_cast<size_t>(i)] =
            in_strides[static_cast<size_t>(i + 1)] * x.dim(i + 1);
    }
    std::vector<int64_t> step(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) {
        step[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    }
    std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
    const T* src = x.data();
    T* dst = out.data();
    int64_t total = x.numel();
    int64_t src_off = 0;
    for (int64_t flat = 0; flat < total; ++flat) {
        dst[flat] = src[src_off];
        for (int d = nd - 1; d >= 0; --d) {
            auto ud = static_cast<size_t>(d);
            if (++idx[ud] < out_shape[ud]) {
                src_off += step[ud];
                break;
            }
            idx[ud] = 0;
            src_off -= step[ud] * (out_shape[ud] - 1);
        }
    }
    return out;
}

inline std::vector<int> invert_perm(const std::vector<int>& perm) {
    std::vector<int> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) {
        inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
    }
    return inv;
}

}  // namespace detail_perm

template <typename T>
VarT<T> permute(const VarT<T>& x, std::vector<int> perm) {
    require(static_cast<int>(perm.size()) == x.value().dims(), ErrorCode::ShapeMismatch,
            "permute rank mismatch");
    TensorT<T> out = detail_perm::apply_permute(x.value(), perm);
    if (!tracing<T>({&x})) {
        return VarT<T>::constant(std::move(out));
    }
    return make_result<T>(std::move(out), {x}, [perm](VarNodeT<T>& n) {
        if (n.parents[0].needs_grad()) {
            n.parents[0].node()->accumulate(
                detail_perm::apply_permute(n.grad, detail_perm::invert_perm(perm)));
        }
    });
}

template <typename T>
VarT<T> concat(const std::vector<VarT<T>>& xs, int dim) {
    require(!xs.empty(), ErrorCode::ShapeMismatch, "concat of nothing");
    const Shape& s0 = xs[0].shape();
    int nd = static_cast<int>(s0.size());
    require(dim >= 0 && dim < nd, ErrorCode::ShapeMismatch, "concat dim out of range");
    int64_t total_dim = 0;
    for (const auto& x : xs) {
        require(x.value().dims() == nd, ErrorCode::ShapeMismatch, "concat rank mismatch");
        for (int i = 0; i < nd; ++i) {
            require(i == dim || x.shape()[static_cast<size_t>(i)] == s0[static_cast<size_t>(i)],
                    ErrorCode::ShapeMismatch, "concat shape mismatch");
        }
        total_dim += x.shape()[static_cast<size_t>(dim)];
    }
    Shape out_shape = s0;
    out_shape[static_cast<size_t>(dim)] = total_dim;
    TensorT<T> out(out_shape);
    int64_t outer = 1;
    for (int i = 0; i < dim; ++i) {
        outer *= s0[static_cast<size_t>(i)];
    }
    int64_t inner = 1;
    for (int i = dim + 1; i < nd; ++i) {
        inner *= s0[static_cast<size_t>(i)];
    }
    int64_t out_row = total_dim * inner;
    int64_t off = 0;
    std::vector<int64_t> offsets;
    for (const auto& x : xs) {
        offsets.push_back(off);
        int64_t d = x.shape()[static_cast<size_t>(dim)];
        for (int64_t o = 0; o < outer; ++o) {
            std::copy(x.value().data() + o * d * inner, x.value().data() + (o + 1) * d * inner,
                      out.data() + o * out_row + off * inner);
        }
        off += d;
    }
    bool trace = false;
    if (grad_mode_enabled()) {
        for (const auto& x : xs) {
            trace = trace || x.needs_grad();
        }
    }
    if (!trace) {
        return VarT<T>::constant(std::move(out));
    }
    std::vector<VarT<T>> parents = xs;
    return make_result<T>(std::move(out), std::move(parents),
                          [dim, outer, inner, out_row, offsets](VarNodeT<T>& n) {
                              for (size_t pi = 0; pi < n.parents.size(); ++pi) {
                                  if (!n.parents[pi].needs_grad()) {
                                      continue;
                                  }
                                  int64_t d = n.parents[pi].shape()[static_cast<size_t>(dim)];
                                  TensorT<T> g(n.parents[pi].shape());
                                  for (int64_t o = 0; o < outer; ++o) {
                                      std::copy(n.grad.data() + o * out_row + offsets[pi] * inner,
                                                n.grad.data() + o * out_row + (offsets[pi] + d) * inner,
                                                g.data() + o * d * inner);
                                  }
                                  n.parents[pi].node()->accumulate(g);
                              }
                          });
}

template <typename T>
VarT<T> slice(const VarT<T>& x, int dim, int64_t start, int64_t len) {
    const Shape& s = x.shape();
    int nd = static_cast<int>(s.size());
    require(dim >= 0 && dim < nd, ErrorCode::ShapeMismatch, "slice dim out of range");
    require(start >= 0 && len >= 0 && start + len <= s[static_cast<size_t>(dim)],
            ErrorCode::ShapeMismatch, "slice out of bounds");
    Shape out_shape = s;
    out_shape[static_cast<size_t>(dim)] = len;
    TensorT<T> out(out_shape);
    int64_t outer = 1;
    for (int i = 0; i < dim; ++i) {
        outer *= s[static_cast<size_t>(i)];
    }
    int64_t inner = 1;
    for (int i = dim + 1; i < nd; ++i) {
        inner *= s[static_cast<size_t>(i)];
    }
    int64_t in_row = s[static_cast<size_t>(dim)] * inner;
    for (int64_t o = 0; o < outer; ++o) {
        std::copy(x.value().data() + o * in_row + start * inner,
                  x.value().data() + o * in_row + (start + len) * inner,
                  out.data() + o * len * inner);
    }
    if (!tracing<T>({&x})) {
        return VarT<T>::constant(std::move(out));
    }
    Shape in_shape = s;
    return make_result<T>(std::move(out), {x},
                          [in_shape, dim, start, len, outer, inner, in_row](VarNodeT<T>& n) {
                              if (!n.parents[0].needs_grad()) {
                                  return;
                              }
                              TensorT<T> g(in_shape);
                              for (int64_t o = 0; o < outer; ++o) {
                                  std::copy(n.grad.data() + o * len * inner,
                                            n.grad.data() + (o + 1) * len * inner,
                                            g.data() + o * in_row + start * inner);
                              }
                              n.parents[0].node()->accumulate(g);
                          });
}

template <typename T>
VarT<T> mean_all(const VarT<T>& x) {
    // Double accumulation keeps scalar losses stable regardless of T.
    double acc = x.value().sum();
    int64_t n_el = x.numel();
    TensorT<T> out({1});
    out[0] = static_cast<T>(acc / static_cast<double>(n_el));
    if (!tracing<T>({&x})) {
        return VarT<T>::constant(std::move(out));
    }
    return make_result<T>(std::move(out), {x}, [n_el](VarNodeT<T>& n) {
        if (!n.parents[0].needs_grad()) {
            return;
        }
        T g = n.grad[0] / static_cast<T>(n_el);
        n.parents[0].node()->accumulate(TensorT<T>::full(n.parents[0].shape(), g));
    });
}

template <typename T>
VarT<T> sum_all(const VarT<T>& x) {
    TensorT<T> out({1});
    out[0] = static_cast<T>(x.value().sum());
    if (!tracing<T>({&x})) {
        return VarT<T>::constant(std::move(out));
    }
    return make_result<T>(std::move(out), {x}, [](VarNodeT<T>& n) {
        if (!n.parents[0].needs_grad()) {
            return;
        }
        n.parents[0].node()->accumulate(TensorT<T>::full(n.parents[0].shape(), n.grad[0]));
    });
}

// x: [R, C] plus bias [C] broadcast over rows.
template <typename T>
VarT<T> add_row_bias(const VarT<T>& x, const VarT<T>& bias) {
    const TensorT<T>& xv = x.value();
    require(xv.dims() == 2 && bias.value().dims() == 1 && bias.value().dim(0) == xv.dim(1),
            ErrorCode::ShapeMismatch, "add_row_bias shapes");
    int64_t rows = xv.dim(0), cols = xv.dim(1);
    TensorT<T> out = xv;
    for (int64_t r = 0; r < rows; ++r) {
        T* p = out.data() + r * cols;
        for (int64_t c = 0; c < cols; ++c) {
            p[c] += bias.value()[c];
        }
    }
    if (!tracing<T>({&x, &bias})) {
        return VarT<T>::constant(std::move(out));
    }
    return make_result<T>(std::move(out), {x, bias}, [rows, cols](VarNodeT<T>& n) {
        if (n.parents[0].needs_grad()) {
            n.parents[0].node()->accumulate(n.grad);
        }
        if (n.parents[1].needs_grad()) {
            TensorT<T> gb({cols});
            for (int64_t r = 0; r < rows; ++r) {
                const T* p = n.grad.data() + r * cols;
                for (int64_t c = 0; c < cols; ++c) {
                    gb[c] += p[c];
                }
            }
            n.parents[1].node()->accumulate(gb);
        }
    });
}

// x: [N, C, H, W] plus bias [C] broadcast over N, H, W.
template <typename T>
VarT<T> add_channel_bias(const VarT<T>& x, const VarT<T>& bias) {
    const TensorT<T>& xv = x.value();
    require(xv.dims() == 4 && bias.value().dims() == 1 && bias.value().dim(0) == xv.dim(1),
            ErrorCode::ShapeMismatch, "add_channel_bias shapes");
    int64_t n_b = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
    TensorT<T> out = xv;
    for (int64_t b = 0; b < n_b; ++b) {
        for (int64_t ch = 0; ch < c; ++ch) {
            T bv = bias.value()[ch];
            T* p = out.data() + (b * c + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) {
                p[i] += bv;
            }
        }
    }
    if (!tracing<T>({&x, &bias})) {
        return VarT<T>::constant(std::move(out));
    }
    return make_result<T>(std::move(out), {x, bias}, [n_b, c, hw](VarNodeT<T>& n) {
        if (n.parents[0].needs_grad()) {
            n.parents[0].node()->accumulate(n.grad);
        }
        if (n.parents[1].needs_grad()) {
            TensorT<T> gb({c});
            for (int64_t b = 0; b < n_b; ++b) {
                for (int64_t ch = 0; ch < c; ++ch) {
                    const T* p = n.grad.data() + (b * c + ch) * hw;
                    double acc = 0.0;
                    for (int64_t i = 0; i < hw; ++i) {
                        acc += static_cast<double>(p[i]);
                    }
                    gb[ch] += static_cast<T>(acc);
                }
            }
            n.parents[1].node()->accumulate(gb);
        }
    });
}

// x: [F, C, H, W] plus a per-frame-shared residual [C, H, W].
template <typename T>
VarT<T> add_frame_broadcast(const VarT<T>& x, const VarT<T>& r) {
    const TensorT<T>& xv = x.value();
    const TensorT<T>& rv = r.value();
    require(xv.dims() == 4 && rv.dims() == 3 && rv.dim(0) == xv.dim(1) && rv.dim(1) == xv.dim(2) &&
                rv.dim(2) == xv.dim(3),
            ErrorCode::ShapeMismatch, "add_frame_broadcast shapes");
    int64_t f = xv.dim(0), chw = xv.numel() / f;
    TensorT<T> out = xv;
    for (int64_t i = 0; i < f; ++i) {
        T* p = out.data() + i * chw;
        for (int64_t j = 0; j < chw; ++j) {
            p[j] += rv[j];
        }
    }
    if (!tracing<T>({&x, &r})) {
        return VarT<T>::constant(std::move(out));
    }
    return make_result<T>(std::move(out), {x, r}, [f, chw](VarNodeT<T>& n) {
        if (n.parents[0].needs_grad()) {
            n.parents[0].node()->accumulate(n.grad);
        }
        if (n.parents[1].needs_grad()) {
            TensorT<T> gr(n.parents[1].shape());
            for (int64_t i = 0; i < f; ++i) {
                const T* p = n.grad.data() + i * chw;
                for (int64_t j = 0; j < chw; ++j) {
                    gr[j] += p[j];
                }
            }
            n.parents[1].node()->accumulate(gr);
        }
    });
}

// GroupNorm over [N, C, H, W]; affine params gamma/beta are [C].
template <typename T>
VarT<T> group_norm(const VarT<T>& x, int groups, const VarT<T>& gamma, const VarT<T>& beta,
                   T eps = T(1e-5)) {
    const TensorT<T>& xv = x.value();
    require(xv.dims() == 4, ErrorCode::ShapeMismatch, "group_norm expects [N,C,H,W]");
    int64_t n_b = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    require(groups > 0 && c % groups == 0, ErrorCode::ConfigMismatch,
            "group_norm: channels not divisible by groups");
    require(gamma.value().numel() == c && beta.value().numel() == c, ErrorCode::ShapeMismatch,
            "group_norm affine params");
    int64_t cg = c / groups;
    int64_t m = cg * h * w;  // elements per (sample, group)
    TensorT<T> out(xv.shape());
    TensorT<T> xhat(xv.shape());
    std::vector<T> inv_std(static_cast<size_t>(n_b * groups));
    for (int64_t b = 0; b < n_b; ++b) {
        for (int64_t g = 0; g < groups; ++g) {
            const T* src = xv.data() + (b * c + g * cg) * h * w;
            double mu = 0.0;
            for (int64_t i = 0; i < m; ++i) {
                mu += static_cast<double>(src[i]);
            }
            mu /= static_cast<double>(m);
            double var = 0.0;
            for (int64_t i = 0; i < m; ++i) {
                double d = static_cast<double>(src[i]) - mu;
                var += d * d;
            }
            var /= static_cast<double>(m);
            T istd = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
            inv_std[static_cast<size_t>(b * groups + g)] = istd;
            T* xh = xhat.data() + (b * c + g * cg) * h * w;
            T* dst = out.data() + (b * c + g * cg) * h * w;
            for (int64_t i = 0; i < m; ++i) {
                xh[i] = (src[i] - static_cast<T>(mu)) * istd;
            }
            for (int64_t ch = 0; ch < cg; ++ch) {
                T ga = gamma.value()[g * cg + ch];
                T be = beta.value()[g * cg + ch];
                for (int64_t i = 0; i < h * w; ++i) {
                    dst[ch * h * w + i] = ga * xh[ch * h * w + i] + be;
                }
            }
        }
    }
    if (!tracing<T>({&x, &gamma, &beta})) {
        return VarT<T>::constant(std::move(out));
    }
    return make_result<T>(
        std::move(out), {x, gamma, beta},
        [xhat, inv_std, n_b, c, cg, h, w, groups, m](VarNodeT<T>& n) {
            const TensorT<T>& go = n.grad;
            const TensorT<T>& gam = n.parents[1].value();
            if (n.parents[1].needs_grad() || n.parents[2].needs_grad()) {
                TensorT<T> dgamma({c});
                TensorT<T> dbeta({c});
                for (int64_t b = 0; b < n_b; ++b) {
                    for (int64_t ch = 0; ch < c; ++ch) {
                        const T* g_p = go.data() + (b * c + ch) * h * w;
                        const T* xh_p = xhat.data() + (b * c + ch) * h * w;
                        double sg = 0.0, sgx = 0.0;
                        for (int64_t i = 0; i < h * w; ++i) {
                            sg += static_cast<double>(g_p[i]);
                            sgx += static_cast<double>(g_p[i]) * static_cast<double>(xh_p[i]);
                        }
                        dbeta[ch] += static_cast<T>(sg);
                        dgamma[ch] += static_cast<T>(sgx);
                    }
                }
                if (n.parents[1].needs_grad()) {
                    n.parents[1].node()->accumulate(dgamma);
                }
                if (n.parents[2].needs_grad()) {
                    n.parents[2].node()->accumulate(dbeta);
                }
            }
            if (!n.parents[0].needs_grad()) {
                return;
            }
            TensorT<T> gx(n.parents[0].shape());
            for (int64_t b = 0; b < n_b; ++b) {
                for (int64_t g = 0; g < groups; ++g) {
                    int64_t base = (b * c + g * cg) * h * w;
                    T istd = inv_std[static_cast<size_t>(b * groups + g)];
                    // dxhat = gamma * dy; dx = istd*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                    double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                    for (int64_t ch = 0; ch < cg; ++ch) {
                        T ga = gam[g * cg + ch];
                        const T* g_p = go.data() + base + ch * h * w;
                        const T* xh_p = xhat.data() + base + ch * h * w;
                        for (int64_t i = 0; i < h * w; ++i) {
                            double dxh = static_cast<double>(ga) * static_cast<double>(g_p[i]);
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * static_cast<double>(xh_p[i]);
                        }
                    }
                    mean_dxh /= static_cast<double>(m);
                    mean_dxh_xh /= static_cast<double>(m);
                    for (int64_t ch = 0; ch < cg; ++ch) {
                        T ga = gam[g * cg + ch];
                        const T* g_p = go.data() + base + ch * h * w;
                        const T* xh_p = xhat.data() + base + ch * h * w;
                        T* gx_p = gx.data() + base + ch * h * w;
                        for (int64_t i = 0; i < h * w; ++i) {
                            double dxh = static_cast<double>(ga) * static_cast<double>(g_p[i]);
                            gx_p[i] = static_cast<T>(
                                static_cast<double>(istd) *
                                (dxh - mean_dxh - static_cast<double>(xh_p[i]) * mean_dxh_xh));
                        }
                    }
                }
            }
            n.parents[0].node()->accumulate(gx);
        });
}

// LayerNorm over the last dimension; gamma/beta are [D].
template <typename T>
VarT<T> layer_norm(const VarT<T>& x, const VarT<T>& gamma, const VarT<T>& beta, T eps = T(1e-5)) {
    const TensorT<T>& xv = x.value();
    int64_t d = xv.dim(xv.dims() - 1);
    require(gamma.value().numel() == d && beta.value().numel() == d, ErrorCode::ShapeMismatch,
            "layer_norm affine params");
    int64_t rows = xv.numel() / d;
    TensorT<T> out(xv.shape());
    TensorT<T> xhat(xv.shape());
    std::vector<T> inv_std(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const T* src = xv.data() + r * d;
        double mu = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            mu += static_cast<double>(src[i]);
        }
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            double dv = static_cast<double>(src[i]) - mu;
            var += dv * dv;
        }
        var /= static_cast<double>(d);
        T istd = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        inv_std[static_cast<size_t>(r)] = istd;
        T* xh = xhat.data() + r * d;
        T* dst = out.data() + r * d;
        for (int64_t i = 0; i < d; ++i) {
            xh[i] = (src[i] - static_cast<T>(mu)) * istd;
            dst[i] = gamma.value()[i] * xh[i] + beta.value()[i];
        }
    }
    if (!tracing<T>({&x, &gamma, &beta})) {
        return VarT<T>::constant(std::move(out));
    }
    return make_result<T>(
        std::move(out), {x, gamma, beta}, [xhat, inv_std, rows, d](VarNodeT<T>& n) {
            const TensorT<T>& go = n.grad;
            const TensorT<T>& gam = n.parents[1].value();
            if (n.parents[1].needs_grad() || n.parents[2].needs_grad()) {
                TensorT<T> dgamma({d});
                TensorT<T> dbeta({d});
                for (int64_t r = 0; r < rows; ++r) {
                    const T* g_p = go.data() + r * d;
                    const T* xh_p = xhat.data() + r * d;
                    for (int64_t i = 0; i < d; ++i) {
                        dgamma[i] += g_p[i] * xh_p[i];
                        dbeta[i] += g_p[i];
                    }
                }
                if (n.parents[1].needs_grad()) {
                    n.parents[1].node()->accumulate(dgamma);
                }
                if (n.parents[2].needs_grad()) {
                    n.parents[2].node()->accumulate(dbeta);
                }
            }
            if (!n.parents[0].needs_grad()) {
                return;
            }
            TensorT<T> gx(n.parents[0].shape());
            for (int64_t r = 0; r < rows; ++r) {
                const T* g_p = go.data() + r * d;
                const T* xh_p = xhat.data() + r * d;
                T* gx_p = gx.data() + r * d;
                double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                for (int64_t i = 0; i < d; ++i) {
                    double dxh = static_cast<double>(gam[i]) * static_cast<double>(g_p[i]);
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * static_cast<double>(xh_p[i]);
                }
                mean_dxh /= static_cast<double>(d);
                mean_dxh_xh /= static_cast<double>(d);
                T istd = inv_std[static_cast<size_t>(r)];
                for (int64_t i = 0; i < d; ++i) {
                    double dxh = static_cast<double>(gam[i]) * static_cast<double>(g_p[i]);
                    gx_p[i] = static_cast<T>(static_cast<double>(istd) *
                                             (dxh - mean_dxh -
                                              static_cast<double>(xh_p[i]) * mean_dxh_xh));
                }
            }
            n.parents[0].node()->accumulate(gx);
        });
}

namespace detail_conv {

template <typename T>
void im2col(const T* src, int64_t c_in, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t oh, int64_t ow, T* col) {
    for (int64_t ci = 0; ci < c_in; ++ci) {
        for (int64_t ki = 0; ki < kh; ++ki) {
            for (int64_t kj = 0; kj < kw; ++kj) {
                T* row = col + ((ci * kh + ki) * kw + kj) * oh * ow;
                for (int64_t oy = 0; oy < oh; ++oy) {
                    int64_t iy = oy * stride + ki - pad;
                    if (iy < 0 || iy >= h) {
                        std::fill(row + oy * ow, row + (oy + 1) * ow, T(0));
                        continue;
                    }
                    for (int64_t ox = 0; ox < ow; ++ox) {
                        int64_t ix = ox * stride + kj - pad;
                        row[oy * ow + ox] = (ix < 0 || ix >= w) ? T(0) : src[(ci * h + iy) * w + ix];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_accumulate(const T* col, int64_t c_in, int64_t h, int64_t w, int64_t kh, int64_t kw,
                       int64_t stride, int64_t pad, int64_t oh, int64_t ow, T* dst) {
    for (int64_t ci = 0; ci < c_in; ++ci) {
        for (int64_t ki = 0; ki < kh; ++ki) {
            for (int64_t kj = 0; kj < kw; ++kj) {
                const T* row = col + ((ci * kh + ki) * kw + kj) * oh * ow;
                for (int64_t oy = 0; oy < oh; ++oy) {
                    int64_t iy = oy * stride + ki - pad;
                    if (iy < 0 || iy >= h) {
                        continue;
                    }
                    for (int64_t ox = 0; ox < ow; ++ox) {
                        int64_t ix = ox * stride + kj - pad;
                        if (ix >= 0 && ix < w) {
                            dst[(ci * h + iy) * w + ix] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail_conv

// conv2d: x [N, Cin, H, W], w [Cout, Cin, kh, kw], optional bias [Cout].
template <typename T>
VarT<T> conv2d(const VarT<T>& x, const VarT<T>& w, const VarT<T>& bias, int64_t stride,
               int64_t pad) {
    const TensorT<T>& xv = x.value();
    const TensorT<T>& wv = w.value();
    require(xv.dims() == 4 && wv.dims() == 4, ErrorCode::ShapeMismatch, "conv2d rank");
    require(xv.dim(1) == wv.dim(1), ErrorCode::ShapeMismatch,
            "conv2d channels: input " + shape_str(xv.shape()) + " weight " + shape_str(wv.shape()));
    int64_t n_b = xv.dim(0), c_in = xv.dim(1), h = xv.dim(2), w_in = xv.dim(3);
    int64_t c_out = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    bool has_bias = bias.defined();
    if (has_bias) {
        require(bias.value().numel() == c_out, ErrorCode::ShapeMismatch, "conv2d bias");
    }
    int64_t oh = (h + 2 * pad - kh) / stride + 1;
    int64_t ow = (w_in + 2 * pad - kw) / stride + 1;
    require(oh >= 1 && ow >= 1, ErrorCode::ShapeMismatch, "conv2d output would be empty");
    int64_t ckk = c_in * kh * kw;
    TensorT<T> out({n_b, c_out, oh, ow});
    std::vector<T> col(static_cast<size_t>(ckk * oh * ow));
    for (int64_t b = 0; b < n_b; ++b) {
        detail_conv::im2col(xv.data() + b * c_in * h * w_in, c_in, h, w_in, kh, kw, stride, pad, oh,
                            ow, col.data());
        MapCM<T> W(wv.data(), c_out, ckk);
        MapCM<T> C(col.data(), ckk, oh * ow);
        MapM<T> O(out.data() + b * c_out * oh * ow, c_out, oh * ow);
        O.noalias() = W * C;
        if (has_bias) {
            for (int64_t co = 0; co < c_out; ++co) {
                T bv = bias.value()[co];
                T* p = out.data() + (b * c_out + co) * oh * ow;
                for (int64_t i = 0; i < oh * ow; ++i) {
                    p[i] += bv;
                }
            }
        }
    }
    bool trace = grad_mode_enabled() &&
                 (x.needs_grad() || w.needs_grad() || (has_bias && bias.needs_grad()));
    if (!trace) {
        return VarT<T>::constant(std::move(out));
    }
    std::vector<VarT<T>> parents = {x, w};
    if (has_bias) {
        parents.push_back(bias);
    }
    return make_result<T>(
        std::move(out), std::move(parents),
        [n_b, c_in, h, w_in, c_out, kh, kw, stride, pad, oh, ow, ckk, has_bias](VarNodeT<T>& n) {
            const TensorT<T>& xv2 = n.parents[0].value();
            const TensorT<T>& wv2 = n.parents[1].value();
            bool need_x = n.parents[0].needs_grad();
            bool need_w = n.parents[1].needs_grad();
            bool need_b = has_bias && n.parents[2].needs_grad();
            TensorT<T> gx = need_x ? TensorT<T>(xv2.shape()) : TensorT<T>();
            TensorT<T> gw = need_w ? TensorT<T>(wv2.shape()) : TensorT<T>();
            TensorT<T> gb = need_b ? TensorT<T>({c_out}) : TensorT<T>();
            std::vector<T> col(static_cast<size_t>(ckk * oh * ow));
            std::vector<T> gcol(static_cast<size_t>(ckk * oh * ow));
            for (int64_t b = 0; b < n_b; ++b) {
                MapCM<T> G(n.grad.data() + b * c_out * oh * ow, c_out, oh * ow);
                if (need_w) {
                    detail_conv::im2col(xv2.data() + b * c_in * h * w_in, c_in, h, w_in, kh, kw,
                                        stride, pad, oh, ow, col.data());
                    MapCM<T> C(col.data(), ckk, oh * ow);
                    MapM<T> GW(gw.data(), c_out, ckk);
                    GW.noalias() += G * C.transpose();
                }
                if (need_x) {
                    MapCM<T> W(wv2.data(), c_out, ckk);
                    MapM<T> GC(gcol.data(), ckk, oh * ow);
                    GC.noalias() = W.transpose() * G;
                    detail_conv::col2im_accumulate(gcol.data(), c_in, h, w_in, kh, kw, stride, pad,
                                                   oh, ow, gx.data() + b * c_in * h * w_in);
                }
                if (need_b) {
                    for (int64_t co = 0; co < c_out; ++co) {
                        const T* p = n.grad.data() + (b * c_out + co) * oh * ow;
                        double acc = 0.0;
                        for (int64_t i = 0; i < oh * ow; ++i) {
                            acc += static_cast<double>(p[i]);
                        }
                        gb[co] += static_cast<T>(acc);
                    }
                }
            }
            if (need_x) {
                n.parents[0].node()->accumulate(gx);
            }
            if (need_w) {
                n.parents[1].node()->accumulate(gw);
            }
            if (need_b) {
                n.parents[2].node()->accumulate(gb);
            }
        });
}

template <typename T>
VarT<T> upsample_nearest2x(const VarT<T>& x) {
    const TensorT<T>& xv = x.value();
    require(xv.dims() == 4, ErrorCode::ShapeMismatch, "upsample expects [N,C,H,W]");
    int64_t n_b = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    TensorT<T> out({n_b, c, h * 2, w * 2});
    for (int64_t bc = 0; bc < n_b * c; ++bc) {
        const T* src = xv.data() + bc * h * w;
        T* dst = out.data() + bc * h * w * 4;
        for (int64_t y = 0; y < h * 2; ++y) {
            for (int64_t x2 = 0; x2 < w * 2; ++x2) {
                dst[y * w * 2 + x2] = src[(y / 2) * w + (x2 / 2)];
            }
        }
    }
    if (!tracing<T>({&x})) {
        return VarT<T>::constant(std::move(out));
    }
    return make_result<T>(std::move(out), {x}, [n_b, c, h, w](VarNodeT<T>& n) {
        if (!n.parents[0].needs_grad()) {
            return;
        }
        TensorT<T> g({n_b, c, h, w});
        for (int64_t bc = 0; bc < n_b * c; ++bc) {
            const T* src = n.grad.data() + bc * h * w * 4;
            T* dst = g.data() + bc * h * w;
            for (int64_t y = 0; y < h * 2; ++y) {
                for (int64_t x2 = 0; x2 < w * 2; ++x2) {
                    dst[(y / 2) * w + (x2 / 2)] += src[y * w * 2 + x2];
                }
            }
        }
        n.parents[0].node()->accumulate(g);
    });
}

namespace detail_shuffle {

// [N, C*s*s, H, W] <-> [N, C, H*s, W*s]; to_space=true shuffles depth to space.
template <typename T>
TensorT<T> shuffle(const TensorT<T>& x, int64_t s, bool to_space) {
    int64_t n_b = x.dim(0);
    if (to_space) {
        int64_t c = x.dim(1) / (s * s), h = x.dim(2), w = x.dim(3);
        TensorT<T> out({n_b, c, h * s, w * s});
        for (int64_t b = 0; b < n_b; ++b) {
            for (int64_t ch = 0; ch < c; ++ch) {
                for (int64_t dy = 0; dy < s; ++dy) {
                    for (int64_t dx = 0; dx < s; ++dx) {
                        int64_t cin = ch * s * s + dy * s + dx;
                        for (int64_t y = 0; y < h; ++y) {
                            for (int64_t x2 = 0; x2 < w; ++x2) {
                                out.at4(b, ch, y * s + dy, x2 * s + dx) = x.at4(b, cin, y, x2);
                            }
                        }
                    }
                }
            }
        }
        return out;
    }
    int64_t c = x.dim(1), hs = x.dim(2), ws = x.dim(3);
    int64_t h = hs / s, w = ws / s;
    TensorT<T> out({n_b, c * s * s, h, w});
    for (int64_t b = 0; b < n_b; ++b) {
        for (int64_t ch = 0; ch < c; ++ch) {
            for (int64_t dy = 0; dy < s; ++dy) {
                for (int64_t dx = 0; dx < s; ++dx) {
                    int64_t cout = ch * s * s + dy * s + dx;
                    for (int64_t y = 0; y < h; ++y) {
                        for (int64_t x2 = 0; x2 < w; ++x2) {
                            out.at4(b, cout, y, x2) = x.at4(b, ch, y * s + dy, x2 * s + dx);
                        }
                    }
                }
            }
        }
    }
    return out;
}

}  // namespace detail_shuffle

template <typename T>
VarT<T> pixel_shuffle(const VarT<T>& x, int64_t s) {
    const TensorT<T>& xv = x.value();
    require(xv.dims() == 4 && xv.dim(1) % (s * s) == 0, ErrorCode::ShapeMismatch, "pixel_shuffle");
    TensorT<T> out = detail_shuffle::shuffle(xv, s, true);
    if (!tracing<T>({&x})) {
        return VarT<T>::constant(std::move(out));
    }
    return make_result<T>(std::move(out), {x}, [s](VarNodeT<T>& n) {
        if (n.parents[0].needs_grad()) {
            n.parents[0].node()->accumulate(detail_shuffle::shuffle(n.grad, s, false));
        }
    });
}

template <typename T>
VarT<T> pixel_unshuffle(const VarT<T>& x, int64_t s) {
    const TensorT<T>& xv = x.value();
    require(xv.dims() == 4 && xv.dim(2) % s == 0 && xv.dim(3) % s == 0, ErrorCode::ShapeMismatch,
            "pixel_unshuffle");
    TensorT<T> out = detail_shuffle::shuffle(xv, s, false);
    if (!tracing<T>({&x})) {
        return VarT<T>::constant(std::move(out));
    }
    return make_result<T>(std::move(out), {x}, [s](VarNodeT<T>& n) {
        if (n.parents[0].needs_grad()) {
            n.parents[0].node()->accumulate(detail_shuffle::shuffle(n.grad, s, true));
        }
    });
}

// x * s with a one-element Var s broadcast over every element.
template <typename T>
VarT<T> scale_by(const VarT<T>& x, const VarT<T>& s) {
    require(s.numel() == 1, ErrorCode::ShapeMismatch, "scale_by expects a scalar Var");
    T sv = s.value()[0];
    TensorT<T> out = x.value();
    for (int64_t i = 0; i < out.numel(); ++i) {
        out[i] *= sv;
    }
    if (!tracing<T>({&x, &s})) {
        return VarT<T>::constant(std::move(out));
    }
    return make_result<T>(std::move(out), {x, s}, [](VarNodeT<T>& n) {
        T sv2 = n.parents[1].value()[0];
        if (n.parents[0].needs_grad()) {
            TensorT<T> g = n.grad;
            for (int64_t i = 0; i < g.numel(); ++i) {
                g[i] *= sv2;
            }
            n.parents[0].node()->accumulate(g);
        }
        if (n.parents[1].needs_grad()) {
            double acc = 0.0;
            const TensorT<T>& xv = n.parents[0].value();
            for (int64_t i = 0; i < xv.numel(); ++i) {
                acc += double(n.grad[i]) * double(xv[i]);
            }
            TensorT<T> gs({1});
            gs[0] = static_cast<T>(acc);
            n.parents[1].node()->accumulate(gs);
        }
    });
}

// x + s with a one-element Var s broadcast over every element.
template <typename T>
VarT<T> shift_by(const VarT<T>& x, const VarT<T>& s) {
    require(s.numel() == 1, ErrorCode::ShapeMismatch, "shift_by expects a scalar Var");
    T sv = s.value()[0];
    TensorT<T> out = x.value();
    for (int64_t i = 0; i < out.numel(); ++i) {
        out[i] += sv;
    }
    if (!tracing<T>({&x, &s})) {
        return VarT<T>::constant(std::move(out));
    }
    return make_result<T>(std::move(out), {x, s}, [](VarNodeT<T>& n) {
        if (n.parents[0].needs_grad()) {
            n.parents[0].node()->accumulate(n.grad);
        }
        if (n.parents[1].needs_grad()) {
            double acc = 0.0;
            for (int64_t i = 0; i < n.grad.numel(); ++i) {
                acc += double(n.grad[i]);
            }
            TensorT<T> gs({1});
            gs[0] = static_cast<T>(acc);
            n.parents[1].node()->accumulate(gs);
        }
    });
}

// Mean squared error against a constant target.
template <typename T>
VarT<T> mse_to(const VarT<T>& pred, const TensorT<T>& target) {
    VarT<T> diff = sub(pred, VarT<T>::constant(target));
    return mean_all(mul(diff, diff));
}

}  // namespace ag

}  // namespace lipsync
