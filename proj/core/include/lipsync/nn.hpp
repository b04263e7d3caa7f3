#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lipsync/autograd.hpp"

namespace lipsync::nn {

template <typename T>
struct ParamRef {
    std::string name;
    VarT<T>* var;
};

template <typename T>
using ParamList = std::vector<ParamRef<T>>;

template <typename T>
int64_t parameter_count(const ParamList<T>& params) {
    int64_t n = 0;
    for (const auto& p : params) {
        n += p.var->numel();
    }
    return n;
}

template <typename T>
struct Conv2dT {
    VarT<T> weight;  // [Cout, Cin, k, k]
    VarT<T> bias;    // [Cout] (undefined when bias disabled)
    int64_t stride = 1;
    int64_t pad = 0;

    Conv2dT() = default;

    Conv2dT(int64_t c_in, int64_t c_out, int64_t k, int64_t stride_, int64_t pad_, Rng& rng,
            bool zero_init = false, bool with_bias = true)
        : stride(stride_), pad(pad_) {
        T std_dev = zero_init ? T(0) : static_cast<T>(std::sqrt(2.0 / double(c_in * k * k)));
        weight = VarT<T>::param(TensorT<T>::randn({c_out, c_in, k, k}, rng, std_dev));
        if (with_bias) {
            bias = VarT<T>::param(TensorT<T>::zeros({c_out}));
        }
    }

    VarT<T> forward(const VarT<T>& x) const { return ag::conv2d(x, weight, bias, stride, pad); }

    void visit(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".weight", &weight});
        if (bias.defined()) {
            out.push_back({prefix + ".bias", &bias});
        }
    }
};

template <typename T>
struct LinearT {
    VarT<T> weight;  // [In, Out]
    VarT<T> bias;    // [Out]

    LinearT() = default;

    LinearT(int64_t in, int64_t out, Rng& rng, bool zero_init = false) {
        T std_dev = zero_init ? T(0) : static_cast<T>(std::sqrt(1.0 / double(in)));
        weight = VarT<T>::param(TensorT<T>::randn({in, out}, rng, std_dev));
        bias = VarT<T>::param(TensorT<T>::zeros({out}));
    }

    // x: [..., In] -> [..., Out]
    VarT<T> forward(const VarT<T>& x) const {
        Shape s = x.shape();
        int64_t in = s.back();
        int64_t rows = x.numel() / in;
        VarT<T> flat = ag::reshape(x, {rows, in});
        VarT<T> y = ag::add_row_bias(ag::matmul(flat, weight), bias);
        Shape out_shape = s;
        out_shape.back() = weight.shape()[1];
        return ag::reshape(y, out_shape);
    }

    void visit(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".weight", &weight});
        out.push_back({prefix + ".bias", &bias});
    }
};

template <typename T>
struct GroupNormT {
    VarT<T> gamma;
    VarT<T> beta;
    int groups = 1;

    GroupNormT() = default;

    GroupNormT(int64_t channels, int groups_) : groups(groups_) {
        gamma = VarT<T>::param(TensorT<T>::full({channels}, T(1)));
        beta = VarT<T>::param(TensorT<T>::zeros({channels}));
    }

    VarT<T> forward(const VarT<T>& x) const { return ag::group_norm(x, groups, gamma, beta); }

    void visit(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".gamma", &gamma});
        out.push_back({prefix + ".beta", &beta});
    }
};

template <typename T>
struct LayerNormT {
    VarT<T> gamma;
    VarT<T> beta;

    LayerNormT() = default;

    explicit LayerNormT(int64_t dim) {
        gamma = VarT<T>::param(TensorT<T>::full({dim}, T(1)));
        beta = VarT<T>::param(TensorT<T>::zeros({dim}));
    }

    VarT<T> forward(const VarT<T>& x) const { return ag::layer_norm(x, gamma, beta); }

    void visit(const std::string& prefix, ParamList<T>& out) {
        out.push_back({prefix + ".gamma", &gamma});
        out.push_back({prefix + ".beta", &beta});
    }
};

// Scaled dot-product attention. q: [B, N, C], k/v: [B, M, C] with C divisible
// by heads. When capture is non-null the softmax weights [B*heads, N, M] are
// copied out (used by tests to assert rows are a proper distribution).
template <typename T>
VarT<T> attention(const VarT<T>& q, const VarT<T>& k, const VarT<T>& v, int heads,
                  TensorT<T>* capture = nullptr) {
    int64_t b = q.shape()[0], n = q.shape()[1], c = q.shape()[2];
    int64_t m = k.shape()[1];
    require(c % heads == 0, ErrorCode::ConfigMismatch, "attention: channels % heads != 0");
    require(k.shape()[0] == b && v.shape()[0] == b && v.shape()[1] == m && k.shape()[2] == c &&
                v.shape()[2] == c,
            ErrorCode::ShapeMismatch, "attention shapes");
    int64_t dh = c / heads;
    auto split = [&](const VarT<T>& x, int64_t len) {
        VarT<T> r = ag::reshape(x, {b, len, heads, dh});
        r = ag::permute(r, {0, 2, 1, 3});
        return ag::reshape(r, {b * heads, len, dh});
    };
    VarT<T> qh = split(q, n);
    VarT<T> kh = split(k, m);
    VarT<T> vh = split(v, m);
    VarT<T> kt = ag::permute(kh, {0, 2, 1});
    VarT<T> scores = ag::scale(ag::bmm(qh, kt), static_cast<T>(1.0 / std::sqrt(double(dh))));
    VarT<T> w = ag::softmax_lastdim(scores);
    if (capture) {
        *capture = w.value();
    }
    VarT<T> out = ag::bmm(w, vh);
    out = ag::reshape(out, {b, heads, n, dh});
    out = ag::permute(out, {0, 2, 1, 3});
    return ag::reshape(out, {b, n, c});
}

// Sinusoidal scalar embedding, the standard diffusion conditioning vector.
template <typename T>
TensorT<T> sinusoidal_embedding(double value, int64_t dim, double max_period = 10000.0) {
    TensorT<T> out({dim});
    int64_t half = dim / 2;
    for (int64_t i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(max_period) * double(i) / double(half));
        out[i] = static_cast<T>(std::cos(value * freq));
        out[half + i] = static_cast<T>(std::sin(value * freq));
    }
    if (dim % 2 == 1) {
        out[dim - 1] = T(0);
    }
    return out;
}

// AdamW with decoupled weight decay and optional global-norm gradient clipping.
template <typename T>
struct AdamWT {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double clip_norm = 0.0;  // 0 disables clipping
    int64_t step_count = 0;

    std::vector<VarT<T>> params;
    std::vector<TensorT<T>> m;
    std::vector<TensorT<T>> v;

    void attach(const ParamList<T>& list) {
        params.clear();
        m.clear();
        v.clear();
        for (const auto& p : list) {
            params.push_back(*p.var);
            m.push_back(TensorT<T>::zeros(p.var->shape()));
            v.push_back(TensorT<T>::zeros(p.var->shape()));
        }
    }

    void zero_grad() {
        for (auto& p : params) {
            p.clear_grad();
        }
    }

    double grad_global_norm() const {
        double acc = 0.0;
        for (const auto& p : params) {
            const TensorT<T>& g = p.grad();
            for (int64_t i = 0; i < g.numel(); ++i) {
                acc += double(g[i]) * double(g[i]);
            }
        }
        return std::sqrt(acc);
    }

    void step() {
        ++step_count;
        double scale = 1.0;
        if (clip_norm > 0.0) {
            double norm = grad_global_norm();
            if (norm > clip_norm) {
                scale = clip_norm / norm;
            }
        }
        double bc1 = 1.0 - std::pow(beta1, double(step_count));
        double bc2 = 1.0 - std::pow(beta2, double(step_count));
        for (size_t i = 0; i < params.size(); ++i) {
            TensorT<T>& w = params[i].value();
            const TensorT<T>& g = params[i].grad();
            if (g.empty()) {
                continue;
            }
            for (int64_t j = 0; j < w.numel(); ++j) {
                double gj = double(g[j]) * scale;
                double mj = beta1 * double(m[i][j]) + (1.0 - beta1) * gj;
                double vj = beta2 * double(v[i][j]) + (1.0 - beta2) * gj * gj;
                m[i][j] = static_cast<T>(mj);
                v[i][j] = static_cast<T>(vj);
                double update = (mj / bc1) / (std::sqrt(vj / bc2) + eps);
                double decayed = double(w[j]) * (1.0 - lr * weight_decay);
                w[j] = static_cast<T>(decayed - lr * update);
            }
        }
    }
};

using Conv2d = Conv2dT<float>;
using Linear = LinearT<float>;
using GroupNorm = GroupNormT<float>;
using LayerNorm = LayerNormT<float>;
using AdamW = AdamWT<float>;

}  // namespace lipsync::nn
