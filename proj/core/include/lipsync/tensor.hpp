#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "lipsync/errors.hpp"
#include "lipsync/rng.hpp"

namespace lipsync {

using Shape = std::vector<int64_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        os << s[i] << (i + 1 < s.size() ? "," : "");
    }
    os << "]";
    return os.str();
}

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
        n *= d;
    }
    return n;
}

// Dense row-major N-d tensor with value semantics. All layouts are contiguous;
// views are not supported, ops copy.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(Shape shape) : shape_(std::move(shape)) {
        for (int64_t d : shape_) {
            require(d >= 0, ErrorCode::ShapeMismatch, "negative dimension in " + shape_str(shape_));
        }
        data_.assign(static_cast<size_t>(shape_numel(shape_)), T(0));
    }

    TensorT(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        require(static_cast<int64_t>(data_.size()) == shape_numel(shape_), ErrorCode::ShapeMismatch,
                "data size does not match shape " + shape_str(shape_));
    }

    static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

    static TensorT full(Shape shape, T value) {
        TensorT t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    static TensorT randn(Shape shape, Rng& rng, T stddev = T(1)) {
        TensorT t(std::move(shape));
        for (T& v : t.data_) {
            v = static_cast<T>(rng.normal() * static_cast<double>(stddev));
        }
        return t;
    }

    static TensorT rand(Shape shape, Rng& rng) {
        TensorT t(std::move(shape));
        for (T& v : t.data_) {
            v = static_cast<T>(rng.uniform());
        }
        return t;
    }

    const Shape& shape() const { return shape_; }
    int dims() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // [N, C, H, W] accessor; the layout every media and latent tensor uses.
    T& at4(int64_t n, int64_t c, int64_t y, int64_t x) {
        return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
    }
    const T& at4(int64_t n, int64_t c, int64_t y, int64_t x) const {
        return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
    }

    T& at3(int64_t a, int64_t b, int64_t c) {
        return data_[static_cast<size_t>((a * shape_[1] + b) * shape_[2] + c)];
    }
    const T& at3(int64_t a, int64_t b, int64_t c) const {
        return data_[static_cast<size_t>((a * shape_[1] + b) * shape_[2] + c)];
    }

    T& at2(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * shape_[1] + c)]; }
    const T& at2(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * shape_[1] + c)]; }

    bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (T v : data_) {
            if (!std::isfinite(static_cast<double>(v))) {
                return false;
            }
        }
        return true;
    }

    TensorT reshaped(Shape shape) const {
        require(shape_numel(shape) == numel(), ErrorCode::ShapeMismatch,
                "reshape " + shape_str(shape_) + " -> " + shape_str(shape));
        TensorT t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    double sum() const {
        double acc = 0.0;
        for (T v : data_) {
            acc += static_cast<double>(v);
        }
        return acc;
    }

    double mean() const { return numel() == 0 ? 0.0 : sum() / static_cast<double>(numel()); }

    T min_value() const { return *std::min_element(data_.begin(), data_.end()); }
    T max_value() const { return *std::max_element(data_.begin(), data_.end()); }

    double max_abs_diff(const TensorT& other) const {
        require(same_shape(other), ErrorCode::ShapeMismatch,
                "max_abs_diff " + shape_str(shape_) + " vs " + shape_str(other.shape_));
        double m = 0.0;
        for (int64_t i = 0; i < numel(); ++i) {
            m = std::max(m, std::abs(static_cast<double>(data_[static_cast<size_t>(i)]) -
                                     static_cast<double>(other.data_[static_cast<size_t>(i)])));
        }
        return m;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out = TensorT<U>(shape_);
        for (int64_t i = 0; i < numel(); ++i) {
            out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
        }
        return out;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* where) {
    require(a.same_shape(b), ErrorCode::ShapeMismatch,
            std::string(where) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
void check_finite(const TensorT<T>& t, const char* where) {
    require(t.all_finite(), ErrorCode::NonFiniteInput, std::string(where) + ": NaN/Inf input");
}

}  // namespace lipsync
