#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "y12/common.hpp"

namespace y12 {

/// Dense n-dimensional array, row-major, with an optional gradient buffer.
/// Float for training/inference, double for gradient checking.
template <typename T>
struct TensorT {
    std::vector<int64_t> shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty unless gradients were requested

    TensorT() = default;

    explicit TensorT(std::vector<int64_t> s) : shape(std::move(s)) {
        data.assign(check_shape(shape), T(0));
    }

    TensorT(std::vector<int64_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != check_shape(shape))
            throw dim_error("tensor data length " + std::to_string(data.size()) +
                            " does not match shape " + shape_str());
    }

    static TensorT zeros(std::vector<int64_t> s) { return TensorT(std::move(s)); }

    static TensorT full(std::vector<int64_t> s, T v) {
        TensorT t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static TensorT from(std::vector<int64_t> s, std::initializer_list<T> vals) {
        return TensorT(std::move(s), std::vector<T>(vals));
    }

    static TensorT scalar(T v) { return TensorT({1}, {v}); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    /// Flat offset of a multi-index; rank-checked only by argument count.
    template <typename... Ix>
    int64_t offset(Ix... ix) const {
        const int64_t idx[] = {static_cast<int64_t>(ix)...};
        int64_t off = 0;
        for (size_t i = 0; i < sizeof...(Ix); ++i) off = off * shape[i] + idx[i];
        return off;
    }

    template <typename... Ix>
    T& at(Ix... ix) {
        return data[static_cast<size_t>(offset(ix...))];
    }
    template <typename... Ix>
    const T& at(Ix... ix) const {
        return data[static_cast<size_t>(offset(ix...))];
    }

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
    }
    void zero_grad() {
        std::fill(grad.begin(), grad.end(), T(0));
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ']';
        return os.str();
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

private:
    static int64_t check_shape(const std::vector<int64_t>& s) {
        if (s.empty()) throw dim_error("tensor shape must have at least one dimension");
        int64_t n = 1;
        for (size_t i = 0; i < s.size(); ++i) {
            if (s[i] <= 0)
                throw dim_error("tensor dimension " + std::to_string(i) +
                                " must be positive, got " + std::to_string(s[i]));
            n *= s[i];
        }
        return n;
    }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename T>
int64_t numel_of(const std::vector<int64_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), int64_t(1), std::multiplies<int64_t>());
}

}  // namespace y12
