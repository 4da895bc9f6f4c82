#pragma once

#include <doctest.h>

#include "y12/tensor.hpp"

namespace y12::testutil {

template <typename T>
void fill_uniform(TensorT<T>& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
}

template <typename T>
TensorT<T> random_tensor(std::vector<int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    TensorT<T> t(std::move(shape));
    fill_uniform(t, rng, lo, hi);
    return t;
}

template <typename T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
    REQUIRE(a.shape == b.shape);
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    return m;
}

}  // namespace y12::testutil
