#pragma once

#include <cmath>
#include <cstring>
#include <span>
#include <type_traits>

#include "y12/tensor.hpp"

namespace y12::ops {

// ---------------------------------------------------------------------------
// gemm microkernels, row-major. The whole engine funnels matrix work through
// these three loops; the j-inner form keeps stores contiguous so the compiler
// vectorizes them.
// ---------------------------------------------------------------------------

/// C[M,N] (+)= A[M,K] * B[K,N]
template <typename T>
void gemm(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate) {
    parallel_for(M, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            T* c = C + i * N;
            if (!accumulate) std::fill(c, c + N, T(0));
            for (int64_t k = 0; k < K; ++k) {
                const T a = A[i * K + k];
                const T* b = B + k * N;
                for (int64_t j = 0; j < N; ++j) c[j] += a * b[j];
            }
        }
    });
}

/// C[M,N] (+)= A[M,K] * B[N,K]^T  (dot-product form)
template <typename T>
void gemm_abt(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate) {
    parallel_for(M, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            const T* a = A + i * K;
            T* c = C + i * N;
            for (int64_t j = 0; j < N; ++j) {
                const T* b = B + j * K;
                T acc = T(0);
                for (int64_t k = 0; k < K; ++k) acc += a[k] * b[k];
                c[j] = accumulate ? c[j] + acc : acc;
            }
        }
    });
}

/// Single-threaded gemm (C = A*B) for use inside already-parallel regions.
template <typename T>
void gemm_st(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C) {
    for (int64_t i = 0; i < M; ++i) {
        T* c = C + i * N;
        std::fill(c, c + N, T(0));
        for (int64_t k = 0; k < K; ++k) {
            const T a = A[i * K + k];
            const T* b = B + k * N;
            for (int64_t j = 0; j < N; ++j) c[j] += a * b[j];
        }
    }
}

/// C[M,N] (+)= A[K,M]^T * B[K,N]
template <typename T>
void gemm_atb(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C, bool accumulate) {
    if (!accumulate)
        for (int64_t i = 0; i < M * N; ++i) C[i] = T(0);
    for (int64_t k = 0; k < K; ++k) {
        const T* a = A + k * M;
        const T* b = B + k * N;
        for (int64_t i = 0; i < M; ++i) {
            const T ai = a[i];
            T* c = C + i * N;
            for (int64_t j = 0; j < N; ++j) c[j] += ai * b[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise helpers
// ---------------------------------------------------------------------------

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (!a.same_shape(b))
        throw dim_error(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                        b.shape_str());
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "add");
    TensorT<T> out = a;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] += b.data[i];
    return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "sub");
    TensorT<T> out = a;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] -= b.data[i];
    return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    check_same_shape(a, b, "mul");
    TensorT<T> out = a;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] *= b.data[i];
    return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T c) {
    TensorT<T> out = a;
    for (auto& v : out.data) v *= c;
    return out;
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T c) {
    TensorT<T> out = a;
    for (auto& v : out.data) v += c;
    return out;
}

template <typename T>
TensorT<T> sum(const TensorT<T>& a) {
    T acc = T(0);
    for (T v : a.data) acc += v;
    return TensorT<T>::scalar(acc);
}

template <typename T>
T sigmoid_scalar(T x) {
    // Branch keeps exp() out of overflow for large |x|.
    if (x >= T(0)) {
        const T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& a) {
    TensorT<T> out = a;
    for (auto& v : out.data) v = sigmoid_scalar(v);
    return out;
}

template <typename T>
TensorT<T> silu(const TensorT<T>& a) {
    TensorT<T> out = a;
    for (auto& v : out.data) v = v * sigmoid_scalar(v);
    return out;
}

template <typename T>
TensorT<T> exp(const TensorT<T>& a) {
    TensorT<T> out = a;
    for (auto& v : out.data) v = std::exp(v);
    return out;
}

template <typename T>
TensorT<T> sqrt(const TensorT<T>& a) {
    TensorT<T> out = a;
    for (auto& v : out.data) v = std::sqrt(v);
    return out;
}

/// ln(1 + e^x), computed as max(x,0) + log1p(e^{-|x|}).
template <typename T>
TensorT<T> softplus(const TensorT<T>& a) {
    TensorT<T> out = a;
    for (auto& v : out.data) v = std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
    return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, std::vector<int64_t> shape) {
    TensorT<T> out(std::move(shape));
    if (out.numel() != a.numel())
        throw dim_error("reshape: element count mismatch " + a.shape_str() + " -> " +
                        out.shape_str());
    out.data = a.data;
    return out;
}

inline int normalize_axis(int axis, int rank, const char* op) {
    const int a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank)
        throw dim_error(std::string(op) + ": axis " + std::to_string(axis) +
                        " out of range for rank " + std::to_string(rank));
    return a;
}

template <typename T>
TensorT<T> concat(std::span<const TensorT<T>* const> parts, int axis) {
    if (parts.empty()) throw dim_error("concat: no inputs");
    const int rank = parts[0]->rank();
    const int ax = normalize_axis(axis, rank, "concat");
    std::vector<int64_t> shape = parts[0]->shape;
    int64_t total_ax = 0;
    for (const auto* p : parts) {
        if (p->rank() != rank)
            throw dim_error("concat: rank mismatch " + parts[0]->shape_str() + " vs " +
                            p->shape_str());
        for (int i = 0; i < rank; ++i)
            if (i != ax && p->shape[i] != shape[i])
                throw dim_error("concat: incompatible shapes " + parts[0]->shape_str() + " vs " +
                                p->shape_str() + " on axis " + std::to_string(i));
        total_ax += p->dim(ax);
    }
    shape[ax] = total_ax;
    TensorT<T> out(shape);

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= shape[i];
    for (int i = ax + 1; i < rank; ++i) inner *= shape[i];

    int64_t ax_off = 0;
    for (const auto* p : parts) {
        const int64_t pa = p->dim(ax);
        for (int64_t o = 0; o < outer; ++o) {
            const T* src = p->data.data() + o * pa * inner;
            T* dst = out.data.data() + (o * total_ax + ax_off) * inner;
            std::copy(src, src + pa * inner, dst);
        }
        ax_off += pa;
    }
    return out;
}

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& parts, int axis) {
    std::vector<const TensorT<T>*> ptrs;
    ptrs.reserve(parts.size());
    for (const auto& p : parts) ptrs.push_back(&p);
    return concat<T>(std::span<const TensorT<T>* const>(ptrs.data(), ptrs.size()), axis);
}

template <typename T>
TensorT<T> slice(const TensorT<T>& a, int axis, int64_t start, int64_t len) {
    const int ax = normalize_axis(axis, a.rank(), "slice");
    if (start < 0 || len <= 0 || start + len > a.dim(ax))
        throw dim_error("slice: range [" + std::to_string(start) + "," +
                        std::to_string(start + len) + ") out of bounds for axis " +
                        std::to_string(ax) + " of " + a.shape_str());
    std::vector<int64_t> shape = a.shape;
    shape[ax] = len;
    TensorT<T> out(shape);
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= a.shape[i];
    for (int i = ax + 1; i < a.rank(); ++i) inner *= a.shape[i];
    const int64_t src_ax = a.dim(ax);
    for (int64_t o = 0; o < outer; ++o) {
        const T* src = a.data.data() + (o * src_ax + start) * inner;
        std::copy(src, src + len * inner, out.data.data() + o * len * inner);
    }
    return out;
}

/// Swap the last two axes (rank >= 2).
template <typename T>
TensorT<T> transpose_last(const TensorT<T>& a) {
    if (a.rank() < 2) throw dim_error("transpose: rank must be >= 2, got " + a.shape_str());
    std::vector<int64_t> shape = a.shape;
    const int r = a.rank();
    std::swap(shape[r - 2], shape[r - 1]);
    TensorT<T> out(shape);
    const int64_t R = a.shape[r - 2], C = a.shape[r - 1];
    const int64_t batch = a.numel() / (R * C);
    for (int64_t b = 0; b < batch; ++b) {
        const T* src = a.data.data() + b * R * C;
        T* dst = out.data.data() + b * R * C;
        for (int64_t i = 0; i < R; ++i)
            for (int64_t j = 0; j < C; ++j) dst[j * R + i] = src[i * C + j];
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax along an axis, with max-subtraction
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> softmax(const TensorT<T>& a, int axis) {
    const int ax = normalize_axis(axis, a.rank(), "softmax");
    TensorT<T> out = a;
    int64_t outer = 1, inner = 1;
    const int64_t n = a.dim(ax);
    for (int i = 0; i < ax; ++i) outer *= a.shape[i];
    for (int i = ax + 1; i < a.rank(); ++i) inner *= a.shape[i];
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            T* base = out.data.data() + o * n * inner + in;
            T mx = base[0];
            for (int64_t k = 1; k < n; ++k) mx = std::max(mx, base[k * inner]);
            T denom = T(0);
            for (int64_t k = 0; k < n; ++k) {
                const T e = std::exp(base[k * inner] - mx);
                base[k * inner] = e;
                denom += e;
            }
            const T inv = T(1) / denom;
            for (int64_t k = 0; k < n; ++k) base[k * inner] *= inv;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul: [..., M, K] x [..., K, N] with identical leading dims, or a
// rank-2 rhs broadcast over lhs batches.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw dim_error("matmul: operands must have rank >= 2, got " + a.shape_str() + " and " +
                        b.shape_str());
    const int64_t M = a.shape[a.rank() - 2], K = a.shape[a.rank() - 1];
    const int64_t Kb = b.shape[b.rank() - 2], N = b.shape[b.rank() - 1];
    if (K != Kb)
        throw dim_error("matmul: inner dimensions differ, " + a.shape_str() + " vs " +
                        b.shape_str());
    const bool b_broadcast = b.rank() == 2 && a.rank() > 2;
    if (!b_broadcast && a.rank() != b.rank())
        throw dim_error("matmul: batch rank mismatch " + a.shape_str() + " vs " + b.shape_str());
    std::vector<int64_t> shape(a.shape.begin(), a.shape.end() - 2);
    if (!b_broadcast)
        for (int i = 0; i + 2 < b.rank(); ++i)
            if (b.shape[i] != a.shape[i])
                throw dim_error("matmul: batch dims differ, " + a.shape_str() + " vs " +
                                b.shape_str());
    shape.push_back(M);
    shape.push_back(N);
    TensorT<T> out(shape);
    const int64_t batch = out.numel() / (M * N);
    for (int64_t i = 0; i < batch; ++i) {
        gemm(M, N, K, a.data.data() + i * M * K, b.data.data() + (b_broadcast ? 0 : i * K * N),
             out.data.data() + i * M * N, false);
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv2d, NCHW, zero padding, groups; im2col + gemm.
// ---------------------------------------------------------------------------

struct Conv2dAttrs {
    int stride = 1;
    int padding = 0;
    int groups = 1;
};

inline int64_t conv_out_dim(int64_t in, int64_t k, int stride, int padding) {
    return (in + 2 * padding - k) / stride + 1;
}

template <typename T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t kH, int64_t kW, int stride,
            int pad, int64_t Ho, int64_t Wo, T* col) {
    // col layout: [C*kH*kW, Ho*Wo]
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t ki = 0; ki < kH; ++ki) {
            for (int64_t kj = 0; kj < kW; ++kj) {
                T* dst = col + ((c * kH + ki) * kW + kj) * Ho * Wo;
                for (int64_t oy = 0; oy < Ho; ++oy) {
                    const int64_t iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= H) {
                        std::fill(dst + oy * Wo, dst + (oy + 1) * Wo, T(0));
                        continue;
                    }
                    const T* src = x + (c * H + iy) * W;
                    for (int64_t ox = 0; ox < Wo; ++ox) {
                        const int64_t ix = ox * stride - pad + kj;
                        dst[oy * Wo + ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* col, int64_t C, int64_t H, int64_t W, int64_t kH, int64_t kW, int stride,
            int pad, int64_t Ho, int64_t Wo, T* x) {
    // accumulates into x
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t ki = 0; ki < kH; ++ki) {
            for (int64_t kj = 0; kj < kW; ++kj) {
                const T* src = col + ((c * kH + ki) * kW + kj) * Ho * Wo;
                for (int64_t oy = 0; oy < Ho; ++oy) {
                    const int64_t iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= H) continue;
                    T* dst = x + (c * H + iy) * W;
                    for (int64_t ox = 0; ox < Wo; ++ox) {
                        const int64_t ix = ox * stride - pad + kj;
                        if (ix >= 0 && ix < W) dst[ix] += src[oy * Wo + ox];
                    }
                }
            }
        }
    }
}

template <typename T>
void check_conv_args(const TensorT<T>& x, const TensorT<T>& w,
                     std::type_identity_t<const TensorT<T>*> bias, const Conv2dAttrs& at) {
    if (x.rank() != 4)
        throw dim_error("conv2d: input must be rank 4 [N,C,H,W], got " + x.shape_str());
    if (w.rank() != 4)
        throw dim_error("conv2d: weight must be rank 4 [Cout,Cin/g,kH,kW], got " + w.shape_str());
    if (at.stride < 1) throw config_error("conv2d: stride must be positive");
    if (at.padding < 0) throw config_error("conv2d: padding must be non-negative");
    if (at.groups < 1) throw config_error("conv2d: groups must be positive");
    const int64_t Cin = x.dim(1), Cout = w.dim(0);
    if (Cin % at.groups != 0)
        throw config_error("conv2d: input channels " + std::to_string(Cin) +
                           " not divisible by groups " + std::to_string(at.groups));
    if (Cout % at.groups != 0)
        throw config_error("conv2d: output channels " + std::to_string(Cout) +
                           " not divisible by groups " + std::to_string(at.groups));
    if (w.dim(1) != Cin / at.groups)
        throw dim_error("conv2d: weight axis 1 is " + std::to_string(w.dim(1)) + ", expected " +
                        std::to_string(Cin / at.groups) + " (= C_in/groups)");
    if (conv_out_dim(x.dim(2), w.dim(2), at.stride, at.padding) < 1 ||
        conv_out_dim(x.dim(3), w.dim(3), at.stride, at.padding) < 1)
        throw dim_error("conv2d: kernel " + w.shape_str() + " does not fit padded input " +
                        x.shape_str());
    if (bias) {
        if (bias->rank() != 1 || bias->dim(0) != Cout)
            throw dim_error("conv2d: bias axis 0 must equal C_out=" + std::to_string(Cout) +
                            ", got " + bias->shape_str());
    }
}

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w,
                  std::type_identity_t<const TensorT<T>*> bias, const Conv2dAttrs& at) {
    check_conv_args(x, w, bias, at);
    const int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Cout = w.dim(0), kH = w.dim(2), kW = w.dim(3);
    const int64_t G = at.groups, cin_g = Cin / G, cout_g = Cout / G;
    const int64_t Ho = conv_out_dim(H, kH, at.stride, at.padding);
    const int64_t Wo = conv_out_dim(W, kW, at.stride, at.padding);
    TensorT<T> out({N, Cout, Ho, Wo});

    meter_flops(2ull * kH * kW * cin_g * Cout * Ho * Wo * N);

    const int64_t col_rows = cin_g * kH * kW;
    parallel_for(N, [&](int64_t n0, int64_t n1) {
        std::vector<T> col(col_rows * Ho * Wo);
        for (int64_t n = n0; n < n1; ++n) {
            for (int64_t g = 0; g < G; ++g) {
                const T* xg = x.data.data() + (n * Cin + g * cin_g) * H * W;
                im2col(xg, cin_g, H, W, kH, kW, at.stride, at.padding, Ho, Wo, col.data());
                T* og = out.data.data() + (n * Cout + g * cout_g) * Ho * Wo;
                gemm_st(cout_g, Ho * Wo, col_rows, w.data.data() + g * cout_g * col_rows,
                        col.data(), og);
            }
        }
    });
    if (bias) {
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < Cout; ++c) {
                T* o = out.data.data() + (n * Cout + c) * Ho * Wo;
                const T b = bias->data[c];
                for (int64_t i = 0; i < Ho * Wo; ++i) o[i] += b;
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// nearest-neighbor 2x upsample and per-channel affine
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> upsample_nearest2x(const TensorT<T>& x) {
    if (x.rank() != 4)
        throw dim_error("upsample_nearest2x: input must be rank 4, got " + x.shape_str());
    const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    TensorT<T> out({N, C, 2 * H, 2 * W});
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* src = x.data.data() + nc * H * W;
        T* dst = out.data.data() + nc * 4 * H * W;
        for (int64_t y = 0; y < H; ++y) {
            T* row0 = dst + (2 * y) * 2 * W;
            for (int64_t xx = 0; xx < W; ++xx) {
                const T v = src[y * W + xx];
                row0[2 * xx] = v;
                row0[2 * xx + 1] = v;
            }
            std::copy(row0, row0 + 2 * W, row0 + 2 * W);
        }
    }
    return out;
}

/// y[n,c,h,w] = x[n,c,h,w] * scale[c] + bias[c]
template <typename T>
TensorT<T> channel_affine(const TensorT<T>& x, const TensorT<T>& scale, const TensorT<T>& bias) {
    if (x.rank() != 4)
        throw dim_error("channel_affine: input must be rank 4, got " + x.shape_str());
    const int64_t C = x.dim(1);
    if (scale.numel() != C || bias.numel() != C)
        throw dim_error("channel_affine: scale/bias must have " + std::to_string(C) +
                        " elements, got " + scale.shape_str() + " and " + bias.shape_str());
    const int64_t N = x.dim(0), HW = x.dim(2) * x.dim(3);
    TensorT<T> out = x;
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            T* o = out.data.data() + (n * C + c) * HW;
            const T s = scale.data[c], b = bias.data[c];
            for (int64_t i = 0; i < HW; ++i) o[i] = o[i] * s + b;
        }
    return out;
}

}  // namespace y12::ops
