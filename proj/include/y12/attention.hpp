#pragma once

#include <limits>
#include <optional>

#include "y12/ops.hpp"

namespace y12::attn {

struct AttentionConfig {
    int num_heads = 1;
    int head_dim = 32;
    int num_areas = 4;   // L
    int tile_rows = 64;  // Br
    int tile_cols = 64;  // Bc
};

inline void validate(const AttentionConfig& cfg) {
    if (cfg.num_heads < 1) throw config_error("attention: num_heads must be >= 1");
    if (cfg.head_dim < 1) throw config_error("attention: head_dim must be >= 1");
    if (cfg.num_areas < 1) throw config_error("attention: num_areas must be >= 1");
    if (cfg.tile_rows < 1 || cfg.tile_cols < 1)
        throw config_error("attention: tile sizes must be >= 1");
}

struct CostReport {
    uint64_t flops = 0;              // multiply-add counted as 2
    int64_t peak_scratch_elements = 0;
    std::optional<double> wall_ns;
};

namespace detail {

template <typename T>
void check_qkv(const TensorT<T>& Q, const TensorT<T>& K, const TensorT<T>& V) {
    if (Q.rank() != 2 || K.rank() != 2 || V.rank() != 2)
        throw dim_error("attention: Q/K/V must be rank 2 [n,d], got " + Q.shape_str() + ", " +
                        K.shape_str() + ", " + V.shape_str());
    if (!Q.same_shape(K) || !Q.same_shape(V))
        throw dim_error("attention: Q/K/V shapes differ: " + Q.shape_str() + ", " +
                        K.shape_str() + ", " + V.shape_str());
}

/// Materialized-score attention over m rows. Peak scratch is exactly m*m:
/// the score matrix, softmaxed in place, then contracted against V.
template <typename T>
void sdpa_rows(int64_t m, int64_t d, const T* Q, const T* K, const T* V, T* out) {
    const T scale = T(1) / std::sqrt(static_cast<T>(d));
    ScratchLease lease(m * m);
    std::vector<T> s(static_cast<size_t>(m * m));

    meter_flops(2ull * m * m * d);  // QK^T
    for (int64_t i = 0; i < m; ++i) {
        const T* q = Q + i * d;
        T* row = s.data() + i * m;
        for (int64_t j = 0; j < m; ++j) {
            const T* k = K + j * d;
            T acc = T(0);
            for (int64_t c = 0; c < d; ++c) acc += q[c] * k[c];
            row[j] = acc * scale;
        }
    }
    for (int64_t i = 0; i < m; ++i) {
        T* row = s.data() + i * m;
        T mx = row[0];
        for (int64_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        T denom = T(0);
        for (int64_t j = 0; j < m; ++j) {
            row[j] = std::exp(row[j] - mx);
            denom += row[j];
        }
        const T inv = T(1) / denom;
        for (int64_t j = 0; j < m; ++j) row[j] *= inv;
    }
    meter_flops(2ull * m * m * d);  // PV
    ops::gemm_st(m, d, m, s.data(), V, out);
}

}  // namespace detail

/// softmax(Q K^T / sqrt(d)) V over the full token range.
template <typename T>
TensorT<T> sdpa(const TensorT<T>& Q, const TensorT<T>& K, const TensorT<T>& V) {
    detail::check_qkv(Q, K, V);
    const int64_t n = Q.dim(0), d = Q.dim(1);
    TensorT<T> out({n, d});
    detail::sdpa_rows(n, d, Q.data.data(), K.data.data(), V.data.data(), out.data.data());
    return out;
}

/// Attention restricted to L contiguous token bands: rows are split into
/// num_areas segments of n/L and attended independently, no cross-segment
/// interaction. Q/K/V form, used by the transformer block.
template <typename T>
TensorT<T> area_attention(const TensorT<T>& Q, const TensorT<T>& K, const TensorT<T>& V,
                          const AttentionConfig& cfg) {
    validate(cfg);
    detail::check_qkv(Q, K, V);
    const int64_t n = Q.dim(0), d = Q.dim(1);
    if (d != cfg.head_dim)
        throw dim_error("area_attention: token width " + std::to_string(d) +
                        " does not match head_dim " + std::to_string(cfg.head_dim));
    const int64_t L = cfg.num_areas;
    if (n % L != 0)
        throw config_error("area_attention: token count " + std::to_string(n) +
                           " not divisible by num_areas " + std::to_string(L));
    const int64_t m = n / L;
    TensorT<T> out({n, d});
    for (int64_t a = 0; a < L; ++a) {
        const int64_t off = a * m * d;
        detail::sdpa_rows(m, d, Q.data.data() + off, K.data.data() + off, V.data.data() + off,
                          out.data.data() + off);
    }
    return out;
}

/// Self-attention form: the token matrix serves as Q, K and V.
template <typename T>
TensorT<T> area_attention(const TensorT<T>& tokens, const AttentionConfig& cfg) {
    return area_attention(tokens, tokens, tokens, cfg);
}

/// Streaming attention: K/V consumed in Bc-row tiles against Br-row Q tiles
/// with an online softmax (running row max m_i, normalizer l_i, rescaled
/// accumulator). The n x n score matrix never exists; scratch is exactly
/// Br*Bc + 3*Br + Br*d elements. Update order per Q row and K/V tile:
/// new max first, then rescale of l_i and the accumulator by exp(m_i - m_new),
/// then the new tile's exponentials are added.
template <typename T>
TensorT<T> tiled_attention(const TensorT<T>& Q, const TensorT<T>& K, const TensorT<T>& V,
                           const AttentionConfig& cfg) {
    validate(cfg);
    detail::check_qkv(Q, K, V);
    const int64_t n = Q.dim(0), d = Q.dim(1);
    if (d != cfg.head_dim)
        throw dim_error("tiled_attention: token width " + std::to_string(d) +
                        " does not match head_dim " + std::to_string(cfg.head_dim));
    const int64_t Br = std::min<int64_t>(cfg.tile_rows, n);  // clamp, never an error
    const int64_t Bc = std::min<int64_t>(cfg.tile_cols, n);
    const T scale = T(1) / std::sqrt(static_cast<T>(d));
    const T neg_inf = -std::numeric_limits<T>::infinity();

    TensorT<T> out({n, d});
    ScratchLease lease(Br * Bc + 3 * Br + Br * d);
    std::vector<T> s(static_cast<size_t>(Br * Bc));
    std::vector<T> run_max(static_cast<size_t>(Br));
    std::vector<T> run_sum(static_cast<size_t>(Br));
    std::vector<T> rescale(static_cast<size_t>(Br));
    std::vector<T> acc(static_cast<size_t>(Br * d));

    for (int64_t i0 = 0; i0 < n; i0 += Br) {
        const int64_t br = std::min(Br, n - i0);
        std::fill(run_max.begin(), run_max.begin() + br, neg_inf);
        std::fill(run_sum.begin(), run_sum.begin() + br, T(0));
        std::fill(acc.begin(), acc.begin() + br * d, T(0));

        for (int64_t j0 = 0; j0 < n; j0 += Bc) {
            const int64_t bc = std::min(Bc, n - j0);
            meter_flops(2ull * br * bc * d);  // Q_tile K_tile^T
            for (int64_t i = 0; i < br; ++i) {
                const T* q = Q.data.data() + (i0 + i) * d;
                T* row = s.data() + i * bc;
                for (int64_t j = 0; j < bc; ++j) {
                    const T* k = K.data.data() + (j0 + j) * d;
                    T dot = T(0);
                    for (int64_t c = 0; c < d; ++c) dot += q[c] * k[c];
                    row[j] = dot * scale;
                }
            }
            for (int64_t i = 0; i < br; ++i) {
                T* row = s.data() + i * bc;
                T tile_max = row[0];
                for (int64_t j = 1; j < bc; ++j) tile_max = std::max(tile_max, row[j]);
                const T new_max = std::max(run_max[static_cast<size_t>(i)], tile_max);
                const T alpha = std::exp(run_max[static_cast<size_t>(i)] - new_max);
                rescale[static_cast<size_t>(i)] = alpha;
                run_max[static_cast<size_t>(i)] = new_max;
                // rescale previous state before this tile contributes
                run_sum[static_cast<size_t>(i)] *= alpha;
                T* arow = acc.data() + i * d;
                for (int64_t c = 0; c < d; ++c) arow[c] *= alpha;
                T part = T(0);
                for (int64_t j = 0; j < bc; ++j) {
                    row[j] = std::exp(row[j] - new_max);
                    part += row[j];
                }
                run_sum[static_cast<size_t>(i)] += part;
            }
            meter_flops(2ull * br * bc * d);  // P V_tile
            for (int64_t i = 0; i < br; ++i) {
                const T* row = s.data() + i * bc;
                T* arow = acc.data() + i * d;
                for (int64_t j = 0; j < bc; ++j) {
                    const T p = row[j];
                    const T* v = V.data.data() + (j0 + j) * d;
                    for (int64_t c = 0; c < d; ++c) arow[c] += p * v[c];
                }
            }
        }
        for (int64_t i = 0; i < br; ++i) {
            const T inv = T(1) / run_sum[static_cast<size_t>(i)];
            const T* arow = acc.data() + i * d;
            T* orow = out.data.data() + (i0 + i) * d;
            for (int64_t c = 0; c < d; ++c) orow[c] = arow[c] * inv;
        }
    }
    return out;
}

/// Analytic cost of area attention at (n, d, L): both matrix products,
/// multiply-add counted as two ops, summed over areas, and the score-matrix
/// footprint of the materializing kernel.
inline CostReport attention_cost(int64_t n, int64_t d, int64_t L) {
    if (n < 1 || d < 1 || L < 1) throw config_error("attention_cost: n, d, L must be positive");
    if (n % L != 0)
        throw config_error("attention_cost: token count " + std::to_string(n) +
                           " not divisible by area count " + std::to_string(L));
    const int64_t m = n / L;
    CostReport r;
    r.flops = 4ull * static_cast<uint64_t>(n) * static_cast<uint64_t>(m) *
              static_cast<uint64_t>(d);
    r.peak_scratch_elements = m * m;
    return r;
}

}  // namespace y12::attn
