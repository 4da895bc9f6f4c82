#pragma once

#include <array>
#include <string>
#include <unordered_map>

#include "y12/attention.hpp"
#include "y12/autograd.hpp"

namespace y12::nn {

template <typename T>
using ParamVisitor = std::function<void(const std::string&, TensorT<T>&)>;

/// Binds parameter tensors to tape leaves, once each, while a training-step
/// graph is recorded.
template <typename T>
struct TapeCtx {
    GraphT<T>& g;
    std::unordered_map<void*, int> bound;

    explicit TapeCtx(GraphT<T>& graph) : g(graph) {}

    int bind(TensorT<T>& p) {
        auto it = bound.find(&p);
        if (it != bound.end()) return it->second;
        const int id = g.leaf(p);
        bound.emplace(&p, id);
        return id;
    }
};

namespace detail {

template <typename T>
void init_conv_weight(TensorT<T>& w, int64_t fan_in, Rng& rng) {
    // He-uniform: fan_in * Var(w) = 2, which keeps activation variance flat
    // through deep SiLU stacks.
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : w.data) v = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Conv unit: conv (no bias) + per-channel affine + optional SiLU. The affine
// is the batch-free stand-in for normalization; scale starts at 1, shift at 0.
// ---------------------------------------------------------------------------

template <typename T>
struct ConvUnitT {
    TensorT<T> w, scale, shift;
    ops::Conv2dAttrs attrs;
    bool act = true;

    ConvUnitT() = default;

    ConvUnitT(int64_t cin, int64_t cout, int k, int stride, int groups, bool act_, Rng& rng)
        : attrs{stride, (k - 1) / 2, groups}, act(act_) {
        if (cin % groups != 0 || cout % groups != 0)
            throw config_error("conv unit: channels not divisible by groups");
        w = TensorT<T>({cout, cin / groups, k, k});
        detail::init_conv_weight(w, (cin / groups) * k * k, rng);
        scale = TensorT<T>::full({cout}, T(1));
        shift = TensorT<T>({cout});
    }

    TensorT<T> forward(const TensorT<T>& x) const {
        auto y = ops::channel_affine(ops::conv2d(x, w, nullptr, attrs), scale, shift);
        return act ? ops::silu(y) : y;
    }

    int record(TapeCtx<T>& ctx, int x) {
        int y = ctx.g.channel_affine(ctx.g.conv2d(x, ctx.bind(w), -1, attrs), ctx.bind(scale),
                                     ctx.bind(shift));
        return act ? ctx.g.silu(y) : y;
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        fn(prefix + ".w", w);
        fn(prefix + ".scale", scale);
        fn(prefix + ".shift", shift);
    }

    int64_t param_count() const { return w.numel() + scale.numel() + shift.numel(); }
};

// ---------------------------------------------------------------------------
// Multi-kernel convolution: sum over branches of conv(x, W_i) + b_i, SiLU on
// the sum. Branch paddings are derived per kernel so every branch produces
// the same output shape.
// ---------------------------------------------------------------------------

template <typename T>
struct MultiKernelConvSpecT {
    std::vector<std::pair<int, int>> kernels;
    std::vector<TensorT<T>> weights;
    std::vector<TensorT<T>> biases;
    int stride = 1;

    MultiKernelConvSpecT() = default;

    MultiKernelConvSpecT(int64_t cin, int64_t cout, std::vector<std::pair<int, int>> ks,
                         int stride_, Rng& rng)
        : kernels(std::move(ks)), stride(stride_) {
        if (kernels.empty()) throw config_error("multi_kernel_conv: needs at least one branch");
        for (auto [kh, kw] : kernels) {
            if (kh != kw || kh % 2 == 0)
                throw config_error(
                    "multi_kernel_conv: branch kernels must be square with odd size so output "
                    "shapes align, got " +
                    std::to_string(kh) + "x" + std::to_string(kw));
            TensorT<T> w({cout, cin, kh, kw});
            detail::init_conv_weight(w, cin * kh * kw, rng);
            weights.push_back(std::move(w));
            biases.push_back(TensorT<T>({cout}));
        }
    }

    int n_branches() const { return static_cast<int>(kernels.size()); }

    ops::Conv2dAttrs branch_attrs(int i) const {
        return {stride, (kernels[static_cast<size_t>(i)].first - 1) / 2, 1};
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        for (size_t i = 0; i < weights.size(); ++i) {
            fn(prefix + ".b" + std::to_string(i) + ".w", weights[i]);
            fn(prefix + ".b" + std::to_string(i) + ".bias", biases[i]);
        }
    }

    int64_t param_count() const {
        int64_t n = 0;
        for (size_t i = 0; i < weights.size(); ++i) n += weights[i].numel() + biases[i].numel();
        return n;
    }
};

template <typename T>
TensorT<T> multi_kernel_conv(const TensorT<T>& x, const MultiKernelConvSpecT<T>& spec) {
    TensorT<T> acc;
    for (int i = 0; i < spec.n_branches(); ++i) {
        auto y = ops::conv2d(x, spec.weights[static_cast<size_t>(i)],
                             &spec.biases[static_cast<size_t>(i)], spec.branch_attrs(i));
        acc = i == 0 ? std::move(y) : ops::add(acc, y);
    }
    return ops::silu(acc);
}

template <typename T>
int record_multi_kernel_conv(TapeCtx<T>& ctx, int x, MultiKernelConvSpecT<T>& spec) {
    int acc = -1;
    for (int i = 0; i < spec.n_branches(); ++i) {
        const int y = ctx.g.conv2d(x, ctx.bind(spec.weights[static_cast<size_t>(i)]),
                                   ctx.bind(spec.biases[static_cast<size_t>(i)]),
                                   spec.branch_attrs(i));
        acc = i == 0 ? y : ctx.g.add(acc, y);
    }
    return ctx.g.silu(acc);
}

// ---------------------------------------------------------------------------
// 7x7 separable positional convolution: depthwise 7x7 then pointwise 1x1,
// both with bias, no activation. Parameter count is exactly 49C + C^2 + 2C.
// ---------------------------------------------------------------------------

template <typename T>
struct SepConv7x7T {
    TensorT<T> dw, dw_bias, pw, pw_bias;

    SepConv7x7T() = default;

    SepConv7x7T(int64_t channels, Rng& rng) {
        dw = TensorT<T>({channels, 1, 7, 7});
        detail::init_conv_weight(dw, 49, rng);
        dw_bias = TensorT<T>({channels});
        pw = TensorT<T>({channels, channels, 1, 1});
        detail::init_conv_weight(pw, channels, rng);
        pw_bias = TensorT<T>({channels});
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        fn(prefix + ".dw.w", dw);
        fn(prefix + ".dw.bias", dw_bias);
        fn(prefix + ".pw.w", pw);
        fn(prefix + ".pw.bias", pw_bias);
    }

    int64_t param_count() const {
        return dw.numel() + dw_bias.numel() + pw.numel() + pw_bias.numel();
    }
};

template <typename T>
TensorT<T> sep_conv7x7_position(const TensorT<T>& v, const SepConv7x7T<T>& p) {
    const int64_t C = v.dim(1);
    auto mid = ops::conv2d(v, p.dw, &p.dw_bias, {1, 3, static_cast<int>(C)});
    return ops::conv2d(mid, p.pw, &p.pw_bias, {1, 0, 1});
}

template <typename T>
int record_sep_conv7x7(TapeCtx<T>& ctx, int v, SepConv7x7T<T>& p) {
    const int64_t C = ctx.g.val(v).dim(1);
    const int mid =
        ctx.g.conv2d(v, ctx.bind(p.dw), ctx.bind(p.dw_bias), {1, 3, static_cast<int>(C)});
    return ctx.g.conv2d(mid, ctx.bind(p.pw), ctx.bind(p.pw_bias), {1, 0, 1});
}

// ---------------------------------------------------------------------------
// R-ELAN: entry 1x1 transition to the hidden width, a chain of bottleneck
// units whose outputs are all retained, concat of entry + every bottleneck
// output, exit 1x1 transition, plus a gamma-weighted residual around the
// whole block.
// ---------------------------------------------------------------------------

template <typename T>
struct RELANSpecT {
    int64_t c_in = 0, c_out = 0, hidden = 0;
    int n_branches = 1;
    double expansion = 0.5;
    double gamma = 1.0;  // fixed, not learned

    ConvUnitT<T> entry, exit_;
    std::vector<std::array<ConvUnitT<T>, 2>> bottlenecks;
    TensorT<T> proj;  // 1x1 residual projection; empty when c_in == c_out

    RELANSpecT() = default;

    RELANSpecT(int64_t cin, int64_t cout, int n, double expansion_, double gamma_, Rng& rng)
        : c_in(cin), c_out(cout), n_branches(n), expansion(expansion_), gamma(gamma_) {
        if (cout < 1) throw config_error("r_elan: c_out must be >= 1");
        if (n < 1) throw config_error("r_elan: n_branches must be >= 1");
        if (expansion <= 0.0 || expansion > 1.0)
            throw config_error("r_elan: expansion must lie in (0, 1]");
        hidden = std::max<int64_t>(1, std::llround(static_cast<double>(cout) * expansion));
        entry = ConvUnitT<T>(cin, hidden, 1, 1, 1, true, rng);
        for (int i = 0; i < n; ++i)
            bottlenecks.push_back({ConvUnitT<T>(hidden, hidden, 3, 1, 1, true, rng),
                                   ConvUnitT<T>(hidden, hidden, 3, 1, 1, true, rng)});
        exit_ = ConvUnitT<T>(hidden * (n + 1), cout, 1, 1, 1, true, rng);
        if (cin != cout) {
            proj = TensorT<T>({cout, cin, 1, 1});
            detail::init_conv_weight(proj, cin, rng);
        }
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        entry.visit(prefix + ".entry", fn);
        for (size_t i = 0; i < bottlenecks.size(); ++i) {
            bottlenecks[i][0].visit(prefix + ".bn" + std::to_string(i) + ".0", fn);
            bottlenecks[i][1].visit(prefix + ".bn" + std::to_string(i) + ".1", fn);
        }
        exit_.visit(prefix + ".exit", fn);
        if (proj.numel() > 0) fn(prefix + ".proj.w", proj);
    }

    int64_t param_count() const {
        int64_t total = entry.param_count() + exit_.param_count() + proj.numel();
        for (const auto& b : bottlenecks) total += b[0].param_count() + b[1].param_count();
        return total;
    }
};

template <typename T>
TensorT<T> r_elan_block(const TensorT<T>& x, const RELANSpecT<T>& spec) {
    std::vector<TensorT<T>> kept;
    kept.push_back(spec.entry.forward(x));
    for (const auto& b : spec.bottlenecks) kept.push_back(b[1].forward(b[0].forward(kept.back())));
    auto main = spec.exit_.forward(ops::concat(kept, 1));
    TensorT<T> res = spec.proj.numel() > 0 ? ops::conv2d(x, spec.proj, nullptr, {1, 0, 1}) : x;
    return ops::add(main, ops::scale(res, static_cast<T>(spec.gamma)));
}

template <typename T>
int record_r_elan(TapeCtx<T>& ctx, int x, RELANSpecT<T>& spec) {
    std::vector<int> kept;
    kept.push_back(spec.entry.record(ctx, x));
    for (auto& b : spec.bottlenecks) kept.push_back(b[1].record(ctx, b[0].record(ctx, kept.back())));
    const int main = spec.exit_.record(ctx, ctx.g.concat(kept, 1));
    const int res =
        spec.proj.numel() > 0 ? ctx.g.conv2d(x, ctx.bind(spec.proj), -1, {1, 0, 1}) : x;
    return ctx.g.add(main, ctx.g.scale(res, static_cast<T>(spec.gamma)));
}

// ---------------------------------------------------------------------------
// Attention block: 1x1 Q/K/V projections, per-head area attention over the
// flattened spatial tokens, output projection, a 7x7 separable positional
// term computed from V, and a two-layer MLP; skip connections wrap both the
// attention and MLP sub-blocks.
// ---------------------------------------------------------------------------

enum class AttnKernel { tiled, naive };

template <typename T>
struct AttnBlockSpecT {
    int64_t channels = 0;
    attn::AttentionConfig attention;
    double mlp_ratio = 2.0;
    int64_t mlp_hidden = 0;

    TensorT<T> wq, bq, wk, bk, wv, bv, wo, bo;
    SepConv7x7T<T> pos;
    TensorT<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;

    AttnBlockSpecT() = default;

    AttnBlockSpecT(int64_t channels_, attn::AttentionConfig att, double mlp_ratio_, Rng& rng)
        : channels(channels_), attention(att), mlp_ratio(mlp_ratio_) {
        attn::validate(att);
        if (mlp_ratio <= 0.0) throw config_error("attn_block: mlp_ratio must be > 0");
        if (channels % att.num_heads != 0)
            throw config_error("attn_block: channels " + std::to_string(channels) +
                               " not divisible by num_heads " + std::to_string(att.num_heads));
        attention.head_dim = static_cast<int>(channels / att.num_heads);
        mlp_hidden = std::max<int64_t>(
            1, std::llround(static_cast<double>(channels) * mlp_ratio));

        auto proj = [&](TensorT<T>& w, TensorT<T>& b, int64_t cin, int64_t cout) {
            w = TensorT<T>({cout, cin, 1, 1});
            detail::init_conv_weight(w, cin, rng);
            b = TensorT<T>({cout});
        };
        proj(wq, bq, channels, channels);
        proj(wk, bk, channels, channels);
        proj(wv, bv, channels, channels);
        proj(wo, bo, channels, channels);
        pos = SepConv7x7T<T>(channels, rng);
        proj(mlp_w1, mlp_b1, channels, mlp_hidden);
        proj(mlp_w2, mlp_b2, mlp_hidden, channels);
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        fn(prefix + ".q.w", wq);
        fn(prefix + ".q.bias", bq);
        fn(prefix + ".k.w", wk);
        fn(prefix + ".k.bias", bk);
        fn(prefix + ".v.w", wv);
        fn(prefix + ".v.bias", bv);
        fn(prefix + ".out.w", wo);
        fn(prefix + ".out.bias", bo);
        pos.visit(prefix + ".pos", fn);
        fn(prefix + ".mlp.0.w", mlp_w1);
        fn(prefix + ".mlp.0.bias", mlp_b1);
        fn(prefix + ".mlp.1.w", mlp_w2);
        fn(prefix + ".mlp.1.bias", mlp_b2);
    }

    int64_t param_count() const {
        return wq.numel() + bq.numel() + wk.numel() + bk.numel() + wv.numel() + bv.numel() +
               wo.numel() + bo.numel() + pos.param_count() + mlp_w1.numel() + mlp_b1.numel() +
               mlp_w2.numel() + mlp_b2.numel();
    }
};

template <typename T>
TensorT<T> attn_block(const TensorT<T>& x, const AttnBlockSpecT<T>& spec,
                      AttnKernel kernel = AttnKernel::tiled) {
    if (x.rank() != 4 || x.dim(1) != spec.channels)
        throw dim_error("attn_block: expected [N," + std::to_string(spec.channels) +
                        ",H,W], got " + x.shape_str());
    const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t tokens = H * W;
    const int64_t heads = spec.attention.num_heads, hd = C / heads;
    const int64_t L = spec.attention.num_areas;
    if (tokens % L != 0)
        throw config_error("attn_block: token count " + std::to_string(tokens) +
                           " not divisible by num_areas " + std::to_string(L));

    auto q = ops::conv2d(x, spec.wq, &spec.bq, {1, 0, 1});
    auto k = ops::conv2d(x, spec.wk, &spec.bk, {1, 0, 1});
    auto v = ops::conv2d(x, spec.wv, &spec.bv, {1, 0, 1});

    // [N,C,H,W] -> per batch/head token matrices [tokens, hd]
    TensorT<T> attended({N, C, H, W});
    attn::AttentionConfig hcfg = spec.attention;
    hcfg.head_dim = static_cast<int>(hd);
    TensorT<T> qs({tokens, hd}), ks({tokens, hd}), vs({tokens, hd});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t h = 0; h < heads; ++h) {
            // channels h*hd..(h+1)*hd hold this head; token t is column t
            for (int64_t c = 0; c < hd; ++c) {
                const int64_t src = ((n * C) + h * hd + c) * tokens;
                for (int64_t t = 0; t < tokens; ++t) {
                    qs.data[t * hd + c] = q.data[src + t];
                    ks.data[t * hd + c] = k.data[src + t];
                    vs.data[t * hd + c] = v.data[src + t];
                }
            }
            TensorT<T> out_tok;
            if (kernel == AttnKernel::naive) {
                out_tok = attn::area_attention(qs, ks, vs, hcfg);
            } else {
                out_tok = TensorT<T>({tokens, hd});
                const int64_t m = tokens / L;
                for (int64_t a = 0; a < L; ++a) {
                    TensorT<T> qa = ops::slice(qs, 0, a * m, m);
                    TensorT<T> ka = ops::slice(ks, 0, a * m, m);
                    TensorT<T> va = ops::slice(vs, 0, a * m, m);
                    auto oa = attn::tiled_attention(qa, ka, va, hcfg);
                    std::copy(oa.data.begin(), oa.data.end(), out_tok.data.begin() + a * m * hd);
                }
            }
            for (int64_t c = 0; c < hd; ++c) {
                const int64_t dst = ((n * C) + h * hd + c) * tokens;
                for (int64_t t = 0; t < tokens; ++t) attended.data[dst + t] = out_tok.data[t * hd + c];
            }
        }

    auto projected = ops::conv2d(attended, spec.wo, &spec.bo, {1, 0, 1});
    auto y = ops::add(x, ops::add(projected, sep_conv7x7_position(v, spec.pos)));
    auto hid = ops::silu(ops::conv2d(y, spec.mlp_w1, &spec.mlp_b1, {1, 0, 1}));
    return ops::add(y, ops::conv2d(hid, spec.mlp_w2, &spec.mlp_b2, {1, 0, 1}));
}

/// Taped forward. Attention runs on the materializing path here: the tiled
/// kernel is an inference device, gradients flow through plain matmul/softmax.
template <typename T>
int record_attn_block(TapeCtx<T>& ctx, int x, AttnBlockSpecT<T>& spec) {
    auto& g = ctx.g;
    const auto& xs = g.val(x);
    if (xs.rank() != 4 || xs.dim(1) != spec.channels)
        throw dim_error("attn_block: expected [N," + std::to_string(spec.channels) +
                        ",H,W], got " + xs.shape_str());
    const int64_t N = xs.dim(0), C = xs.dim(1), H = xs.dim(2), W = xs.dim(3);
    const int64_t tokens = H * W;
    const int64_t heads = spec.attention.num_heads, hd = C / heads;
    const int64_t L = spec.attention.num_areas;
    const int64_t m = tokens / L;
    if (tokens % L != 0)
        throw config_error("attn_block: token count " + std::to_string(tokens) +
                           " not divisible by num_areas " + std::to_string(L));
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));

    const int q = g.conv2d(x, ctx.bind(spec.wq), ctx.bind(spec.bq), {1, 0, 1});
    const int k = g.conv2d(x, ctx.bind(spec.wk), ctx.bind(spec.bk), {1, 0, 1});
    const int v = g.conv2d(x, ctx.bind(spec.wv), ctx.bind(spec.bv), {1, 0, 1});

    // tokens-major views: [N, tokens, hd] per head via reshape+slice+transpose
    const int qf = g.reshape(q, {N, C, tokens});
    const int kf = g.reshape(k, {N, C, tokens});
    const int vf = g.reshape(v, {N, C, tokens});
    std::vector<int> head_outs;
    for (int64_t h = 0; h < heads; ++h) {
        const int qh = g.transpose_last(g.slice(qf, 1, h * hd, hd));  // [N, tokens, hd]
        const int kh = g.slice(kf, 1, h * hd, hd);                    // [N, hd, tokens]
        const int vh = g.transpose_last(g.slice(vf, 1, h * hd, hd));  // [N, tokens, hd]
        std::vector<int> area_outs;
        for (int64_t a = 0; a < L; ++a) {
            const int qa = g.slice(qh, 1, a * m, m);   // [N, m, hd]
            const int ka = g.slice(kh, 2, a * m, m);   // [N, hd, m]
            const int va = g.slice(vh, 1, a * m, m);   // [N, m, hd]
            const int scores = g.scale(g.matmul(qa, ka), scale);
            const int p = g.softmax(scores, -1);
            area_outs.push_back(g.matmul(p, va));      // [N, m, hd]
        }
        const int oh = L == 1 ? area_outs[0] : g.concat(area_outs, 1);  // [N, tokens, hd]
        head_outs.push_back(g.transpose_last(oh));                      // [N, hd, tokens]
    }
    const int merged = heads == 1 ? head_outs[0] : g.concat(head_outs, 1);  // [N, C, tokens]
    const int attended = g.reshape(merged, {N, C, H, W});

    const int projected = g.conv2d(attended, ctx.bind(spec.wo), ctx.bind(spec.bo), {1, 0, 1});
    const int y = g.add(x, g.add(projected, record_sep_conv7x7(ctx, v, spec.pos)));
    const int hid =
        g.silu(g.conv2d(y, ctx.bind(spec.mlp_w1), ctx.bind(spec.mlp_b1), {1, 0, 1}));
    return g.add(y, g.conv2d(hid, ctx.bind(spec.mlp_w2), ctx.bind(spec.mlp_b2), {1, 0, 1}));
}

using ConvUnit = ConvUnitT<float>;
using MultiKernelConvSpec = MultiKernelConvSpecT<float>;
using SepConv7x7 = SepConv7x7T<float>;
using RELANSpec = RELANSpecT<float>;
using AttnBlockSpec = AttnBlockSpecT<float>;

}  // namespace y12::nn
