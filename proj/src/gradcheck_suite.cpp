#include "y12/gradcheck_suite.hpp"

#include <cmath>
#include <cstdlib>
#include <functional>
#include <utility>

#include "y12/autograd.hpp"
#include "y12/blocks.hpp"
#include "y12/detect.hpp"

namespace y12::gc {

namespace {

Tensor64 rand_t(std::vector<int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor64 t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Contract the output against a fixed random tensor so every output
// coordinate contributes to the checked scalar.
int contract(Graph64& g, int node, const Tensor64& r) {
    return g.sum(g.mul(node, g.input(r)));
}

double check_unary(const std::function<int(Graph64&, int)>& apply, std::vector<int64_t> shape,
                   Rng& rng, double lo = -1.0, double hi = 1.0) {
    auto x = rand_t(std::move(shape), rng, lo, hi);
    Graph64 probe;
    const auto out_shape = probe.val(apply(probe, probe.input(x))).shape;
    const auto r = rand_t(out_shape, rng);
    return gradcheck([&](Graph64& g) { return contract(g, apply(g, g.leaf(x)), r); }, {&x});
}

double check_conv(Rng& rng, std::vector<int64_t> xs, std::vector<int64_t> ws,
                  ops::Conv2dAttrs at) {
    auto x = rand_t(std::move(xs), rng);
    auto w = rand_t(std::move(ws), rng);
    auto b = rand_t({w.dim(0)}, rng);
    Graph64 probe;
    const auto out_shape =
        probe.val(probe.conv2d(probe.input(x), probe.input(w), probe.input(b), at)).shape;
    const auto r = rand_t(out_shape, rng);
    return gradcheck(
        [&](Graph64& g) {
            return contract(g, g.conv2d(g.leaf(x), g.leaf(w), g.leaf(b), at), r);
        },
        {&x, &w, &b});
}

// Composite blocks go through their training-tape record path; the block's
// parameters and the input are all checked.
template <typename Spec, typename RecordFn>
double check_block(Rng& rng, std::vector<int64_t> xshape, Spec& spec, RecordFn record) {
    auto x = rand_t(std::move(xshape), rng);
    Graph64 probe;
    nn::TapeCtx<double> probe_ctx(probe);
    const auto out_shape = probe.val(record(probe_ctx, probe.input(x), spec)).shape;
    const auto r = rand_t(out_shape, rng);
    std::vector<Tensor64*> params;
    spec.visit("p", [&](const std::string&, Tensor64& t) { params.push_back(&t); });
    params.push_back(&x);
    return gradcheck(
        [&](Graph64& g) {
            nn::TapeCtx<double> ctx(g);
            return contract(g, record(ctx, ctx.bind(x), spec), r);
        },
        params);
}

double check_detection_loss(Rng& rng) {
    // Scale 0 comes out of a 1x1 conv head; the other scales are free
    // tensors. Scales 0 and 1 carry a positive cell, scale 2 is all
    // background, so both loss paths are exercised.
    Tensor64 x({1, 3, 4, 4}), w({7, 3, 1, 1}), bias({7});
    Tensor64 p1({1, 7, 2, 2}), p2({1, 7, 1, 1});
    for (auto* t : {&x, &w, &p1, &p2})
        for (auto& v : t->data) v = rng.uniform(-1.0, 1.0);
    for (auto& v : bias.data) v = rng.uniform(-0.5, 0.5);

    std::array<Tensor64, 3> targets = {Tensor64::zeros({1, 7, 4, 4}),
                                       Tensor64::zeros({1, 7, 2, 2}),
                                       Tensor64::zeros({1, 7, 1, 1})};
    auto set = [](Tensor64& t, int64_t j, int cls, double ox, double oy, double bw, double bh) {
        const int64_t plane = t.dim(2) * t.dim(3);
        t.data[static_cast<size_t>(0 * plane + j)] = ox;
        t.data[static_cast<size_t>(1 * plane + j)] = oy;
        t.data[static_cast<size_t>(2 * plane + j)] = bw;
        t.data[static_cast<size_t>(3 * plane + j)] = bh;
        t.data[static_cast<size_t>(4 * plane + j)] = 1.0;
        t.data[static_cast<size_t>((5 + cls) * plane + j)] = 1.0;
    };
    set(targets[0], 5, 0, 0.25, 0.75, 0.07, 0.05);
    set(targets[1], 2, 1, 0.5, 0.4, 0.22, 0.31);

    std::vector<Tensor64*> params = {&x, &w, &bias, &p1, &p2};
    return gradcheck(
        [&](Graph64& g) {
            const int head = g.conv2d(g.leaf(x), g.leaf(w), g.leaf(bias), {1, 0, 1});
            const std::array<int, 3> preds = {head, g.leaf(p1), g.leaf(p2)};
            return det::record_detection_loss(g, preds, targets, LossWeights{}).total;
        },
        params);
}

attn::AttentionConfig acfg(int heads, int areas) {
    attn::AttentionConfig c;
    c.num_heads = heads;
    c.num_areas = areas;
    return c;
}

struct Case {
    const char* name;
    std::function<double(Rng&)> run;
};

const std::vector<Case>& suite_cases() {
    auto un = [](auto apply, std::vector<int64_t> shape, double lo = -1.0, double hi = 1.0) {
        return [=](Rng& rng) { return check_unary(apply, shape, rng, lo, hi); };
    };
    static const std::vector<Case> cases = {
        {"add", [](Rng& rng) {
             auto a = rand_t({3, 4}, rng), b = rand_t({3, 4}, rng), r = rand_t({3, 4}, rng);
             return gradcheck(
                 [&](Graph64& g) { return contract(g, g.add(g.leaf(a), g.leaf(b)), r); },
                 {&a, &b});
         }},
        {"sub", [](Rng& rng) {
             auto a = rand_t({3, 4}, rng), b = rand_t({3, 4}, rng), r = rand_t({3, 4}, rng);
             return gradcheck(
                 [&](Graph64& g) { return contract(g, g.sub(g.leaf(a), g.leaf(b)), r); },
                 {&a, &b});
         }},
        {"mul", [](Rng& rng) {
             auto a = rand_t({3, 4}, rng), b = rand_t({3, 4}, rng), r = rand_t({3, 4}, rng);
             return gradcheck(
                 [&](Graph64& g) { return contract(g, g.mul(g.leaf(a), g.leaf(b)), r); },
                 {&a, &b});
         }},
        {"scale", un([](Graph64& g, int x) { return g.scale(x, 2.5); }, {3, 4})},
        {"add_scalar", un([](Graph64& g, int x) { return g.add_scalar(x, -1.25); }, {3, 4})},
        {"sum", [](Rng& rng) {
             auto x = rand_t({3, 4}, rng);
             return gradcheck([&](Graph64& g) { return g.sum(g.leaf(x)); }, {&x});
         }},
        {"matmul", [](Rng& rng) {
             auto a = rand_t({2, 3, 4}, rng), b = rand_t({2, 4, 5}, rng);
             auto r = rand_t({2, 3, 5}, rng);
             return gradcheck(
                 [&](Graph64& g) { return contract(g, g.matmul(g.leaf(a), g.leaf(b)), r); },
                 {&a, &b});
         }},
        {"matmul_broadcast", [](Rng& rng) {
             auto a = rand_t({3, 2, 4}, rng), b = rand_t({4, 5}, rng);
             auto r = rand_t({3, 2, 5}, rng);
             return gradcheck(
                 [&](Graph64& g) { return contract(g, g.matmul(g.leaf(a), g.leaf(b)), r); },
                 {&a, &b});
         }},
        {"transpose_last", un([](Graph64& g, int x) { return g.transpose_last(x); }, {3, 4})},
        {"conv2d", [](Rng& rng) { return check_conv(rng, {1, 2, 5, 5}, {3, 2, 3, 3}, {1, 1, 1}); }},
        {"conv2d_strided",
         [](Rng& rng) { return check_conv(rng, {2, 2, 6, 6}, {2, 2, 3, 3}, {2, 1, 1}); }},
        {"conv2d_depthwise",
         [](Rng& rng) { return check_conv(rng, {1, 4, 5, 5}, {4, 1, 3, 3}, {1, 1, 4}); }},
        {"conv2d_pointwise",
         [](Rng& rng) { return check_conv(rng, {1, 3, 4, 4}, {5, 3, 1, 1}, {1, 0, 1}); }},
        {"silu", un([](Graph64& g, int x) { return g.silu(x); }, {3, 4}, -3, 3)},
        {"sigmoid", un([](Graph64& g, int x) { return g.sigmoid(x); }, {3, 4}, -3, 3)},
        {"exp", un([](Graph64& g, int x) { return g.exp(x); }, {3, 4}, -2, 2)},
        {"sqrt", un([](Graph64& g, int x) { return g.sqrt(x); }, {3, 4}, 0.5, 1.5)},
        {"softplus", un([](Graph64& g, int x) { return g.softplus(x); }, {3, 4}, -3, 3)},
        {"softmax", un([](Graph64& g, int x) { return g.softmax(x, 1); }, {3, 7}, -4, 4)},
        {"concat", [](Rng& rng) {
             auto a = rand_t({2, 3}, rng), b = rand_t({2, 2}, rng), r = rand_t({2, 5}, rng);
             return gradcheck(
                 [&](Graph64& g) {
                     return contract(g, g.concat({g.leaf(a), g.leaf(b)}, 1), r);
                 },
                 {&a, &b});
         }},
        {"slice", un([](Graph64& g, int x) { return g.slice(x, 1, 1, 2); }, {3, 4})},
        {"reshape", un([](Graph64& g, int x) { return g.reshape(x, {4, 3}); }, {3, 4})},
        {"upsample2x", un([](Graph64& g, int x) { return g.upsample2x(x); }, {1, 2, 3, 3})},
        {"channel_affine", [](Rng& rng) {
             auto x = rand_t({2, 3, 4, 4}, rng);
             auto s = rand_t({3}, rng, 0.5, 1.5);
             auto b = rand_t({3}, rng);
             auto r = rand_t({2, 3, 4, 4}, rng);
             return gradcheck(
                 [&](Graph64& g) {
                     return contract(g, g.channel_affine(g.leaf(x), g.leaf(s), g.leaf(b)), r);
                 },
                 {&x, &s, &b});
         }},
        {"conv_unit", [](Rng& rng) {
             nn::ConvUnitT<double> cu(3, 4, 3, 1, 1, true, rng);
             return check_block(rng, {1, 3, 5, 5}, cu,
                                [](auto& ctx, int x, auto& s) { return s.record(ctx, x); });
         }},
        {"multi_kernel_conv", [](Rng& rng) {
             nn::MultiKernelConvSpecT<double> spec(3, 4, {{1, 1}, {3, 3}}, 1, rng);
             return check_block(rng, {1, 3, 5, 5}, spec, [](auto& ctx, int x, auto& s) {
                 return nn::record_multi_kernel_conv(ctx, x, s);
             });
         }},
        {"sep_conv7x7", [](Rng& rng) {
             nn::SepConv7x7T<double> spec(4, rng);
             return check_block(rng, {1, 4, 8, 8}, spec, [](auto& ctx, int x, auto& s) {
                 return nn::record_sep_conv7x7(ctx, x, s);
             });
         }},
        {"r_elan", [](Rng& rng) {
             nn::RELANSpecT<double> spec(3, 4, 1, 0.5, 1.0, rng);
             return check_block(rng, {1, 3, 4, 4}, spec, [](auto& ctx, int x, auto& s) {
                 return nn::record_r_elan(ctx, x, s);
             });
         }},
        {"attn_block", [](Rng& rng) {
             nn::AttnBlockSpecT<double> spec(4, acfg(2, 2), 1.0, rng);
             return check_block(rng, {1, 4, 2, 2}, spec, [](auto& ctx, int x, auto& s) {
                 return nn::record_attn_block(ctx, x, s);
             });
         }},
        {"detection_loss", check_detection_loss},
    };
    return cases;
}

}  // namespace

std::vector<SuiteEntry> run_gradcheck_suite(uint64_t seed, double tol) {
    const char* sabotage = std::getenv("Y12_GRADCHECK_SABOTAGE");
    std::vector<SuiteEntry> out;
    const auto& cases = suite_cases();
    for (size_t i = 0; i < cases.size(); ++i) {
        Rng rng(seed ^ (0x9e3779b97f4a7c15ull * (i + 1)));
        double err = cases[i].run(rng);
        if (sabotage && cases[i].name == std::string(sabotage)) err = std::max(err, 1.0);
        out.push_back({cases[i].name, err, std::isfinite(err) && err <= tol});
    }
    return out;
}

}  // namespace y12::gc
