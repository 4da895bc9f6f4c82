#include <doctest.h>

#include "util.hpp"
#include "y12/blocks.hpp"

using namespace y12;
using namespace y12::testutil;
namespace nn = y12::nn;
namespace ops = y12::ops;

namespace {

template <typename Spec>
std::vector<Tensor64*> collect_params(Spec& spec) {
    std::vector<Tensor64*> out;
    spec.visit("p", [&](const std::string&, Tensor64& t) { out.push_back(&t); });
    return out;
}

template <typename Spec>
void zero_params(Spec& spec) {
    spec.visit("p", [](const std::string&, auto& t) {
        std::fill(t.data.begin(), t.data.end(), 0.0f);
    });
}

attn::AttentionConfig acfg(int heads, int areas) {
    attn::AttentionConfig c;
    c.num_heads = heads;
    c.num_areas = areas;
    return c;
}

}  // namespace

TEST_CASE("multi_kernel_conv with one branch equals conv2d + silu") {
    Rng rng(1);
    nn::MultiKernelConvSpec spec(3, 5, {{3, 3}}, 1, rng);
    auto x = random_tensor<float>({2, 3, 8, 8}, rng);
    auto expect = ops::silu(ops::conv2d(x, spec.weights[0], &spec.biases[0], {1, 1, 1}));
    CHECK(max_abs_diff(nn::multi_kernel_conv(x, spec), expect) == 0.0);
}

TEST_CASE("two 1x1 branches collapse to one with summed weights") {
    Rng rng(2);
    nn::MultiKernelConvSpec two(4, 4, {{1, 1}, {1, 1}}, 1, rng);
    fill_uniform(two.biases[0], rng);
    fill_uniform(two.biases[1], rng);
    nn::MultiKernelConvSpec one(4, 4, {{1, 1}}, 1, rng);
    for (int64_t i = 0; i < one.weights[0].numel(); ++i)
        one.weights[0].data[i] = two.weights[0].data[i] + two.weights[1].data[i];
    for (int64_t i = 0; i < 4; ++i)
        one.biases[0].data[i] = two.biases[0].data[i] + two.biases[1].data[i];
    auto x = random_tensor<float>({1, 4, 6, 6}, rng);
    CHECK(max_abs_diff(nn::multi_kernel_conv(x, two), nn::multi_kernel_conv(x, one)) < 1e-6);
}

TEST_CASE("mixed 3x3 and 1x1 branches match the per-branch oracle") {
    Rng rng(3);
    nn::MultiKernelConvSpec spec(3, 6, {{3, 3}, {1, 1}}, 1, rng);
    fill_uniform(spec.biases[0], rng);
    fill_uniform(spec.biases[1], rng);
    auto x = random_tensor<float>({2, 3, 7, 9}, rng);
    auto b0 = ops::conv2d(x, spec.weights[0], &spec.biases[0], {1, 1, 1});
    auto b1 = ops::conv2d(x, spec.weights[1], &spec.biases[1], {1, 0, 1});
    CHECK(max_abs_diff(nn::multi_kernel_conv(x, spec), ops::silu(ops::add(b0, b1))) < 1e-6);
}

TEST_CASE("multi_kernel_conv rejects kernels that cannot align") {
    Rng rng(4);
    CHECK_THROWS_AS(nn::MultiKernelConvSpec(3, 4, {{2, 2}}, 1, rng), config_error);
    CHECK_THROWS_AS(nn::MultiKernelConvSpec(3, 4, {{3, 1}}, 1, rng), config_error);
    CHECK_THROWS_AS(nn::MultiKernelConvSpec(3, 4, {}, 1, rng), config_error);
}

TEST_CASE("strided multi_kernel_conv keeps branch shapes aligned") {
    Rng rng(5);
    nn::MultiKernelConvSpec spec(3, 4, {{3, 3}, {1, 1}}, 2, rng);
    auto x = random_tensor<float>({1, 3, 9, 9}, rng);
    auto y = nn::multi_kernel_conv(x, spec);
    CHECK(y.shape == std::vector<int64_t>{1, 4, 5, 5});
}

TEST_CASE("sep_conv7x7 with delta kernels is the identity") {
    Rng rng(6);
    nn::SepConv7x7 p(5, rng);
    std::fill(p.dw.data.begin(), p.dw.data.end(), 0.0f);
    std::fill(p.pw.data.begin(), p.pw.data.end(), 0.0f);
    std::fill(p.dw_bias.data.begin(), p.dw_bias.data.end(), 0.0f);
    std::fill(p.pw_bias.data.begin(), p.pw_bias.data.end(), 0.0f);
    for (int64_t c = 0; c < 5; ++c) {
        p.dw.at(c, 0, 3, 3) = 1.0f;  // centered delta
        p.pw.at(c, c, 0, 0) = 1.0f;  // identity mix
    }
    auto x = random_tensor<float>({2, 5, 6, 7}, rng);
    CHECK(max_abs_diff(nn::sep_conv7x7_position(x, p), x) == 0.0);
}

TEST_CASE("sep_conv7x7 parameter count is 49C + C^2 + 2C") {
    Rng rng(7);
    nn::SepConv7x7 p(16, rng);
    CHECK(p.param_count() == 49 * 16 + 16 * 16 + 2 * 16);
    CHECK(p.param_count() == 1072);
    int64_t enumerated = 0;
    p.visit("p", [&](const std::string&, Tensor& t) { enumerated += t.numel(); });
    CHECK(enumerated == p.param_count());
}

TEST_CASE("sep_conv7x7 matches explicit primitive composition") {
    Rng rng(8);
    nn::SepConv7x7 p(4, rng);
    fill_uniform(p.dw_bias, rng);
    fill_uniform(p.pw_bias, rng);
    auto x = random_tensor<float>({1, 4, 9, 9}, rng);
    auto mid = ops::conv2d(x, p.dw, &p.dw_bias, {1, 3, 4});
    auto expect = ops::conv2d(mid, p.pw, &p.pw_bias, {1, 0, 1});
    CHECK(max_abs_diff(nn::sep_conv7x7_position(x, p), expect) == 0.0);
}

TEST_CASE("r_elan with both paths dead is zero") {
    Rng rng(9);
    nn::RELANSpec spec(4, 4, 2, 0.5, 0.0, rng);
    std::fill(spec.exit_.w.data.begin(), spec.exit_.w.data.end(), 0.0f);
    auto x = random_tensor<float>({1, 4, 6, 6}, rng);
    auto y = nn::r_elan_block(x, spec);
    for (float v : y.data) CHECK(v == 0.0f);
}

TEST_CASE("r_elan pure residual passes input through") {
    Rng rng(10);
    nn::RELANSpec spec(4, 4, 2, 0.5, 1.0, rng);
    std::fill(spec.exit_.w.data.begin(), spec.exit_.w.data.end(), 0.0f);
    auto x = random_tensor<float>({2, 4, 5, 5}, rng);
    CHECK(max_abs_diff(nn::r_elan_block(x, spec), x) == 0.0);
}

TEST_CASE("r_elan channel projection and shape handling") {
    Rng rng(11);
    nn::RELANSpec spec(3, 8, 2, 0.5, 1.0, rng);
    CHECK(spec.hidden == 4);
    auto x = random_tensor<float>({2, 3, 6, 6}, rng);
    auto y = nn::r_elan_block(x, spec);
    CHECK(y.shape == std::vector<int64_t>{2, 8, 6, 6});
    CHECK(spec.proj.numel() == 3 * 8);
    // same-channel spec has no projection
    nn::RELANSpec same(8, 8, 1, 0.5, 1.0, rng);
    CHECK(same.proj.numel() == 0);
    CHECK_THROWS_AS(nn::RELANSpec(3, 8, 0, 0.5, 1.0, rng), config_error);
    CHECK_THROWS_AS(nn::RELANSpec(3, 8, 1, 1.5, 1.0, rng), config_error);
}

TEST_CASE("r_elan record path reproduces forward exactly") {
    Rng rng(12);
    nn::RELANSpec spec(3, 6, 2, 0.5, 1.0, rng);
    auto x = random_tensor<float>({1, 3, 6, 6}, rng);
    Graph g;
    nn::TapeCtx<float> ctx(g);
    const int out = nn::record_r_elan(ctx, g.input(x), spec);
    CHECK(max_abs_diff(g.val(out), nn::r_elan_block(x, spec)) == 0.0);
    CHECK(g.replay_matches());
}

TEST_CASE("r_elan gradcheck") {
    Rng rng(13);
    nn::RELANSpecT<double> spec(3, 4, 1, 0.5, 1.0, rng);
    auto x = random_tensor<double>({1, 3, 4, 4}, rng);
    auto r = random_tensor<double>({1, 4, 4, 4}, rng);
    auto params = collect_params(spec);
    params.push_back(&x);
    const double err = gradcheck(
        [&](Graph64& g) {
            nn::TapeCtx<double> ctx(g);
            const int out = nn::record_r_elan(ctx, ctx.bind(x), spec);
            return g.sum(g.mul(out, g.input(r)));
        },
        params);
    CHECK(err <= 1e-4);
}

TEST_CASE("attn_block with zeroed parameters is the identity") {
    Rng rng(14);
    nn::AttnBlockSpec spec(4, acfg(2, 2), 2.0, rng);
    zero_params(spec);
    auto x = random_tensor<float>({2, 4, 2, 4}, rng);
    CHECK(max_abs_diff(nn::attn_block(x, spec), x) == 0.0);
}

TEST_CASE("attn_block preserves shape and validates divisibility") {
    Rng rng(15);
    nn::AttnBlockSpec spec(8, acfg(4, 4), 2.0, rng);
    CHECK(spec.attention.head_dim == 2);
    CHECK(spec.mlp_hidden == 16);
    auto x = random_tensor<float>({2, 8, 4, 4}, rng);
    CHECK(nn::attn_block(x, spec).shape == x.shape);
    // 3*5 tokens not divisible by 4 areas
    auto bad = random_tensor<float>({1, 8, 3, 5}, rng);
    CHECK_THROWS_AS(nn::attn_block(bad, spec), config_error);
    CHECK_THROWS_AS(nn::AttnBlockSpec(6, acfg(4, 1), 2.0, rng), config_error);
    CHECK_THROWS_AS(nn::AttnBlockSpec(8, acfg(4, 1), -1.0, rng), config_error);
}

TEST_CASE("attn_block tiled and naive kernels agree") {
    Rng rng(16);
    nn::AttnBlockSpec spec(8, acfg(2, 4), 2.0, rng);
    auto x = random_tensor<float>({2, 8, 4, 6}, rng);
    auto tiled = nn::attn_block(x, spec, nn::AttnKernel::tiled);
    auto naive = nn::attn_block(x, spec, nn::AttnKernel::naive);
    CHECK(max_abs_diff(tiled, naive) <= 1e-5);
}

TEST_CASE("attn_block record path tracks the inference path") {
    Rng rng(17);
    nn::AttnBlockSpec spec(4, acfg(2, 2), 1.5, rng);
    auto x = random_tensor<float>({1, 4, 2, 4}, rng);
    Graph g;
    nn::TapeCtx<float> ctx(g);
    const int out = nn::record_attn_block(ctx, g.input(x), spec);
    CHECK(max_abs_diff(g.val(out), nn::attn_block(x, spec)) <= 1e-5);
    CHECK(max_abs_diff(g.val(out), nn::attn_block(x, spec, nn::AttnKernel::naive)) <= 1e-6);
    CHECK(g.replay_matches());
}

TEST_CASE("attn_block gradcheck") {
    Rng rng(18);
    nn::AttnBlockSpecT<double> spec(4, acfg(2, 2), 1.0, rng);
    auto x = random_tensor<double>({1, 4, 2, 2}, rng);
    auto r = random_tensor<double>({1, 4, 2, 2}, rng);
    auto params = collect_params(spec);
    params.push_back(&x);
    const double err = gradcheck(
        [&](Graph64& g) {
            nn::TapeCtx<double> ctx(g);
            const int out = nn::record_attn_block(ctx, ctx.bind(x), spec);
            return g.sum(g.mul(out, g.input(r)));
        },
        params);
    CHECK(err <= 1e-4);
}

TEST_CASE("attn_block stays finite on bounded inputs at doubled scale") {
    Rng rng(19);
    nn::AttnBlockSpec spec(8, acfg(2, 4), 2.0, rng);
    auto x = random_tensor<float>({1, 8, 4, 4}, rng, -10.0, 10.0);
    CHECK(nn::attn_block(x, spec).all_finite());
    CHECK(nn::attn_block(ops::scale(x, 2.0f), spec).all_finite());
}

TEST_CASE("block parameter counts match enumeration") {
    Rng rng(20);
    nn::RELANSpec relan(6, 8, 2, 0.5, 1.0, rng);
    int64_t n = 0;
    relan.visit("p", [&](const std::string&, Tensor& t) { n += t.numel(); });
    CHECK(n == relan.param_count());

    nn::AttnBlockSpec ab(8, acfg(2, 4), 2.0, rng);
    n = 0;
    std::vector<std::string> names;
    ab.visit("p", [&](const std::string& name, Tensor& t) {
        n += t.numel();
        names.push_back(name);
    });
    CHECK(n == ab.param_count());
    // registered names are unique
    auto sorted = names;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());

    nn::MultiKernelConvSpec mk(3, 5, {{3, 3}, {1, 1}}, 1, rng);
    CHECK(mk.param_count() == (9 * 3 * 5 + 5) + (3 * 5 + 5));
}
