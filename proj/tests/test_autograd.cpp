#include <doctest.h>

#include "util.hpp"
#include "y12/autograd.hpp"

using namespace y12;
using namespace y12::testutil;

namespace {

// Contract the output against a fixed random tensor so every coordinate of
// the result contributes to the checked scalar.
int contract(Graph64& g, int node, const Tensor64& r) {
    return g.sum(g.mul(node, g.input(r)));
}

double check_unary(const std::function<int(Graph64&, int)>& apply, std::vector<int64_t> shape,
                   uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    auto x = random_tensor<double>(shape, rng, lo, hi);
    auto r = random_tensor<double>(shape, rng);
    return gradcheck(
        [&](Graph64& g) {
            const int out = apply(g, g.leaf(x));
            Tensor64 rr = r;
            rr.data.resize(static_cast<size_t>(g.val(out).numel()));
            Rng rr_rng(seed ^ 0xabcdefull);
            fill_uniform(rr, rr_rng);
            rr.shape = g.val(out).shape;
            return contract(g, out, rr);
        },
        {&x});
}

}  // namespace

TEST_CASE("gradcheck validates its own inputs") {
    Rng rng(1);
    auto x = random_tensor<double>({3}, rng);
    auto build = [&](Graph64& g) { return g.sum(g.leaf(x)); };
    CHECK_THROWS_AS(gradcheck(build, {&x}, 1e-8), contract_error);
    CHECK_THROWS_AS(gradcheck(build, {&x}, 1e-2), contract_error);
    // non-scalar composite
    auto bad = [&](Graph64& g) { return g.leaf(x); };
    CHECK_THROWS_AS(gradcheck(bad, {&x}), contract_error);
    // non-deterministic composite
    int calls = 0;
    auto flaky = [&](Graph64& g) {
        ++calls;
        return g.sum(g.add_scalar(g.leaf(x), static_cast<double>(calls)));
    };
    CHECK_THROWS_AS(gradcheck(flaky, {&x}), contract_error);
}

TEST_CASE("backward requires a scalar loss") {
    Rng rng(2);
    auto x = random_tensor<double>({2, 2}, rng);
    Graph64 g;
    const int id = g.leaf(x);
    CHECK_THROWS_AS(g.backward(id), contract_error);
}

TEST_CASE("unreachable leaves get a zero gradient") {
    Rng rng(3);
    auto x = random_tensor<double>({3}, rng);
    auto y = random_tensor<double>({3}, rng);
    Graph64 g;
    const int xi = g.leaf(x);
    g.leaf(y);
    g.backward(g.sum(xi));
    REQUIRE(!x.grad.empty());
    REQUIRE(!y.grad.empty());
    for (double v : x.grad) CHECK(v == 1.0);
    for (double v : y.grad) CHECK(v == 0.0);
}

TEST_CASE("gradients accumulate across backward calls") {
    Rng rng(4);
    auto x = random_tensor<double>({4}, rng);
    for (int pass = 0; pass < 2; ++pass) {
        Graph64 g;
        g.backward(g.sum(g.leaf(x)));
    }
    for (double v : x.grad) CHECK(v == 2.0);
}

TEST_CASE("replay reproduces the tape bit for bit") {
    Rng rng(5);
    auto x = random_tensor<double>({2, 3, 4, 4}, rng);
    auto w = random_tensor<double>({5, 3, 3, 3}, rng);
    Graph64 g;
    const int c = g.conv2d(g.leaf(x), g.leaf(w), -1, {1, 1, 1});
    g.sum(g.silu(c));
    CHECK(g.replay_matches());
}

TEST_CASE("elementwise primitives pass gradcheck") {
    const double tol = 1e-7;
    CHECK(check_unary([](Graph64& g, int x) { return g.silu(x); }, {3, 4}, 10, -3, 3) < tol);
    CHECK(check_unary([](Graph64& g, int x) { return g.sigmoid(x); }, {3, 4}, 11, -3, 3) < tol);
    CHECK(check_unary([](Graph64& g, int x) { return g.exp(x); }, {3, 4}, 12, -2, 2) < tol);
    CHECK(check_unary([](Graph64& g, int x) { return g.sqrt(x); }, {3, 4}, 13, 0.5, 1.5) < tol);
    CHECK(check_unary([](Graph64& g, int x) { return g.softplus(x); }, {3, 4}, 14, -3, 3) < tol);
    CHECK(check_unary([](Graph64& g, int x) { return g.scale(x, 2.5); }, {3, 4}, 15) < tol);
    CHECK(check_unary([](Graph64& g, int x) { return g.add_scalar(x, -1.25); }, {3, 4}, 16) < tol);
    CHECK(check_unary([](Graph64& g, int x) { return g.softmax(x, 1); }, {3, 7}, 17, -4, 4) < tol);
    CHECK(check_unary([](Graph64& g, int x) { return g.reshape(x, {4, 3}); }, {3, 4}, 18) < tol);
    CHECK(check_unary([](Graph64& g, int x) { return g.transpose_last(x); }, {3, 4}, 19) < tol);
    CHECK(check_unary([](Graph64& g, int x) { return g.upsample2x(x); }, {1, 2, 3, 3}, 20) < tol);
    CHECK(check_unary([](Graph64& g, int x) { return g.slice(x, 1, 1, 2); }, {3, 4}, 21) < tol);
}

TEST_CASE("binary primitives pass gradcheck") {
    Rng rng(30);
    auto a = random_tensor<double>({3, 4}, rng);
    auto b = random_tensor<double>({3, 4}, rng);
    auto r = random_tensor<double>({3, 4}, rng);
    auto with = [&](auto op) {
        return gradcheck(
            [&](Graph64& g) { return contract(g, op(g, g.leaf(a), g.leaf(b)), r); }, {&a, &b});
    };
    CHECK(with([](Graph64& g, int x, int y) { return g.add(x, y); }) < 1e-7);
    CHECK(with([](Graph64& g, int x, int y) { return g.sub(x, y); }) < 1e-7);
    CHECK(with([](Graph64& g, int x, int y) { return g.mul(x, y); }) < 1e-7);
}

TEST_CASE("matmul passes gradcheck") {
    Rng rng(31);
    SUBCASE("batched") {
        auto a = random_tensor<double>({2, 3, 4}, rng);
        auto b = random_tensor<double>({2, 4, 5}, rng);
        auto r = random_tensor<double>({2, 3, 5}, rng);
        CHECK(gradcheck([&](Graph64& g) { return contract(g, g.matmul(g.leaf(a), g.leaf(b)), r); },
                        {&a, &b}) < 1e-7);
    }
    SUBCASE("broadcast rhs") {
        auto a = random_tensor<double>({3, 2, 4}, rng);
        auto b = random_tensor<double>({4, 5}, rng);
        auto r = random_tensor<double>({3, 2, 5}, rng);
        CHECK(gradcheck([&](Graph64& g) { return contract(g, g.matmul(g.leaf(a), g.leaf(b)), r); },
                        {&a, &b}) < 1e-7);
    }
}

TEST_CASE("conv2d passes gradcheck") {
    Rng rng(32);
    struct Case {
        std::vector<int64_t> xs, ws;
        ops::Conv2dAttrs at;
    };
    const Case cases[] = {
        {{1, 2, 5, 5}, {3, 2, 3, 3}, {1, 1, 1}},
        {{2, 2, 6, 6}, {2, 2, 3, 3}, {2, 1, 1}},
        {{1, 4, 5, 5}, {4, 1, 3, 3}, {1, 1, 4}},  // depthwise
        {{1, 3, 4, 4}, {5, 3, 1, 1}, {1, 0, 1}},  // pointwise
    };
    for (const auto& c : cases) {
        auto x = random_tensor<double>(c.xs, rng);
        auto w = random_tensor<double>(c.ws, rng);
        auto b = random_tensor<double>({c.ws[0]}, rng);
        Graph64 probe;
        const auto out_shape =
            probe.val(probe.conv2d(probe.input(x), probe.input(w), probe.input(b), c.at)).shape;
        auto r = random_tensor<double>(out_shape, rng);
        const double err = gradcheck(
            [&](Graph64& g) {
                return contract(g, g.conv2d(g.leaf(x), g.leaf(w), g.leaf(b), c.at), r);
            },
            {&x, &w, &b});
        CHECK(err < 1e-6);
    }
}

TEST_CASE("concat routes gradients to the right inputs") {
    Rng rng(33);
    auto a = random_tensor<double>({2, 3}, rng);
    auto b = random_tensor<double>({2, 2}, rng);
    auto r = random_tensor<double>({2, 5}, rng);
    CHECK(gradcheck(
              [&](Graph64& g) {
                  return contract(g, g.concat({g.leaf(a), g.leaf(b)}, 1), r);
              },
              {&a, &b}) < 1e-7);
}

TEST_CASE("channel_affine passes gradcheck") {
    Rng rng(34);
    auto x = random_tensor<double>({2, 3, 4, 4}, rng);
    auto s = random_tensor<double>({3}, rng, 0.5, 1.5);
    auto b = random_tensor<double>({3}, rng);
    auto r = random_tensor<double>({2, 3, 4, 4}, rng);
    CHECK(gradcheck(
              [&](Graph64& g) {
                  return contract(g, g.channel_affine(g.leaf(x), g.leaf(s), g.leaf(b)), r);
              },
              {&x, &s, &b}) < 1e-7);
}

TEST_CASE("composite expression matches hand gradient") {
    // f(x) = sum(silu(x) * x) over a small deterministic input
    Tensor64 x = Tensor64::from({3}, {-1.0, 0.5, 2.0});
    Graph64 g;
    const int xi = g.leaf(x);
    g.backward(g.sum(g.mul(g.silu(xi), xi)));
    for (int i = 0; i < 3; ++i) {
        const double v = x.data[static_cast<size_t>(i)];
        const double s = 1.0 / (1.0 + std::exp(-v));
        const double dsilu = s + v * s * (1.0 - s);
        const double expect = dsilu * v + v * s;  // product rule
        CHECK(x.grad[static_cast<size_t>(i)] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("deep composite passes gradcheck") {
    Rng rng(35);
    auto x = random_tensor<double>({1, 2, 6, 6}, rng);
    auto w1 = random_tensor<double>({4, 2, 3, 3}, rng, -0.5, 0.5);
    auto w2 = random_tensor<double>({2, 4, 3, 3}, rng, -0.5, 0.5);
    auto s = random_tensor<double>({4}, rng, 0.8, 1.2);
    auto b = random_tensor<double>({4}, rng, -0.1, 0.1);
    const double err = gradcheck(
        [&](Graph64& g) {
            const int c1 = g.conv2d(g.leaf(x), g.leaf(w1), -1, {1, 1, 1});
            const int a1 = g.silu(g.channel_affine(c1, g.leaf(s), g.leaf(b)));
            const int c2 = g.conv2d(a1, g.leaf(w2), -1, {1, 1, 1});
            return g.sum(g.mul(c2, c2));
        },
        {&x, &w1, &w2, &s, &b});
    CHECK(err < 1e-6);
}
