#pragma once

#include <cstring>
#include <functional>

#include "y12/ops.hpp"

namespace y12 {

/// Taped reverse-mode differentiation. Recording a forward pass appends one
/// node per primitive application; backward() walks the tape in reverse and
/// accumulates gradients into the leaf parameters' grad buffers.
template <typename T>
class GraphT {
public:
    enum class Op {
        Leaf,
        Input,
        Add,
        Sub,
        Mul,
        Scale,
        AddScalar,
        Sum,
        Matmul,
        TransposeLast,
        Conv2d,
        Silu,
        Sigmoid,
        Exp,
        Sqrt,
        Softplus,
        Softmax,
        Concat,
        Slice,
        Reshape,
        Upsample2x,
        ChannelAffine,
    };

    struct Node {
        Op op;
        std::vector<int> inputs;
        TensorT<T> value;
        TensorT<T>* param = nullptr;  // leaves only
        ops::Conv2dAttrs conv;
        int axis = 0;
        int64_t start = 0, len = 0;
        T scalar = T(0);
        std::vector<int64_t> shape_attr;
    };

    int leaf(TensorT<T>& p) {
        Node n;
        n.op = Op::Leaf;
        n.value = p;
        n.param = &p;
        return push(std::move(n));
    }

    /// Constant input; no gradient flows into it.
    int input(TensorT<T> v) {
        Node n;
        n.op = Op::Input;
        n.value = std::move(v);
        return push(std::move(n));
    }

    int add(int a, int b) { return binary(Op::Add, a, b); }
    int sub(int a, int b) { return binary(Op::Sub, a, b); }
    int mul(int a, int b) { return binary(Op::Mul, a, b); }

    int scale(int a, T c) {
        Node n;
        n.op = Op::Scale;
        n.inputs = {a};
        n.scalar = c;
        return push(std::move(n));
    }

    int add_scalar(int a, T c) {
        Node n;
        n.op = Op::AddScalar;
        n.inputs = {a};
        n.scalar = c;
        return push(std::move(n));
    }

    int sum(int a) { return unary(Op::Sum, a); }
    int matmul(int a, int b) { return binary(Op::Matmul, a, b); }
    int transpose_last(int a) { return unary(Op::TransposeLast, a); }

    int conv2d(int x, int w, int bias, ops::Conv2dAttrs at) {
        Node n;
        n.op = Op::Conv2d;
        n.inputs = bias >= 0 ? std::vector<int>{x, w, bias} : std::vector<int>{x, w};
        n.conv = at;
        return push(std::move(n));
    }

    int silu(int a) { return unary(Op::Silu, a); }
    int sigmoid(int a) { return unary(Op::Sigmoid, a); }
    int exp(int a) { return unary(Op::Exp, a); }
    int sqrt(int a) { return unary(Op::Sqrt, a); }
    int softplus(int a) { return unary(Op::Softplus, a); }

    int softmax(int a, int axis) {
        Node n;
        n.op = Op::Softmax;
        n.inputs = {a};
        n.axis = axis;
        return push(std::move(n));
    }

    int concat(const std::vector<int>& parts, int axis) {
        Node n;
        n.op = Op::Concat;
        n.inputs = parts;
        n.axis = axis;
        return push(std::move(n));
    }

    int slice(int a, int axis, int64_t start, int64_t len) {
        Node n;
        n.op = Op::Slice;
        n.inputs = {a};
        n.axis = axis;
        n.start = start;
        n.len = len;
        return push(std::move(n));
    }

    int reshape(int a, std::vector<int64_t> shape) {
        Node n;
        n.op = Op::Reshape;
        n.inputs = {a};
        n.shape_attr = std::move(shape);
        return push(std::move(n));
    }

    int upsample2x(int a) { return unary(Op::Upsample2x, a); }

    int channel_affine(int x, int s, int b) {
        Node n;
        n.op = Op::ChannelAffine;
        n.inputs = {x, s, b};
        return push(std::move(n));
    }

    const TensorT<T>& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    size_t num_nodes() const { return nodes_.size(); }

    /// Reverse sweep from a scalar loss node. Accumulates into the grad
    /// buffer of every leaf parameter; leaves unreachable from the loss get
    /// a zero (but allocated) gradient.
    void backward(int loss) {
        const auto& ln = node(loss);
        if (ln.value.numel() != 1)
            throw contract_error("backward: loss must be scalar, got " + ln.value.shape_str());
        grads_.assign(nodes_.size(), {});
        grad_of(loss).assign(1, T(1));

        for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            auto& g = grads_[static_cast<size_t>(id)];
            if (g.empty()) continue;  // not reachable from loss
            backprop(n, g);
        }
        for (auto& n : nodes_) {
            if (n.op != Op::Leaf) continue;
            n.param->ensure_grad();
            const auto& g = grads_[static_cast<size_t>(&n - nodes_.data())];
            if (g.empty()) continue;
            for (size_t i = 0; i < g.size(); ++i) n.param->grad[i] += g[i];
        }
        grads_.clear();
    }

    /// Recomputes every non-leaf node from its recorded inputs and checks
    /// the result against the stored value, bit for bit.
    bool replay_matches() const {
        for (const Node& n : nodes_) {
            if (n.op == Op::Leaf || n.op == Op::Input) continue;
            TensorT<T> redo = eval(n);
            if (redo.shape != n.value.shape) return false;
            if (std::memcmp(redo.data.data(), n.value.data.data(),
                            redo.data.size() * sizeof(T)) != 0)
                return false;
        }
        return true;
    }

private:
    std::vector<Node> nodes_;
    std::vector<std::vector<T>> grads_;

    Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

    int unary(Op op, int a) {
        Node n;
        n.op = op;
        n.inputs = {a};
        return push(std::move(n));
    }
    int binary(Op op, int a, int b) {
        Node n;
        n.op = op;
        n.inputs = {a, b};
        return push(std::move(n));
    }

    int push(Node n) {
        if (n.op != Op::Leaf && n.op != Op::Input) n.value = eval(n);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    TensorT<T> eval(const Node& n) const {
        auto in = [&](int i) -> const TensorT<T>& { return node(n.inputs[size_t(i)]).value; };
        switch (n.op) {
            case Op::Add: return ops::add(in(0), in(1));
            case Op::Sub: return ops::sub(in(0), in(1));
            case Op::Mul: return ops::mul(in(0), in(1));
            case Op::Scale: return ops::scale(in(0), n.scalar);
            case Op::AddScalar: return ops::add_scalar(in(0), n.scalar);
            case Op::Sum: return ops::sum(in(0));
            case Op::Matmul: return ops::matmul(in(0), in(1));
            case Op::TransposeLast: return ops::transpose_last(in(0));
            case Op::Conv2d:
                return ops::conv2d(in(0), in(1), n.inputs.size() > 2 ? &in(2) : nullptr, n.conv);
            case Op::Silu: return ops::silu(in(0));
            case Op::Sigmoid: return ops::sigmoid(in(0));
            case Op::Exp: return ops::exp(in(0));
            case Op::Sqrt: return ops::sqrt(in(0));
            case Op::Softplus: return ops::softplus(in(0));
            case Op::Softmax: return ops::softmax(in(0), n.axis);
            case Op::Concat: {
                std::vector<const TensorT<T>*> parts;
                for (int i : n.inputs) parts.push_back(&node(i).value);
                return ops::concat<T>({parts.data(), parts.size()}, n.axis);
            }
            case Op::Slice: return ops::slice(in(0), n.axis, n.start, n.len);
            case Op::Reshape: return ops::reshape(in(0), n.shape_attr);
            case Op::Upsample2x: return ops::upsample_nearest2x(in(0));
            case Op::ChannelAffine: return ops::channel_affine(in(0), in(1), in(2));
            case Op::Leaf:
            case Op::Input: break;
        }
        throw contract_error("eval: unexpected op");
    }

    std::vector<T>& grad_of(int id) {
        auto& g = grads_[static_cast<size_t>(id)];
        if (g.empty()) g.assign(node(id).value.data.size(), T(0));
        return g;
    }

    void backprop(const Node& n, const std::vector<T>& g) {
        auto inval = [&](int i) -> const TensorT<T>& { return node(n.inputs[size_t(i)]).value; };
        auto ingrad = [&](int i) -> std::vector<T>& { return grad_of(n.inputs[size_t(i)]); };
        switch (n.op) {
            case Op::Leaf:
            case Op::Input: return;
            case Op::Add: {
                auto &ga = ingrad(0), &gb = ingrad(1);
                for (size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] += g[i];
                }
                return;
            }
            case Op::Sub: {
                auto &ga = ingrad(0), &gb = ingrad(1);
                for (size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] -= g[i];
                }
                return;
            }
            case Op::Mul: {
                const auto &va = inval(0), &vb = inval(1);
                auto &ga = ingrad(0), &gb = ingrad(1);
                for (size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * vb.data[i];
                    gb[i] += g[i] * va.data[i];
                }
                return;
            }
            case Op::Scale: {
                auto& ga = ingrad(0);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += n.scalar * g[i];
                return;
            }
            case Op::AddScalar: {
                auto& ga = ingrad(0);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                return;
            }
            case Op::Sum: {
                auto& ga = ingrad(0);
                for (auto& v : ga) v += g[0];
                return;
            }
            case Op::Matmul: return backprop_matmul(n, g);
            case Op::TransposeLast: {
                TensorT<T> gt(n.value.shape, std::vector<T>(g));
                TensorT<T> gin = ops::transpose_last(gt);
                auto& ga = ingrad(0);
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += gin.data[i];
                return;
            }
            case Op::Conv2d: return backprop_conv(n, g);
            case Op::Silu: {
                const auto& x = inval(0);
                auto& ga = ingrad(0);
                for (size_t i = 0; i < g.size(); ++i) {
                    const T s = ops::sigmoid_scalar(x.data[i]);
                    ga[i] += g[i] * (s + x.data[i] * s * (T(1) - s));
                }
                return;
            }
            case Op::Sigmoid: {
                auto& ga = ingrad(0);
                for (size_t i = 0; i < g.size(); ++i) {
                    const T o = n.value.data[i];
                    ga[i] += g[i] * o * (T(1) - o);
                }
                return;
            }
            case Op::Exp: {
                auto& ga = ingrad(0);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.value.data[i];
                return;
            }
            case Op::Sqrt: {
                auto& ga = ingrad(0);
                for (size_t i = 0; i < g.size(); ++i)
                    ga[i] += g[i] * T(0.5) / n.value.data[i];
                return;
            }
            case Op::Softplus: {
                const auto& x = inval(0);
                auto& ga = ingrad(0);
                for (size_t i = 0; i < g.size(); ++i)
                    ga[i] += g[i] * ops::sigmoid_scalar(x.data[i]);
                return;
            }
            case Op::Softmax: return backprop_softmax(n, g);
            case Op::Concat: return backprop_concat(n, g);
            case Op::Slice: return backprop_slice(n, g);
            case Op::Reshape: {
                auto& ga = ingrad(0);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                return;
            }
            case Op::Upsample2x: {
                const auto& x = inval(0);
                auto& ga = ingrad(0);
                const int64_t H = x.dim(2), W = x.dim(3), NC = x.dim(0) * x.dim(1);
                for (int64_t nc = 0; nc < NC; ++nc) {
                    const T* go = g.data() + nc * 4 * H * W;
                    T* gi = ga.data() + nc * H * W;
                    for (int64_t y = 0; y < H; ++y)
                        for (int64_t xx = 0; xx < W; ++xx) {
                            const T* r0 = go + (2 * y) * 2 * W + 2 * xx;
                            const T* r1 = r0 + 2 * W;
                            gi[y * W + xx] += r0[0] + r0[1] + r1[0] + r1[1];
                        }
                }
                return;
            }
            case Op::ChannelAffine: {
                const auto &x = inval(0), &s = inval(1);
                auto &gx = ingrad(0), &gs = ingrad(1), &gb = ingrad(2);
                const int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
                for (int64_t nn = 0; nn < N; ++nn)
                    for (int64_t c = 0; c < C; ++c) {
                        const int64_t base = (nn * C + c) * HW;
                        const T sc = s.data[static_cast<size_t>(c)];
                        T acc_s = T(0), acc_b = T(0);
                        for (int64_t i = 0; i < HW; ++i) {
                            const T gi = g[static_cast<size_t>(base + i)];
                            gx[static_cast<size_t>(base + i)] += gi * sc;
                            acc_s += gi * x.data[static_cast<size_t>(base + i)];
                            acc_b += gi;
                        }
                        gs[static_cast<size_t>(c)] += acc_s;
                        gb[static_cast<size_t>(c)] += acc_b;
                    }
                return;
            }
        }
    }

    void backprop_matmul(const Node& n, const std::vector<T>& g) {
        const auto &a = inval_of(n, 0), &b = inval_of(n, 1);
        auto &ga = grad_of(n.inputs[0]), &gb = grad_of(n.inputs[1]);
        const int64_t M = a.shape[a.rank() - 2], K = a.shape[a.rank() - 1];
        const int64_t N = b.shape[b.rank() - 1];
        const bool b_broadcast = b.rank() == 2 && a.rank() > 2;
        const int64_t batch = a.numel() / (M * K);
        for (int64_t i = 0; i < batch; ++i) {
            const T* gp = g.data() + i * M * N;
            const T* ap = a.data.data() + i * M * K;
            const T* bp = b.data.data() + (b_broadcast ? 0 : i * K * N);
            // dA = dC * B^T ; dB = A^T * dC
            ops::gemm_abt(M, K, N, gp, bp, ga.data() + i * M * K, true);
            ops::gemm_atb(K, N, M, ap, gp, gb.data() + (b_broadcast ? 0 : i * K * N), true);
        }
    }

    void backprop_conv(const Node& n, const std::vector<T>& g) {
        const auto &x = inval_of(n, 0), &w = inval_of(n, 1);
        auto &gx = grad_of(n.inputs[0]), &gw = grad_of(n.inputs[1]);
        const auto& at = n.conv;
        const int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
        const int64_t Cout = w.dim(0), kH = w.dim(2), kW = w.dim(3);
        const int64_t G = at.groups, cin_g = Cin / G, cout_g = Cout / G;
        const int64_t Ho = n.value.dim(2), Wo = n.value.dim(3);
        const int64_t col_rows = cin_g * kH * kW;
        std::vector<T> col(col_rows * Ho * Wo), gcol(col_rows * Ho * Wo);
        for (int64_t nn = 0; nn < N; ++nn) {
            for (int64_t gi = 0; gi < G; ++gi) {
                const T* xg = x.data.data() + (nn * Cin + gi * cin_g) * H * W;
                const T* gg = g.data() + ((nn * Cout + gi * cout_g) * Ho * Wo);
                ops::im2col(xg, cin_g, H, W, kH, kW, at.stride, at.padding, Ho, Wo, col.data());
                // dW += dY * col^T
                ops::gemm_abt(cout_g, col_rows, Ho * Wo, gg, col.data(),
                              gw.data() + gi * cout_g * col_rows, true);
                // dcol = W^T * dY, then scatter back
                ops::gemm_atb(col_rows, Ho * Wo, cout_g, w.data.data() + gi * cout_g * col_rows,
                              gg, gcol.data(), false);
                ops::col2im(gcol.data(), cin_g, H, W, kH, kW, at.stride, at.padding, Ho, Wo,
                            gx.data() + ((nn * Cin + gi * cin_g) * H * W));
            }
        }
        if (n.inputs.size() > 2) {
            auto& gbias = grad_of(n.inputs[2]);
            for (int64_t nn = 0; nn < N; ++nn)
                for (int64_t c = 0; c < Cout; ++c) {
                    const T* gp = g.data() + (nn * Cout + c) * Ho * Wo;
                    T acc = T(0);
                    for (int64_t i = 0; i < Ho * Wo; ++i) acc += gp[i];
                    gbias[static_cast<size_t>(c)] += acc;
                }
        }
    }

    void backprop_softmax(const Node& n, const std::vector<T>& g) {
        const auto& p = n.value;
        auto& ga = grad_of(n.inputs[0]);
        const int ax = ops::normalize_axis(n.axis, p.rank(), "softmax");
        int64_t outer = 1, inner = 1;
        const int64_t len = p.dim(ax);
        for (int i = 0; i < ax; ++i) outer *= p.shape[i];
        for (int i = ax + 1; i < p.rank(); ++i) inner *= p.shape[i];
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t in = 0; in < inner; ++in) {
                const int64_t base = o * len * inner + in;
                T dot = T(0);
                for (int64_t k = 0; k < len; ++k)
                    dot += g[static_cast<size_t>(base + k * inner)] *
                           p.data[static_cast<size_t>(base + k * inner)];
                for (int64_t k = 0; k < len; ++k) {
                    const size_t ix = static_cast<size_t>(base + k * inner);
                    ga[ix] += p.data[ix] * (g[ix] - dot);
                }
            }
    }

    void backprop_concat(const Node& n, const std::vector<T>& g) {
        const int ax = ops::normalize_axis(n.axis, n.value.rank(), "concat");
        int64_t outer = 1, inner = 1;
        for (int i = 0; i < ax; ++i) outer *= n.value.shape[i];
        for (int i = ax + 1; i < n.value.rank(); ++i) inner *= n.value.shape[i];
        const int64_t total_ax = n.value.dim(ax);
        int64_t off = 0;
        for (int id : n.inputs) {
            const auto& part = node(id).value;
            auto& gp = grad_of(id);
            const int64_t pa = part.dim(ax);
            for (int64_t o = 0; o < outer; ++o) {
                const T* src = g.data() + (o * total_ax + off) * inner;
                T* dst = gp.data() + o * pa * inner;
                for (int64_t i = 0; i < pa * inner; ++i) dst[i] += src[i];
            }
            off += pa;
        }
    }

    void backprop_slice(const Node& n, const std::vector<T>& g) {
        const auto& x = inval_of(n, 0);
        auto& gx = grad_of(n.inputs[0]);
        const int ax = ops::normalize_axis(n.axis, x.rank(), "slice");
        int64_t outer = 1, inner = 1;
        for (int i = 0; i < ax; ++i) outer *= x.shape[i];
        for (int i = ax + 1; i < x.rank(); ++i) inner *= x.shape[i];
        const int64_t src_ax = x.dim(ax);
        for (int64_t o = 0; o < outer; ++o) {
            T* dst = gx.data() + (o * src_ax + n.start) * inner;
            const T* src = g.data() + o * n.len * inner;
            for (int64_t i = 0; i < n.len * inner; ++i) dst[i] += src[i];
        }
    }

    const TensorT<T>& inval_of(const Node& n, int i) const {
        return node(n.inputs[static_cast<size_t>(i)]).value;
    }
};

using Graph = GraphT<float>;
using Graph64 = GraphT<double>;

// ---------------------------------------------------------------------------
// Finite-difference gradient verification (64-bit mode).
// ---------------------------------------------------------------------------

/// Checks the taped analytic gradient of a scalar-valued composite against
/// central differences. `build` must construct the composite on the given
/// graph (binding the supplied parameters as leaves) and return the loss
/// node. Returns the max over all parameter coordinates of
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
inline double gradcheck(const std::function<int(Graph64&)>& build,
                        const std::vector<Tensor64*>& params, double eps = 1e-5) {
    if (eps < 1e-7 || eps > 1e-3)
        throw contract_error("gradcheck: eps must lie in [1e-7, 1e-3]");

    auto eval_value = [&]() -> double {
        Graph64 g;
        const int loss = build(g);
        if (g.val(loss).numel() != 1)
            throw contract_error("gradcheck: composite must be scalar-valued, got " +
                                 g.val(loss).shape_str());
        return g.val(loss).data[0];
    };

    // determinism: two recordings must agree bit for bit
    const double v1 = eval_value();
    const double v2 = eval_value();
    if (std::memcmp(&v1, &v2, sizeof(double)) != 0)
        throw contract_error("gradcheck: function is not deterministic (two evaluations differ)");

    for (auto* p : params) {
        p->ensure_grad();
        p->zero_grad();
    }
    {
        Graph64 g;
        const int loss = build(g);
        g.backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto* p : params) analytic.push_back(p->grad);

    double max_rel = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor64& p = *params[pi];
        for (int64_t i = 0; i < p.numel(); ++i) {
            const double orig = p.data[static_cast<size_t>(i)];
            p.data[static_cast<size_t>(i)] = orig + eps;
            const double fp = eval_value();
            p.data[static_cast<size_t>(i)] = orig - eps;
            const double fm = eval_value();
            p.data[static_cast<size_t>(i)] = orig;
            const double num = (fp - fm) / (2.0 * eps);
            const double ana = analytic[pi][static_cast<size_t>(i)];
            const double rel =
                std::abs(ana - num) / std::max({1.0, std::abs(ana), std::abs(num)});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace y12
