#include "y12/model.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

namespace y12 {

Variant Variant::preset(const std::string& name) {
    if (name == "n") return {"n", 0.25, 0.25, 512};
    if (name == "s") return {"s", 0.25, 0.50, 512};
    if (name == "m") return {"m", 0.50, 0.75, 512};
    if (name == "x") return {"x", 1.00, 1.25, 512};
    throw config_error("unknown variant '" + name + "' (expected n, s, m or x)");
}

void Variant::validate() const {
    if (depth_mult <= 0.0 || width_mult <= 0.0)
        throw config_error("variant multipliers must be positive");
    if (max_channels < 8) throw config_error("max_channels must be >= 8");
}

void ModelConfig::validate() const {
    variant.validate();
    if (num_classes < 1) throw config_error("num_classes must be >= 1");
    if (input_size < 32 || input_size % 32 != 0)
        throw config_error("input_size must be a positive multiple of 32, got " +
                           std::to_string(input_size));
    if (area_count < 1) throw config_error("area_count must be >= 1");
    if (mlp_ratio <= 0.0) throw config_error("mlp_ratio must be > 0");
    // attention runs on the stride-8/16/32 grids; every token count involved
    // must split evenly into areas
    for (int s : {8, 16, 32}) {
        const int64_t g = input_size / s;
        if ((g * g) % area_count != 0)
            throw config_error("grid " + std::to_string(g) + "x" + std::to_string(g) +
                               " at stride " + std::to_string(s) + " has " + std::to_string(g * g) +
                               " tokens, not divisible by area_count " +
                               std::to_string(area_count));
    }
}

std::string ModelConfig::to_text(uint64_t seed) const {
    char mlp[64];
    std::snprintf(mlp, sizeof mlp, "%.17g", mlp_ratio);
    std::ostringstream os;
    os << "variant = " << variant.name << "\n"
       << "num_classes = " << num_classes << "\n"
       << "input_size = " << input_size << "\n"
       << "area_count = " << area_count << "\n"
       << "mlp_ratio = " << mlp << "\n"
       << "seed = " << seed << "\n";
    return os.str();
}

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const int64_t n = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw config_error("config key '" + key + "': expected an integer, got '" + v + "'");
    }
}

double parse_real(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw config_error("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

}  // namespace

std::pair<ModelConfig, uint64_t> ModelConfig::from_text(const std::string& text) {
    ModelConfig cfg;
    uint64_t seed = 0;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(lineno) +
                               ": expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "variant")
            cfg.variant = Variant::preset(val);
        else if (key == "num_classes")
            cfg.num_classes = static_cast<int>(parse_int(key, val));
        else if (key == "input_size")
            cfg.input_size = static_cast<int>(parse_int(key, val));
        else if (key == "area_count")
            cfg.area_count = static_cast<int>(parse_int(key, val));
        else if (key == "mlp_ratio")
            cfg.mlp_ratio = parse_real(key, val);
        else if (key == "seed")
            seed = static_cast<uint64_t>(parse_int(key, val));
        else
            throw config_error("config line " + std::to_string(lineno) + ": unknown key '" + key +
                               "'");
    }
    cfg.validate();
    return {cfg, seed};
}

namespace {

int64_t scale_width(int64_t base, const Variant& v) {
    const double scaled = static_cast<double>(base) * v.width_mult;
    const int64_t snapped = std::max<int64_t>(8, 8 * std::llround(scaled / 8.0));
    return std::min<int64_t>(snapped, v.max_channels);
}

int scale_reps(int base, const Variant& v) {
    return std::max(1, static_cast<int>(std::llround(base * v.depth_mult)));
}

attn::AttentionConfig attn_cfg_for(const ModelConfig& cfg) {
    attn::AttentionConfig a;
    a.num_heads = 4;
    a.num_areas = cfg.area_count;
    return a;
}

}  // namespace

Model::Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg), seed_(seed) {
    cfg_.validate();
    static constexpr int64_t base_w[5] = {32, 64, 128, 256, 512};
    static constexpr int base_reps[4] = {1, 2, 2, 1};
    for (int i = 0; i < 5; ++i) w_[static_cast<size_t>(i)] = scale_width(base_w[i], cfg.variant);
    for (int i = 0; i < 4; ++i)
        reps_[static_cast<size_t>(i)] = scale_reps(base_reps[i], cfg.variant);

    Rng rng(seed);
    const auto acfg = attn_cfg_for(cfg_);
    const double mr = cfg_.mlp_ratio;

    stem0_ = nn::ConvUnit(3, w_[0], 3, 2, 1, true, rng);
    stem1_ = nn::MultiKernelConvSpec(w_[0], w_[1], {{3, 3}, {1, 1}}, 2, rng);
    b1_ = nn::RELANSpec(w_[1], w_[1], reps_[0], 0.5, 1.0, rng);
    down2_ = nn::ConvUnit(w_[1], w_[2], 3, 2, 1, true, rng);
    b2_ = nn::RELANSpec(w_[2], w_[2], reps_[1], 0.5, 1.0, rng);
    down3_ = nn::ConvUnit(w_[2], w_[3], 3, 2, 1, true, rng);
    b3_ = nn::RELANSpec(w_[3], w_[3], reps_[2], 0.5, 1.0, rng);
    down4_ = nn::ConvUnit(w_[3], w_[4], 3, 2, 1, true, rng);
    b4_ = nn::RELANSpec(w_[4], w_[4], reps_[3], 0.5, 1.0, rng);

    const int neck_reps = scale_reps(1, cfg_.variant);
    u4_ = nn::RELANSpec(w_[4] + w_[3], w_[3], neck_reps, 0.5, 1.0, rng);
    u3_ = nn::RELANSpec(w_[3] + w_[2], w_[2], neck_reps, 0.5, 1.0, rng);
    pan3_ = nn::ConvUnit(w_[2], w_[2], 3, 2, 1, true, rng);
    d4_ = nn::RELANSpec(w_[2] + w_[3], w_[3], neck_reps, 0.5, 1.0, rng);
    attn16_ = nn::AttnBlockSpec(w_[3], acfg, mr, rng);
    pan4_ = nn::ConvUnit(w_[3], w_[3], 3, 2, 1, true, rng);
    d5_ = nn::RELANSpec(w_[3] + w_[4], w_[4], neck_reps, 0.5, 1.0, rng);
    attn32_ = nn::AttnBlockSpec(w_[4], acfg, mr, rng);

    const int64_t out_ch = 5 + cfg_.num_classes;
    const int64_t head_w[3] = {w_[2], w_[3], w_[4]};
    for (int i = 0; i < 3; ++i) {
        auto& h = heads_[static_cast<size_t>(i)];
        h.tower = nn::ConvUnit(head_w[i], head_w[i], 3, 1, 1, true, rng);
        h.out_w = Tensor({out_ch, head_w[i], 1, 1});
        nn::detail::init_conv_weight(h.out_w, head_w[i], rng);
        h.out_b = Tensor({out_ch});
        // Objectness starts at a low prior so background cells contribute
        // almost nothing to the early loss.
        h.out_b.data[4] = -4.0f;
    }
}

void Model::check_input(const Tensor& images) const {
    if (images.rank() != 4 || images.dim(1) != 3)
        throw dim_error("forward: expected images [N,3,S,S], got " + images.shape_str());
    if (images.dim(2) != cfg_.input_size || images.dim(3) != cfg_.input_size)
        throw dim_error("forward: expected input size " + std::to_string(cfg_.input_size) +
                        ", got " + images.shape_str());
}

std::array<Tensor, 3> Model::forward(const Tensor& images, nn::AttnKernel kernel) const {
    check_input(images);
    auto x = stem0_.forward(images);
    x = nn::multi_kernel_conv(x, stem1_);
    auto p2 = nn::r_elan_block(x, b1_);
    auto p3 = nn::r_elan_block(down2_.forward(p2), b2_);
    auto p4 = nn::r_elan_block(down3_.forward(p3), b3_);
    auto p5 = nn::r_elan_block(down4_.forward(p4), b4_);

    auto t4 = nn::r_elan_block(
        ops::concat<float>(std::vector<Tensor>{ops::upsample_nearest2x(p5), p4}, 1), u4_);
    auto t3 = nn::r_elan_block(
        ops::concat<float>(std::vector<Tensor>{ops::upsample_nearest2x(t4), p3}, 1), u3_);
    auto m4 = nn::attn_block(
        nn::r_elan_block(ops::concat<float>(std::vector<Tensor>{pan3_.forward(t3), t4}, 1), d4_),
        attn16_, kernel);
    auto m5 = nn::attn_block(
        nn::r_elan_block(ops::concat<float>(std::vector<Tensor>{pan4_.forward(m4), p5}, 1), d5_),
        attn32_, kernel);

    const Tensor* feats[3] = {&t3, &m4, &m5};
    std::array<Tensor, 3> out;
    for (int i = 0; i < 3; ++i) {
        const auto& h = heads_[static_cast<size_t>(i)];
        out[static_cast<size_t>(i)] =
            ops::conv2d(h.tower.forward(*feats[i]), h.out_w, &h.out_b, {1, 0, 1});
    }
    return out;
}

std::array<int, 3> Model::record_forward(nn::TapeCtx<float>& ctx, int images) {
    auto& g = ctx.g;
    check_input(g.val(images));
    int x = stem0_.record(ctx, images);
    x = nn::record_multi_kernel_conv(ctx, x, stem1_);
    const int p2 = nn::record_r_elan(ctx, x, b1_);
    const int p3 = nn::record_r_elan(ctx, down2_.record(ctx, p2), b2_);
    const int p4 = nn::record_r_elan(ctx, down3_.record(ctx, p3), b3_);
    const int p5 = nn::record_r_elan(ctx, down4_.record(ctx, p4), b4_);

    const int t4 = nn::record_r_elan(ctx, g.concat({g.upsample2x(p5), p4}, 1), u4_);
    const int t3 = nn::record_r_elan(ctx, g.concat({g.upsample2x(t4), p3}, 1), u3_);
    const int m4 = nn::record_attn_block(
        ctx, nn::record_r_elan(ctx, g.concat({pan3_.record(ctx, t3), t4}, 1), d4_), attn16_);
    const int m5 = nn::record_attn_block(
        ctx, nn::record_r_elan(ctx, g.concat({pan4_.record(ctx, m4), p5}, 1), d5_), attn32_);

    const int feats[3] = {t3, m4, m5};
    std::array<int, 3> out{};
    for (int i = 0; i < 3; ++i) {
        auto& h = heads_[static_cast<size_t>(i)];
        out[static_cast<size_t>(i)] = g.conv2d(h.tower.record(ctx, feats[i]),
                                               ctx.bind(h.out_w), ctx.bind(h.out_b), {1, 0, 1});
    }
    return out;
}

void Model::visit_params(const nn::ParamVisitor<float>& fn) {
    stem0_.visit("stem0", fn);
    stem1_.visit("stem1", fn);
    b1_.visit("b1", fn);
    down2_.visit("down2", fn);
    b2_.visit("b2", fn);
    down3_.visit("down3", fn);
    b3_.visit("b3", fn);
    down4_.visit("down4", fn);
    b4_.visit("b4", fn);
    u4_.visit("u4", fn);
    u3_.visit("u3", fn);
    pan3_.visit("pan3", fn);
    d4_.visit("d4", fn);
    attn16_.visit("attn16", fn);
    pan4_.visit("pan4", fn);
    d5_.visit("d5", fn);
    attn32_.visit("attn32", fn);
    const char* names[3] = {"head8", "head16", "head32"};
    for (int i = 0; i < 3; ++i) {
        auto& h = heads_[static_cast<size_t>(i)];
        h.tower.visit(std::string(names[i]) + ".tower", fn);
        fn(std::string(names[i]) + ".out.w", h.out_w);
        fn(std::string(names[i]) + ".out.bias", h.out_b);
    }
}

std::vector<Model::TableRow> Model::param_table() {
    std::vector<TableRow> rows;
    visit_params([&](const std::string& name, Tensor& t) {
        const std::string module = name.substr(0, name.find('.'));
        if (rows.empty() || rows.back().module != module) rows.push_back({module, 0});
        rows.back().value += static_cast<uint64_t>(t.numel());
    });
    return rows;
}

int64_t Model::param_total() {
    int64_t total = 0;
    visit_params([&](const std::string&, Tensor& t) { total += t.numel(); });
    return total;
}

namespace {

uint64_t conv_flops(int64_t k, int64_t cin_g, int64_t cout, int64_t ho, int64_t wo) {
    return 2ull * k * k * cin_g * cout * ho * wo;
}

uint64_t convunit_flops(const nn::ConvUnit& cu, int64_t h, int64_t w) {
    const int64_t k = cu.w.dim(2);
    const int64_t ho = ops::conv_out_dim(h, k, cu.attrs.stride, cu.attrs.padding);
    const int64_t wo = ops::conv_out_dim(w, k, cu.attrs.stride, cu.attrs.padding);
    return conv_flops(k, cu.w.dim(1), cu.w.dim(0), ho, wo);
}

uint64_t mk_flops(const nn::MultiKernelConvSpec& spec, int64_t h, int64_t w) {
    uint64_t total = 0;
    for (int i = 0; i < spec.n_branches(); ++i) {
        const auto& wt = spec.weights[static_cast<size_t>(i)];
        const auto at = spec.branch_attrs(i);
        const int64_t ho = ops::conv_out_dim(h, wt.dim(2), at.stride, at.padding);
        const int64_t wo = ops::conv_out_dim(w, wt.dim(3), at.stride, at.padding);
        total += conv_flops(wt.dim(2), wt.dim(1), wt.dim(0), ho, wo);
    }
    return total;
}

uint64_t sep7x7_flops(int64_t c, int64_t h, int64_t w) {
    return conv_flops(7, 1, c, h, w) + conv_flops(1, c, c, h, w);
}

uint64_t relan_flops(const nn::RELANSpec& spec, int64_t h, int64_t w) {
    uint64_t total = conv_flops(1, spec.c_in, spec.hidden, h, w);
    total += 2ull * spec.bottlenecks.size() * conv_flops(3, spec.hidden, spec.hidden, h, w);
    total += conv_flops(1, spec.hidden * (spec.n_branches + 1), spec.c_out, h, w);
    if (spec.proj.numel() > 0) total += conv_flops(1, spec.c_in, spec.c_out, h, w);
    return total;
}

uint64_t attnblock_flops(const nn::AttnBlockSpec& spec, int64_t h, int64_t w) {
    const int64_t c = spec.channels, tokens = h * w;
    uint64_t total = 4 * conv_flops(1, c, c, h, w);  // q, k, v, out projections
    total += static_cast<uint64_t>(spec.attention.num_heads) *
             attn::attention_cost(tokens, spec.attention.head_dim, spec.attention.num_areas).flops;
    total += sep7x7_flops(c, h, w);
    total += conv_flops(1, c, spec.mlp_hidden, h, w) + conv_flops(1, spec.mlp_hidden, c, h, w);
    return total;
}

}  // namespace

std::vector<Model::TableRow> Model::flop_table(int input_size) const {
    if (input_size < 32 || input_size % 32 != 0)
        throw config_error("flop accounting needs an input size that is a multiple of 32");
    const int64_t s = input_size;
    std::vector<TableRow> rows;
    rows.push_back({"stem0", convunit_flops(stem0_, s, s)});
    rows.push_back({"stem1", mk_flops(stem1_, s / 2, s / 2)});
    rows.push_back({"b1", relan_flops(b1_, s / 4, s / 4)});
    rows.push_back({"down2", convunit_flops(down2_, s / 4, s / 4)});
    rows.push_back({"b2", relan_flops(b2_, s / 8, s / 8)});
    rows.push_back({"down3", convunit_flops(down3_, s / 8, s / 8)});
    rows.push_back({"b3", relan_flops(b3_, s / 16, s / 16)});
    rows.push_back({"down4", convunit_flops(down4_, s / 16, s / 16)});
    rows.push_back({"b4", relan_flops(b4_, s / 32, s / 32)});
    rows.push_back({"u4", relan_flops(u4_, s / 16, s / 16)});
    rows.push_back({"u3", relan_flops(u3_, s / 8, s / 8)});
    rows.push_back({"pan3", convunit_flops(pan3_, s / 8, s / 8)});
    rows.push_back({"d4", relan_flops(d4_, s / 16, s / 16)});
    rows.push_back({"attn16", attnblock_flops(attn16_, s / 16, s / 16)});
    rows.push_back({"pan4", convunit_flops(pan4_, s / 16, s / 16)});
    rows.push_back({"d5", relan_flops(d5_, s / 32, s / 32)});
    rows.push_back({"attn32", attnblock_flops(attn32_, s / 32, s / 32)});
    const int64_t head_hw[3] = {s / 8, s / 16, s / 32};
    const char* names[3] = {"head8", "head16", "head32"};
    for (int i = 0; i < 3; ++i) {
        const auto& h = heads_[static_cast<size_t>(i)];
        uint64_t f = convunit_flops(h.tower, head_hw[i], head_hw[i]);
        f += conv_flops(1, h.out_w.dim(1), h.out_w.dim(0), head_hw[i], head_hw[i]);
        rows.push_back({names[i], f});
    }
    return rows;
}

uint64_t Model::flop_total(int input_size) const {
    uint64_t total = 0;
    for (const auto& r : flop_table(input_size)) total += r.value;
    return total;
}

}  // namespace y12
