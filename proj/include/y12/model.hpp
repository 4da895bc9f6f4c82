#pragma once

#include "y12/blocks.hpp"

namespace y12 {

struct Variant {
    std::string name = "n";
    double depth_mult = 0.25;
    double width_mult = 0.25;
    int max_channels = 512;

    static Variant preset(const std::string& name);
    void validate() const;
};

struct LossWeights {
    float coord = 5.0f;
    float obj = 1.0f;
    float noobj = 0.5f;
    float cls = 1.0f;
};

struct ModelConfig {
    Variant variant = Variant::preset("n");
    int num_classes = 3;
    int input_size = 64;
    int area_count = 4;
    double mlp_ratio = 2.0;
    LossWeights loss;

    void validate() const;

    /// Flat key = value document; keys: variant, num_classes, input_size,
    /// area_count, mlp_ratio, seed.
    std::string to_text(uint64_t seed) const;
    static std::pair<ModelConfig, uint64_t> from_text(const std::string& text);
};

/// Backbone (stem + four aggregation stages), top-down/bottom-up neck with
/// attention at strides 16 and 32, and three anchor-free prediction heads.
class Model {
public:
    Model(const ModelConfig& cfg, uint64_t seed);

    /// Returns raw per-scale predictions [N, 5+num_classes, S/k, S/k] for
    /// k in {8, 16, 32}.
    std::array<Tensor, 3> forward(const Tensor& images,
                                  nn::AttnKernel kernel = nn::AttnKernel::tiled) const;
    std::array<int, 3> record_forward(nn::TapeCtx<float>& ctx, int images);

    void visit_params(const nn::ParamVisitor<float>& fn);

    struct TableRow {
        std::string module;
        uint64_t value = 0;
    };
    std::vector<TableRow> param_table();
    int64_t param_total();
    std::vector<TableRow> flop_table(int input_size) const;
    uint64_t flop_total(int input_size) const;

    const ModelConfig& config() const { return cfg_; }
    uint64_t seed() const { return seed_; }
    static constexpr std::array<int, 3> strides{8, 16, 32};
    const std::array<int64_t, 5>& widths() const { return w_; }

private:
    ModelConfig cfg_;
    uint64_t seed_ = 0;
    std::array<int64_t, 5> w_{};  // channels at strides 2/4/8/16/32
    std::array<int, 4> reps_{};   // bottleneck chain lengths per stage

    nn::ConvUnit stem0_;
    nn::MultiKernelConvSpec stem1_;
    nn::RELANSpec b1_, b2_, b3_, b4_;
    nn::ConvUnit down2_, down3_, down4_;
    nn::RELANSpec u4_, u3_;
    nn::ConvUnit pan3_, pan4_;
    nn::RELANSpec d4_, d5_;
    nn::AttnBlockSpec attn16_, attn32_;
    struct Head {
        nn::ConvUnit tower;
        Tensor out_w, out_b;
    };
    std::array<Head, 3> heads_;

    void check_input(const Tensor& images) const;
};

void save_checkpoint(Model& model, const std::string& path);
void load_checkpoint_into(Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace y12
