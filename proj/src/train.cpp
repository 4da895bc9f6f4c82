#include "y12/train.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include "json.hpp"

namespace y12::train {

void TrainSchedule::validate() const {
    if (epochs < 1) throw config_error("schedule: epochs must be at least 1");
    if (batch_size < 1) throw config_error("schedule: batch_size must be at least 1");
    if (!(base_lr > 0)) throw config_error("schedule: base_lr must be positive");
    if (!(lr_min > 0)) throw config_error("schedule: lr_min must be positive");
    if (lr_min > base_lr) throw config_error("schedule: lr_min must not exceed base_lr");
    if (warmup_steps < 1) throw config_error("schedule: warmup_steps must be at least 1");
    if (!(mosaic_p >= 0 && mosaic_p <= 1))
        throw config_error("schedule: mosaic_p must lie in [0, 1]");
    if (!(mixup_p >= 0 && mixup_p <= 1))
        throw config_error("schedule: mixup_p must lie in [0, 1]");
    if (!(mixup_beta > 0)) throw config_error("schedule: mixup_beta must be positive");
    if (!(grad_clip > 0)) throw config_error("schedule: grad_clip must be positive");
    if (loss_weights.coord < 0 || loss_weights.obj < 0 || loss_weights.noobj < 0 ||
        loss_weights.cls < 0)
        throw config_error("schedule: loss weights must be non-negative");
}

double lr_at(const TrainSchedule& s, int64_t step, int64_t total_steps) {
    if (step < 0 || step >= total_steps) throw config_error("lr_at: step outside the run");
    if (step < s.warmup_steps)
        return s.base_lr * static_cast<double>(step + 1) / static_cast<double>(s.warmup_steps);
    const int64_t last = total_steps - 1;
    if (last <= s.warmup_steps) return s.lr_min;
    const double progress = static_cast<double>(step - s.warmup_steps) /
                            static_cast<double>(last - s.warmup_steps);
    if (progress >= 1.0) return s.lr_min;
    return s.lr_min +
           0.5 * (s.base_lr - s.lr_min) * (1.0 + std::cos(std::numbers::pi_v<double> * progress));
}

std::string metrics_json_line(const EpochMetrics& m) {
    nlohmann::json j;
    j["epoch"] = m.epoch;
    j["loss"] = m.loss;
    j["coord"] = m.coord;
    j["obj"] = m.obj;
    j["noobj"] = m.noobj;
    j["cls"] = m.cls;
    j["lr"] = m.lr;
    j["wall_s"] = m.wall_s;
    return j.dump();
}

std::vector<EpochMetrics> train(Model& model, const data::Dataset& dataset,
                                const TrainSchedule& sched, const EpochHook& hook) {
    sched.validate();
    if (dataset.empty()) throw config_error("train: dataset is empty");
    const ModelConfig& cfg = model.config();
    const int64_t s = cfg.input_size;
    for (const data::LabeledImage& item : dataset) {
        if (item.image.rank() != 3 || item.image.dim(0) != 3 || item.image.dim(1) != s ||
            item.image.dim(2) != s)
            throw dim_error("train: image size does not match the model input size");
        for (const det::GroundTruthBox& b : item.boxes)
            if (b.class_id >= cfg.num_classes)
                throw contract_error("train: label class outside the model's class count");
    }

    const int64_t n = static_cast<int64_t>(dataset.size());
    const int64_t spe = (n + sched.batch_size - 1) / sched.batch_size;
    const int64_t total_steps = spe * sched.epochs;
    Rng rng(sched.seed);

    std::vector<Tensor*> params;
    model.visit_params([&](const std::string&, Tensor& t) { params.push_back(&t); });
    std::vector<std::vector<float>> velocity(params.size());

    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    std::vector<EpochMetrics> log;
    int64_t step = 0;
    for (int epoch = 0; epoch < sched.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        for (size_t i = order.size(); i-- > 1;)
            std::swap(order[i], order[static_cast<size_t>(rng.uniform_int(
                                    static_cast<int64_t>(i) + 1))]);

        EpochMetrics m;
        m.epoch = epoch;
        for (int64_t b = 0; b < spe; ++b) {
            const int64_t lo = b * sched.batch_size;
            const int64_t hi = std::min<int64_t>(lo + sched.batch_size, n);
            const int64_t bs = hi - lo;

            Tensor images({bs, 3, s, s});
            std::array<Tensor, 3> targets;
            for (int sc = 0; sc < 3; ++sc) {
                const int64_t g = s / Model::strides[static_cast<size_t>(sc)];
                targets[static_cast<size_t>(sc)] =
                    Tensor::zeros({bs, 5 + cfg.num_classes, g, g});
            }
            for (int64_t i = 0; i < bs; ++i) {
                data::LabeledImage cur = dataset[static_cast<size_t>(order[static_cast<size_t>(lo + i)])];
                if (rng.uniform() < sched.mosaic_p) {
                    const data::LabeledImage& r1 = dataset[static_cast<size_t>(rng.uniform_int(n))];
                    const data::LabeledImage& r2 = dataset[static_cast<size_t>(rng.uniform_int(n))];
                    const data::LabeledImage& r3 = dataset[static_cast<size_t>(rng.uniform_int(n))];
                    cur = data::mosaic({&cur, &r1, &r2, &r3}, rng);
                }
                if (rng.uniform() < sched.mixup_p) {
                    const data::LabeledImage& other =
                        dataset[static_cast<size_t>(rng.uniform_int(n))];
                    cur = data::mixup(cur, other, sched.mixup_beta, rng);
                }
                std::copy(cur.image.data.begin(), cur.image.data.end(),
                          images.data.begin() + i * 3 * s * s);
                auto t1 = det::assign_targets(cur.boxes, static_cast<int>(s), cfg.num_classes);
                for (int sc = 0; sc < 3; ++sc) {
                    Tensor& dst = targets[static_cast<size_t>(sc)];
                    const Tensor& src = t1[static_cast<size_t>(sc)];
                    std::copy(src.data.begin(), src.data.end(),
                              dst.data.begin() + i * src.numel());
                }
            }

            Graph g;
            nn::TapeCtx<float> ctx(g);
            const int x = g.input(std::move(images));
            det::LossNodes ln;
            try {
                const std::array<int, 3> heads = model.record_forward(ctx, x);
                ln = det::record_detection_loss(g, heads, targets, sched.loss_weights);
            } catch (const contract_error& e) {
                throw contract_error("training step " + std::to_string(step) + ": " + e.what());
            }
            const double loss = g.val(ln.total).data[0];
            if (!std::isfinite(loss))
                throw contract_error("training diverged at step " + std::to_string(step) +
                                     ": loss is not finite");

            for (Tensor* p : params) {
                p->ensure_grad();
                p->zero_grad();
            }
            g.backward(ln.total);

            // Clip by global norm; the exponential in the extent term can
            // otherwise launch the weights on a bad early step.
            double sq = 0;
            for (Tensor* p : params)
                for (float gv : p->grad) sq += static_cast<double>(gv) * gv;
            const double norm = std::sqrt(sq);
            if (norm > sched.grad_clip) {
                const float f = static_cast<float>(sched.grad_clip / norm);
                for (Tensor* p : params)
                    for (float& gv : p->grad) gv *= f;
            }

            const double lr = lr_at(sched, step, total_steps);
            for (size_t pi = 0; pi < params.size(); ++pi) {
                Tensor& p = *params[pi];
                std::vector<float>& v = velocity[pi];
                if (v.empty()) v.assign(p.data.size(), 0.0f);
                const float flr = static_cast<float>(lr);
                for (size_t j = 0; j < p.data.size(); ++j) {
                    v[j] = 0.9f * v[j] + p.grad[j];
                    p.data[j] -= flr * v[j];
                }
            }

            m.loss += loss;
            m.coord += g.val(ln.coord).data[0];
            m.obj += g.val(ln.obj).data[0];
            m.noobj += g.val(ln.noobj).data[0];
            m.cls += g.val(ln.cls).data[0];
            m.lr = lr;
            ++step;
        }
        const double inv = 1.0 / static_cast<double>(spe);
        m.loss *= inv;
        m.coord *= inv;
        m.obj *= inv;
        m.noobj *= inv;
        m.cls *= inv;
        m.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.push_back(m);
        if (hook) hook(m, model);
    }
    return log;
}

det::EvalResult evaluate(const Model& model, const data::Dataset& dataset, float conf_thresh,
                         double nms_iou) {
    const ModelConfig& cfg = model.config();
    const int64_t s = cfg.input_size;
    std::vector<std::vector<det::Detection>> dets;
    std::vector<std::vector<det::GroundTruthBox>> gts;
    for (const data::LabeledImage& item : dataset) {
        if (item.image.rank() != 3 || item.image.dim(1) != s || item.image.dim(2) != s)
            throw dim_error("evaluate: image size does not match the model input size");
        Tensor x({1, 3, s, s}, item.image.data);
        auto heads = model.forward(x);
        std::array<Tensor, 3> single;
        for (int sc = 0; sc < 3; ++sc) {
            Tensor& hsc = heads[static_cast<size_t>(sc)];
            single[static_cast<size_t>(sc)] =
                ops::reshape(hsc, {hsc.dim(1), hsc.dim(2), hsc.dim(3)});
        }
        dets.push_back(det::nms(det::decode(single, conf_thresh), nms_iou));
        gts.push_back(item.boxes);
    }
    return det::mean_average_precision(dets, gts, cfg.num_classes);
}

}  // namespace y12::train
