#pragma once

#include <functional>

#include "y12/data.hpp"

namespace y12::train {

struct TrainSchedule {
    int epochs = 10;
    int batch_size = 8;
    double base_lr = 0.01;
    double lr_min = 1e-4;
    int warmup_steps = 20;
    uint64_t seed = 0;
    double mosaic_p = 0.5;
    double mixup_p = 0.15;
    double mixup_beta = 32.0;
    double grad_clip = 5.0;  // global-norm ceiling
    LossWeights loss_weights;

    void validate() const;
};

struct EpochMetrics {
    int epoch = 0;
    double loss = 0, coord = 0, obj = 0, noobj = 0, cls = 0;
    double lr = 0;
    double wall_s = 0;
};

std::string metrics_json_line(const EpochMetrics& m);

/// Linear warmup to base_lr, then cosine decay ending exactly at lr_min on
/// the final step. lr(0) = base_lr / warmup_steps.
double lr_at(const TrainSchedule& s, int64_t step, int64_t total_steps);

using EpochHook = std::function<void(const EpochMetrics&, Model&)>;

/// SGD with momentum 0.9 over the detection loss; per-sample mosaic and
/// mixup draws; one metrics record per epoch. Aborts with a step-numbered
/// diagnostic when the loss stops being finite.
std::vector<EpochMetrics> train(Model& model, const data::Dataset& dataset,
                                const TrainSchedule& sched, const EpochHook& hook = {});

/// Forward + decode + per-class NMS + mAP over a labeled dataset.
det::EvalResult evaluate(const Model& model, const data::Dataset& dataset,
                         float conf_thresh = 0.25f, double nms_iou = 0.5);

}  // namespace y12::train
