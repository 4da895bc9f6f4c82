#pragma once

#include "y12/model.hpp"

namespace y12::det {

struct GroundTruthBox {
    int class_id = 0;
    float cx = 0, cy = 0, w = 0, h = 0;  // normalized to image size
    float weight = 1.0f;                 // objectness credit; < 1 after mixup
};

struct Detection {
    int class_id = 0;
    float cx = 0, cy = 0, w = 0, h = 0;
    float score = 0;
};

double iou(const GroundTruthBox& a, const GroundTruthBox& b);
double iou(const Detection& a, const Detection& b);
double iou_xywh(double acx, double acy, double aw, double ah, double bcx, double bcy, double bw,
                double bh);

/// Per-scale target tensors [5+num_classes, G, G] for one image. Channels:
/// x/y cell offsets, normalized w/h, objectness weight, one-hot class. Each
/// box lands on one scale via max(w,h) thresholds (<=0.1 stride 8, <=0.3
/// stride 16, else 32); same-cell collisions keep the larger box.
std::array<Tensor, 3> assign_targets(const std::vector<GroundTruthBox>& gts, int input_size,
                                     int num_classes);

struct LossNodes {
    int total = -1, coord = -1, obj = -1, noobj = -1, cls = -1;
};

/// Builds the composite loss on the tape: lambda-weighted coordinate,
/// objectness, no-object and class terms, raw sums over the batch.
template <typename T>
LossNodes record_detection_loss(GraphT<T>& g, const std::array<int, 3>& preds,
                                const std::array<TensorT<T>, 3>& targets, const LossWeights& w);

struct LossBreakdown {
    double total = 0, coord = 0, obj = 0, noobj = 0, cls = 0;
};

/// Eager evaluation of the same graph the training step records.
LossBreakdown detection_loss(const std::array<Tensor, 3>& preds,
                             const std::array<Tensor, 3>& targets, const LossWeights& w);

/// Decodes single-image raw head outputs [5+nc, G, G] per scale: sigmoid
/// offsets, exponential sizes, score = objectness * best class probability.
std::vector<Detection> decode(const std::array<Tensor, 3>& preds, float conf_thresh);

/// Greedy per-class suppression; order and tie-breaks are deterministic
/// (score desc, then cx, then cy).
std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh);

struct EvalResult {
    std::vector<double> thresholds;
    std::vector<double> per_threshold;  // mAP at each threshold
    // per_class[t][c] is class c's AP at thresholds[t]; -1 marks a class
    // with no ground truth and no detections, excluded from the means.
    std::vector<std::vector<double>> per_class;
    double map50 = 0;
    double map50_95 = 0;
};

std::vector<double> coco_thresholds();  // 0.50, 0.55, ..., 0.95

EvalResult mean_average_precision(const std::vector<std::vector<Detection>>& dets,
                                  const std::vector<std::vector<GroundTruthBox>>& gts,
                                  int num_classes,
                                  const std::vector<double>& thresholds = coco_thresholds());

}  // namespace y12::det
