#include "y12/detect.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace y12::det {

double iou_xywh(double acx, double acy, double aw, double ah, double bcx, double bcy, double bw,
                double bh) {
    const double ax0 = acx - aw / 2, ax1 = acx + aw / 2;
    const double ay0 = acy - ah / 2, ay1 = acy + ah / 2;
    const double bx0 = bcx - bw / 2, bx1 = bcx + bw / 2;
    const double by0 = bcy - bh / 2, by1 = bcy + bh / 2;
    const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
    const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
    const double inter = iw * ih;
    const double uni = std::max(0.0, aw) * std::max(0.0, ah) +
                       std::max(0.0, bw) * std::max(0.0, bh) - inter;
    if (uni <= 0) return 0.0;
    return inter / uni;
}

double iou(const GroundTruthBox& a, const GroundTruthBox& b) {
    return iou_xywh(a.cx, a.cy, a.w, a.h, b.cx, b.cy, b.w, b.h);
}

double iou(const Detection& a, const Detection& b) {
    return iou_xywh(a.cx, a.cy, a.w, a.h, b.cx, b.cy, b.w, b.h);
}

namespace {

int scale_for_box(const GroundTruthBox& b) {
    const float side = std::max(b.w, b.h);
    if (side <= 0.1f) return 0;
    if (side <= 0.3f) return 1;
    return 2;
}

}  // namespace

std::array<Tensor, 3> assign_targets(const std::vector<GroundTruthBox>& gts, int input_size,
                                     int num_classes) {
    if (num_classes <= 0) throw config_error("assign_targets: num_classes must be positive");
    std::array<Tensor, 3> out;
    std::array<std::vector<float>, 3> areas;  // per-cell area of the owning box
    for (int s = 0; s < 3; ++s) {
        const int64_t g = input_size / Model::strides[static_cast<size_t>(s)];
        if (g <= 0 || g * Model::strides[static_cast<size_t>(s)] != input_size)
            throw config_error("assign_targets: input_size must be divisible by " +
                               std::to_string(Model::strides[static_cast<size_t>(s)]));
        out[static_cast<size_t>(s)] = Tensor::zeros({5 + num_classes, g, g});
        areas[static_cast<size_t>(s)].assign(static_cast<size_t>(g * g), 0.0f);
    }
    for (const GroundTruthBox& b : gts) {
        if (!(b.w > 0 && b.h > 0)) throw contract_error("assign_targets: box with empty extent");
        if (b.class_id < 0 || b.class_id >= num_classes)
            throw contract_error("assign_targets: class_id out of range");
        const int s = scale_for_box(b);
        Tensor& t = out[static_cast<size_t>(s)];
        const int64_t g = t.dim(1);
        auto cell = [g](float c) {
            int64_t i = static_cast<int64_t>(std::floor(static_cast<double>(c) * static_cast<double>(g)));
            return std::clamp<int64_t>(i, 0, g - 1);
        };
        const int64_t ix = cell(b.cx), iy = cell(b.cy);
        const size_t flat = static_cast<size_t>(iy * g + ix);
        const float area = b.w * b.h;
        if (areas[static_cast<size_t>(s)][flat] >= area) continue;  // larger box keeps the cell
        areas[static_cast<size_t>(s)][flat] = area;
        const int64_t plane = g * g;
        float* d = t.data.data() + iy * g + ix;
        d[0 * plane] = static_cast<float>(static_cast<double>(b.cx) * static_cast<double>(g) -
                                          static_cast<double>(ix));
        d[1 * plane] = static_cast<float>(static_cast<double>(b.cy) * static_cast<double>(g) -
                                          static_cast<double>(iy));
        d[2 * plane] = b.w;
        d[3 * plane] = b.h;
        d[4 * plane] = b.weight;
        for (int c = 0; c < num_classes; ++c)
            d[(5 + c) * plane] = (c == b.class_id) ? 1.0f : 0.0f;
    }
    return out;
}

template <typename T>
LossNodes record_detection_loss(GraphT<T>& g, const std::array<int, 3>& preds,
                                const std::array<TensorT<T>, 3>& targets, const LossWeights& w) {
    LossNodes nodes;
    int coord = -1, obj = -1, noobj = -1, cls = -1;
    for (int s = 0; s < 3; ++s) {
        const int p = preds[static_cast<size_t>(s)];
        const TensorT<T>& tgt = targets[static_cast<size_t>(s)];
        const TensorT<T>& pv = g.val(p);
        if (!pv.all_finite())
            throw contract_error("detection_loss: non-finite values in preds[" +
                                 std::to_string(s) + "]");
        if (!tgt.all_finite())
            throw contract_error("detection_loss: non-finite values in targets[" +
                                 std::to_string(s) + "]");
        if (pv.rank() != 4 || tgt.rank() != 4)
            throw dim_error("detection_loss: preds and targets must be rank 4");
        if (pv.shape != tgt.shape)
            throw dim_error("detection_loss: preds/targets shape mismatch at scale " +
                            std::to_string(s));
        const int64_t n = pv.dim(0), ch = pv.dim(1), gh = pv.dim(2), gw = pv.dim(3);
        const int64_t nc = ch - 5;
        if (nc < 1) throw dim_error("detection_loss: need at least 6 channels");
        if (gh != gw) throw dim_error("detection_loss: grid must be square");

        // Constant planes derived from the targets: positive mask, its
        // complement, the mask repeated over class channels, and the square
        // roots of the target extents.
        TensorT<T> mask({n, 1, gh, gw});
        TensorT<T> negm({n, 1, gh, gw});
        TensorT<T> maskc({n, nc, gh, gw});
        TensorT<T> sqw({n, 1, gh, gw});
        TensorT<T> sqh({n, 1, gh, gw});
        const int64_t plane = gh * gw;
        for (int64_t i = 0; i < n; ++i) {
            const T* td = tgt.data.data() + i * ch * plane;
            for (int64_t j = 0; j < plane; ++j) {
                const bool pos = td[4 * plane + j] > T(0);
                mask.data[static_cast<size_t>(i * plane + j)] = pos ? T(1) : T(0);
                negm.data[static_cast<size_t>(i * plane + j)] = pos ? T(0) : T(1);
                sqw.data[static_cast<size_t>(i * plane + j)] =
                    pos ? std::sqrt(td[2 * plane + j]) : T(0);
                sqh.data[static_cast<size_t>(i * plane + j)] =
                    pos ? std::sqrt(td[3 * plane + j]) : T(0);
                for (int64_t c = 0; c < nc; ++c)
                    maskc.data[static_cast<size_t>((i * nc + c) * plane + j)] = pos ? T(1) : T(0);
            }
        }
        const int m = g.input(std::move(mask));
        const int nm = g.input(std::move(negm));
        const int mc = g.input(std::move(maskc));
        const int tfull = g.input(tgt);

        auto chan = [&](int node, int64_t c0, int64_t len) { return g.slice(node, 1, c0, len); };
        auto sq = [&](int a) { return g.mul(a, a); };

        // Offsets: sigmoid of the raw channel against the stored cell offset.
        int cterm = -1;
        for (int64_t c = 0; c < 2; ++c) {
            const int d = g.sub(g.sigmoid(chan(p, c, 1)), chan(tfull, c, 1));
            const int t = g.mul(sq(d), m);
            cterm = (cterm < 0) ? t : g.add(cterm, t);
        }
        // Extents: exp of the raw channel times stride/input recovers the
        // normalized size; raw values are zeroed on negative cells before exp
        // so the masked product stays finite.
        const T k = T(1) / static_cast<T>(gh);
        const int sqwt[2] = {g.input(std::move(sqw)), g.input(std::move(sqh))};
        for (int64_t c = 2; c < 4; ++c) {
            const int e = g.scale(g.exp(g.mul(chan(p, c, 1), m)), k);
            const int d = g.sub(g.sqrt(e), sqwt[c - 2]);
            cterm = g.add(cterm, g.mul(sq(d), m));
        }
        const int so = g.sigmoid(chan(p, 4, 1));
        const int oterm = g.mul(sq(g.sub(so, chan(tfull, 4, 1))), m);
        const int nterm = g.mul(sq(so), nm);
        // Per-class binary cross entropy from logits: softplus(l) - y*l.
        const int lc = chan(p, 5, nc);
        const int bce = g.sub(g.softplus(lc), g.mul(chan(tfull, 5, nc), lc));
        const int klterm = g.mul(bce, mc);

        auto acc = [&](int& into, int term) {
            const int ssum = g.sum(term);
            into = (into < 0) ? ssum : g.add(into, ssum);
        };
        acc(coord, cterm);
        acc(obj, oterm);
        acc(noobj, nterm);
        acc(cls, klterm);
    }
    nodes.coord = g.scale(coord, static_cast<T>(w.coord));
    nodes.obj = g.scale(obj, static_cast<T>(w.obj));
    nodes.noobj = g.scale(noobj, static_cast<T>(w.noobj));
    nodes.cls = g.scale(cls, static_cast<T>(w.cls));
    nodes.total = g.add(g.add(nodes.coord, nodes.obj), g.add(nodes.noobj, nodes.cls));
    return nodes;
}

template LossNodes record_detection_loss<float>(GraphT<float>&, const std::array<int, 3>&,
                                                const std::array<TensorT<float>, 3>&,
                                                const LossWeights&);
template LossNodes record_detection_loss<double>(GraphT<double>&, const std::array<int, 3>&,
                                                 const std::array<TensorT<double>, 3>&,
                                                 const LossWeights&);

LossBreakdown detection_loss(const std::array<Tensor, 3>& preds,
                             const std::array<Tensor, 3>& targets, const LossWeights& w) {
    GraphT<float> g;
    std::array<int, 3> ids{};
    for (int s = 0; s < 3; ++s) ids[static_cast<size_t>(s)] = g.input(preds[static_cast<size_t>(s)]);
    const LossNodes n = record_detection_loss(g, ids, targets, w);
    LossBreakdown b;
    b.total = g.val(n.total).data[0];
    b.coord = g.val(n.coord).data[0];
    b.obj = g.val(n.obj).data[0];
    b.noobj = g.val(n.noobj).data[0];
    b.cls = g.val(n.cls).data[0];
    return b;
}

std::vector<Detection> decode(const std::array<Tensor, 3>& preds, float conf_thresh) {
    std::vector<Detection> out;
    for (int s = 0; s < 3; ++s) {
        const Tensor& p = preds[static_cast<size_t>(s)];
        if (p.rank() != 3) throw dim_error("decode: per-scale tensor must be rank 3");
        const int64_t ch = p.dim(0), gh = p.dim(1), gw = p.dim(2);
        const int64_t nc = ch - 5;
        if (nc < 1) throw dim_error("decode: need at least 6 channels");
        if (gh != gw) throw dim_error("decode: grid must be square");
        const int64_t plane = gh * gw;
        const float inv_g = 1.0f / static_cast<float>(gh);
        const float* d = p.data.data();
        for (int64_t y = 0; y < gh; ++y) {
            for (int64_t x = 0; x < gw; ++x) {
                const int64_t j = y * gw + x;
                const float obj = ops::sigmoid_scalar(d[4 * plane + j]);
                int best = 0;
                float bestp = ops::sigmoid_scalar(d[5 * plane + j]);
                for (int64_t c = 1; c < nc; ++c) {
                    const float pc = ops::sigmoid_scalar(d[(5 + c) * plane + j]);
                    if (pc > bestp) {
                        bestp = pc;
                        best = static_cast<int>(c);
                    }
                }
                const float score = obj * bestp;
                if (score < conf_thresh) continue;
                Detection det;
                det.class_id = best;
                det.score = score;
                det.cx = std::clamp(
                    (static_cast<float>(x) + ops::sigmoid_scalar(d[0 * plane + j])) * inv_g, 0.0f,
                    1.0f);
                det.cy = std::clamp(
                    (static_cast<float>(y) + ops::sigmoid_scalar(d[1 * plane + j])) * inv_g, 0.0f,
                    1.0f);
                det.w = std::min(std::exp(d[2 * plane + j]) * inv_g, 1.0f);
                det.h = std::min(std::exp(d[3 * plane + j]) * inv_g, 1.0f);
                out.push_back(det);
            }
        }
    }
    return out;
}

namespace {

bool det_order(const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.cx != b.cx) return a.cx < b.cx;
    return a.cy < b.cy;
}

}  // namespace

std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh) {
    if (!(iou_thresh > 0.0 && iou_thresh <= 1.0))
        throw config_error("nms: iou_thresh must lie in (0, 1]");
    std::sort(dets.begin(), dets.end(), det_order);
    std::vector<Detection> kept;
    kept.reserve(dets.size());
    for (const Detection& d : dets) {
        bool suppressed = false;
        for (const Detection& k : kept) {
            if (k.class_id != d.class_id) continue;
            if (iou(k, d) > iou_thresh) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

std::vector<double> coco_thresholds() {
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
    return t;
}

namespace {

// Average precision for one class at one IoU threshold, or -1 when the class
// has neither ground truth nor detections and must not influence the mean.
double average_precision(const std::vector<std::vector<Detection>>& dets,
                         const std::vector<std::vector<GroundTruthBox>>& gts, int cls,
                         double thresh) {
    struct Entry {
        float score;
        size_t image;
        size_t index;
    };
    std::vector<Entry> entries;
    size_t n_gt = 0;
    for (size_t i = 0; i < dets.size(); ++i) {
        for (size_t j = 0; j < dets[i].size(); ++j)
            if (dets[i][j].class_id == cls) entries.push_back({dets[i][j].score, i, j});
        for (const GroundTruthBox& b : gts[i])
            if (b.class_id == cls) ++n_gt;
    }
    if (entries.empty() && n_gt == 0) return -1.0;
    if (entries.empty() || n_gt == 0) return 0.0;
    std::sort(entries.begin(), entries.end(), [&](const Entry& a, const Entry& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.image != b.image) return a.image < b.image;
        const Detection& da = dets[a.image][a.index];
        const Detection& db = dets[b.image][b.index];
        if (da.cx != db.cx) return da.cx < db.cx;
        return da.cy < db.cy;
    });
    std::vector<std::vector<bool>> used(gts.size());
    for (size_t i = 0; i < gts.size(); ++i) used[i].assign(gts[i].size(), false);
    std::vector<bool> tp(entries.size(), false);
    for (size_t e = 0; e < entries.size(); ++e) {
        const Detection& d = dets[entries[e].image][entries[e].index];
        const std::vector<GroundTruthBox>& g = gts[entries[e].image];
        double best = 0.0;
        size_t best_i = g.size();
        for (size_t i = 0; i < g.size(); ++i) {
            if (g[i].class_id != cls || used[entries[e].image][i]) continue;
            const double v = iou_xywh(d.cx, d.cy, d.w, d.h, g[i].cx, g[i].cy, g[i].w, g[i].h);
            if (v > best) {
                best = v;
                best_i = i;
            }
        }
        if (best_i < g.size() && best >= thresh) {
            used[entries[e].image][best_i] = true;
            tp[e] = true;
        }
    }
    // 101-point interpolation: running precision/recall, then the precision
    // envelope sampled at recall 0.00, 0.01, ..., 1.00.
    std::vector<double> prec(entries.size()), rec(entries.size());
    size_t cum_tp = 0;
    for (size_t e = 0; e < entries.size(); ++e) {
        if (tp[e]) ++cum_tp;
        prec[e] = static_cast<double>(cum_tp) / static_cast<double>(e + 1);
        rec[e] = static_cast<double>(cum_tp) / static_cast<double>(n_gt);
    }
    for (size_t e = entries.size(); e-- > 1;) prec[e - 1] = std::max(prec[e - 1], prec[e]);
    double ap = 0.0;
    for (int i = 0; i <= 100; ++i) {
        const double r = static_cast<double>(i) / 100.0;
        // First recall point >= r; envelope precision there (0 beyond max recall).
        double p = 0.0;
        for (size_t e = 0; e < entries.size(); ++e) {
            if (rec[e] >= r - 1e-12) {
                p = prec[e];
                break;
            }
        }
        ap += p;
    }
    return ap / 101.0;
}

}  // namespace

EvalResult mean_average_precision(const std::vector<std::vector<Detection>>& dets,
                                  const std::vector<std::vector<GroundTruthBox>>& gts,
                                  int num_classes, const std::vector<double>& thresholds) {
    if (dets.size() != gts.size())
        throw dim_error("mean_average_precision: detections and ground truth must cover the "
                        "same images");
    if (num_classes <= 0)
        throw config_error("mean_average_precision: num_classes must be positive");
    if (thresholds.empty())
        throw config_error("mean_average_precision: need at least one IoU threshold");
    EvalResult r;
    r.thresholds = thresholds;
    for (const double t : thresholds) {
        double sum = 0.0;
        int counted = 0;
        std::vector<double> row(static_cast<size_t>(num_classes));
        for (int c = 0; c < num_classes; ++c) {
            const double ap = average_precision(dets, gts, c, t);
            row[static_cast<size_t>(c)] = ap;
            if (ap < 0) continue;
            sum += ap;
            ++counted;
        }
        r.per_class.push_back(std::move(row));
        r.per_threshold.push_back(counted ? sum / counted : 0.0);
    }
    double total = 0.0;
    for (size_t i = 0; i < thresholds.size(); ++i) {
        total += r.per_threshold[i];
        if (std::abs(thresholds[i] - 0.5) < 1e-9) r.map50 = r.per_threshold[i];
    }
    r.map50_95 = total / static_cast<double>(r.per_threshold.size());
    return r;
}

}  // namespace y12::det
