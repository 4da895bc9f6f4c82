// Python surface over the core: attention kernels, the detector model, the
// synthetic dataset and the detection metric utilities. Tensors cross the
// boundary as float32 numpy arrays by copy.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "y12/attention.hpp"
#include "y12/data.hpp"
#include "y12/detect.hpp"
#include "y12/model.hpp"

namespace py = pybind11;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

y12::Tensor to_tensor(const FloatArray& a) {
    std::vector<int64_t> shape(static_cast<size_t>(a.ndim()));
    for (py::ssize_t i = 0; i < a.ndim(); ++i)
        shape[static_cast<size_t>(i)] = static_cast<int64_t>(a.shape(i));
    y12::Tensor t(std::move(shape));
    std::copy(a.data(), a.data() + t.numel(), t.data.begin());
    return t;
}

py::array_t<float> to_array(const y12::Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<float> a(shape);
    std::copy(t.data.begin(), t.data.end(), a.mutable_data());
    return a;
}

y12::attn::AttentionConfig attn_cfg(const FloatArray& q, int areas, int tile_rows,
                                    int tile_cols) {
    y12::attn::AttentionConfig cfg;
    cfg.head_dim = q.ndim() == 2 ? static_cast<int>(q.shape(1)) : 0;
    cfg.num_areas = areas;
    cfg.tile_rows = tile_rows;
    cfg.tile_cols = tile_cols;
    return cfg;
}

y12::ModelConfig make_config(const std::string& variant, int num_classes, int input_size,
                             int area_count) {
    y12::ModelConfig cfg;
    cfg.variant = y12::Variant::preset(variant);
    cfg.num_classes = num_classes;
    cfg.input_size = input_size;
    cfg.area_count = area_count;
    cfg.validate();
    return cfg;
}

std::array<y12::Tensor, 3> three_tensors(const FloatArray& a, const FloatArray& b,
                                         const FloatArray& c) {
    return {to_tensor(a), to_tensor(b), to_tensor(c)};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "detector workbench core";

    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const y12::config_error& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const y12::dim_error& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        }
    });

    m.def(
        "sdpa",
        [](const FloatArray& q, const FloatArray& k, const FloatArray& v) {
            return to_array(y12::attn::sdpa(to_tensor(q), to_tensor(k), to_tensor(v)));
        },
        py::arg("q"), py::arg("k"), py::arg("v"),
        "softmax(q k^T / sqrt(d)) v over the full token range");

    m.def(
        "area_attention",
        [](const FloatArray& q, const FloatArray& k, const FloatArray& v, int areas) {
            return to_array(y12::attn::area_attention(to_tensor(q), to_tensor(k), to_tensor(v),
                                                      attn_cfg(q, areas, 64, 64)));
        },
        py::arg("q"), py::arg("k"), py::arg("v"), py::arg("areas") = 4,
        "attention restricted to contiguous token bands");

    m.def(
        "tiled_attention",
        [](const FloatArray& q, const FloatArray& k, const FloatArray& v, int tile_rows,
           int tile_cols) {
            return to_array(y12::attn::tiled_attention(
                to_tensor(q), to_tensor(k), to_tensor(v), attn_cfg(q, 1, tile_rows, tile_cols)));
        },
        py::arg("q"), py::arg("k"), py::arg("v"), py::arg("tile_rows") = 64,
        py::arg("tile_cols") = 64, "streaming attention with an online softmax");

    m.def(
        "attention_cost",
        [](int64_t n, int64_t d, int64_t areas) {
            const auto r = y12::attn::attention_cost(n, d, areas);
            py::dict out;
            out["flops"] = r.flops;
            out["peak_scratch_elements"] = r.peak_scratch_elements;
            return out;
        },
        py::arg("n"), py::arg("d"), py::arg("areas") = 4,
        "analytic cost of area attention at (n, d, areas)");

    py::class_<y12::det::GroundTruthBox>(m, "GroundTruthBox")
        .def(py::init([](int class_id, float cx, float cy, float w, float h, float weight) {
                 return y12::det::GroundTruthBox{class_id, cx, cy, w, h, weight};
             }),
             py::arg("class_id"), py::arg("cx"), py::arg("cy"), py::arg("w"), py::arg("h"),
             py::arg("weight") = 1.0f)
        .def_readwrite("class_id", &y12::det::GroundTruthBox::class_id)
        .def_readwrite("cx", &y12::det::GroundTruthBox::cx)
        .def_readwrite("cy", &y12::det::GroundTruthBox::cy)
        .def_readwrite("w", &y12::det::GroundTruthBox::w)
        .def_readwrite("h", &y12::det::GroundTruthBox::h)
        .def_readwrite("weight", &y12::det::GroundTruthBox::weight);

    py::class_<y12::det::Detection>(m, "Detection")
        .def(py::init([](int class_id, float cx, float cy, float w, float h, float score) {
                 return y12::det::Detection{class_id, cx, cy, w, h, score};
             }),
             py::arg("class_id"), py::arg("cx"), py::arg("cy"), py::arg("w"), py::arg("h"),
             py::arg("score"))
        .def_readwrite("class_id", &y12::det::Detection::class_id)
        .def_readwrite("cx", &y12::det::Detection::cx)
        .def_readwrite("cy", &y12::det::Detection::cy)
        .def_readwrite("w", &y12::det::Detection::w)
        .def_readwrite("h", &y12::det::Detection::h)
        .def_readwrite("score", &y12::det::Detection::score);

    m.def("iou",
          static_cast<double (*)(const y12::det::Detection&, const y12::det::Detection&)>(
              y12::det::iou),
          py::arg("a"), py::arg("b"));

    m.def(
        "decode",
        [](const FloatArray& s8, const FloatArray& s16, const FloatArray& s32, float conf) {
            return y12::det::decode(three_tensors(s8, s16, s32), conf);
        },
        py::arg("s8"), py::arg("s16"), py::arg("s32"), py::arg("conf") = 0.25f,
        "raw per-scale heads [c,g,g] -> detections above the confidence threshold");

    m.def("nms", &y12::det::nms, py::arg("detections"), py::arg("iou_thresh") = 0.5,
          "greedy per-class suppression");

    m.def(
        "mean_average_precision",
        [](const std::vector<std::vector<y12::det::Detection>>& dets,
           const std::vector<std::vector<y12::det::GroundTruthBox>>& gts, int num_classes) {
            const auto r = y12::det::mean_average_precision(dets, gts, num_classes);
            py::dict out;
            out["map50"] = r.map50;
            out["map50_95"] = r.map50_95;
            out["thresholds"] = r.thresholds;
            out["per_threshold"] = r.per_threshold;
            out["per_class"] = r.per_class;
            return out;
        },
        py::arg("detections"), py::arg("ground_truth"), py::arg("num_classes"));

    py::class_<y12::Model>(m, "Model")
        .def(py::init([](const std::string& variant, int num_classes, int input_size,
                         int area_count, uint64_t seed) {
                 return y12::Model(make_config(variant, num_classes, input_size, area_count),
                                   seed);
             }),
             py::arg("variant") = "n", py::arg("num_classes") = 3, py::arg("input_size") = 64,
             py::arg("area_count") = 4, py::arg("seed") = 0)
        .def(
            "forward",
            [](const y12::Model& model, const FloatArray& images, const std::string& kernel) {
                const auto k = kernel == "naive" ? y12::nn::AttnKernel::naive
                                                 : y12::nn::AttnKernel::tiled;
                const auto out = model.forward(to_tensor(images), k);
                return py::make_tuple(to_array(out[0]), to_array(out[1]), to_array(out[2]));
            },
            py::arg("images"), py::arg("kernel") = "tiled",
            "raw per-scale predictions for [n,3,s,s] images")
        .def("param_total", &y12::Model::param_total)
        .def("flop_total",
             [](const y12::Model& model) {
                 return model.flop_total(model.config().input_size);
             })
        .def("param_table",
             [](y12::Model& model) {
                 std::vector<std::pair<std::string, uint64_t>> rows;
                 for (const auto& r : model.param_table()) rows.emplace_back(r.module, r.value);
                 return rows;
             })
        .def_property_readonly(
            "variant", [](const y12::Model& model) { return model.config().variant.name; })
        .def_property_readonly(
            "input_size", [](const y12::Model& model) { return model.config().input_size; })
        .def_property_readonly(
            "num_classes", [](const y12::Model& model) { return model.config().num_classes; })
        .def("save", [](y12::Model& model, const std::string& path) {
            y12::save_checkpoint(model, path);
        })
        .def_static("load", [](const std::string& path) { return y12::load_checkpoint(path); });

    m.def(
        "synth_dataset",
        [](int n, int size, uint64_t seed) {
            py::list out;
            for (const auto& item : y12::data::synth_dataset(n, size, seed)) {
                py::dict d;
                d["image"] = to_array(item.image);
                d["boxes"] = item.boxes;
                out.append(std::move(d));
            }
            return out;
        },
        py::arg("n"), py::arg("size") = 64, py::arg("seed") = 0,
        "labeled color-shape images: list of {image, boxes}");
}
