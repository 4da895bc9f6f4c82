// Command-line workbench: model description tables, attention
// micro-benchmarks, a gradient-check table, toy training and evaluation.
//
// Exit codes: 0 success, 1 verification failure, 2 usage/config error,
// 3 I/O error.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "y12/attention.hpp"
#include "y12/data.hpp"
#include "y12/detect.hpp"
#include "y12/gradcheck_suite.hpp"
#include "y12/model.hpp"
#include "y12/train.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kOk = 0;
constexpr int kVerificationFailure = 1;
constexpr int kUsageError = 2;
constexpr int kIoError = 3;

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw y12::io_error("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& body) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw y12::io_error("cannot open " + path + " for writing");
    f << body;
    f.flush();
    if (!f) throw y12::io_error("short write to " + path);
}

// "-" addresses stdout so reports can be piped.
void emit(const std::string& out, const std::string& body) {
    if (out.empty() || out == "-")
        std::cout << body;
    else
        write_file(out, body);
}

double percentile_sorted(const std::vector<double>& sorted, double p) {
    const auto last = static_cast<double>(sorted.size() - 1);
    return sorted[static_cast<size_t>(std::llround(p * last))];
}

// ---------------------------------------------------------------------------
// Minimal SVG scatter/line plot. Hand-rolled so reports stay dependency-free
// and diffable.
// ---------------------------------------------------------------------------

struct SvgSeries {
    std::string name;
    std::vector<std::array<double, 2>> pts;  // x, y
};

std::string svg_plot(const std::string& title, const std::string& xlabel,
                     const std::string& ylabel, const std::vector<SvgSeries>& series,
                     bool connect) {
    const double W = 640, H = 420, ml = 80, mr = 24, mt = 44, mb = 56;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& s : series)
        for (const auto& p : s.pts) {
            if (first) {
                xmin = xmax = p[0];
                ymin = ymax = p[1];
                first = false;
            }
            xmin = std::min(xmin, p[0]);
            xmax = std::max(xmax, p[0]);
            ymin = std::min(ymin, p[1]);
            ymax = std::max(ymax, p[1]);
        }
    if (xmax - xmin <= 0) {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if (ymax - ymin <= 0) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    const double xpad = 0.05 * (xmax - xmin), ypad = 0.05 * (ymax - ymin);
    xmin -= xpad;
    xmax += xpad;
    ymin -= ypad;
    ymax += ypad;
    auto X = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto Y = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6g", v);
        return std::string(buf);
    };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c",
                                   "#9467bd", "#8c564b", "#e377c2"};

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    s << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    s << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << title
      << "</text>\n";
    // axes
    s << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
      << H - mb << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
      << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = xmin + (xmax - xmin) * i / 4.0;
        const double fy = ymin + (ymax - ymin) * i / 4.0;
        s << "<line x1=\"" << X(fx) << "\" y1=\"" << H - mb << "\" x2=\"" << X(fx) << "\" y2=\""
          << H - mb + 5 << "\" stroke=\"black\"/>\n";
        s << "<text x=\"" << X(fx) << "\" y=\"" << H - mb + 20
          << "\" text-anchor=\"middle\" font-size=\"11\">" << num(fx) << "</text>\n";
        s << "<line x1=\"" << ml - 5 << "\" y1=\"" << Y(fy) << "\" x2=\"" << ml << "\" y2=\""
          << Y(fy) << "\" stroke=\"black\"/>\n";
        s << "<text x=\"" << ml - 8 << "\" y=\"" << Y(fy) + 4
          << "\" text-anchor=\"end\" font-size=\"11\">" << num(fy) << "</text>\n";
    }
    s << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-size=\"13\">" << xlabel << "</text>\n";
    s << "<text x=\"18\" y=\"" << (mt + H - mb) / 2
      << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
      << (mt + H - mb) / 2 << ")\">" << ylabel << "</text>\n";
    for (size_t k = 0; k < series.size(); ++k) {
        const char* color = colors[k % 6];
        if (connect && series[k].pts.size() > 1) {
            s << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
            for (const auto& p : series[k].pts) s << X(p[0]) << "," << Y(p[1]) << " ";
            s << "\"/>\n";
        }
        for (const auto& p : series[k].pts)
            s << "<circle cx=\"" << X(p[0]) << "\" cy=\"" << Y(p[1]) << "\" r=\"3.5\" fill=\""
              << color << "\"/>\n";
        s << "<rect x=\"" << W - mr - 130 << "\" y=\"" << mt + 18.0 * static_cast<double>(k)
          << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n";
        s << "<text x=\"" << W - mr - 115 << "\" y=\"" << mt + 18.0 * static_cast<double>(k) + 9
          << "\" font-size=\"12\">" << series[k].name << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

// ---------------------------------------------------------------------------
// describe: parameter and FLOP tables for the four variants.
// ---------------------------------------------------------------------------

struct DescribeOpts {
    std::string config;
    std::string format = "csv";
    std::string out = "-";
};

int cmd_describe(const DescribeOpts& o) {
    y12::ModelConfig base;
    uint64_t seed = 0;
    if (!o.config.empty()) std::tie(base, seed) = y12::ModelConfig::from_text(read_file(o.config));

    struct ModuleRow {
        std::string module;
        uint64_t params = 0;
        uint64_t flops = 0;
    };
    struct VariantRows {
        std::string name;
        std::vector<ModuleRow> modules;
        uint64_t params_total = 0;
        uint64_t flops_total = 0;
    };
    std::vector<VariantRows> table;
    for (const char* name : {"n", "s", "m", "x"}) {
        y12::ModelConfig cfg = base;
        cfg.variant = y12::Variant::preset(name);
        y12::Model model(cfg, seed);
        VariantRows v;
        v.name = name;
        for (const auto& r : model.param_table()) v.modules.push_back({r.module, r.value, 0});
        for (const auto& r : model.flop_table(cfg.input_size)) {
            auto it = std::find_if(v.modules.begin(), v.modules.end(),
                                   [&](const ModuleRow& m) { return m.module == r.module; });
            if (it == v.modules.end())
                v.modules.push_back({r.module, 0, r.value});
            else
                it->flops = r.value;
        }
        v.params_total = static_cast<uint64_t>(model.param_total());
        v.flops_total = model.flop_total(cfg.input_size);
        table.push_back(std::move(v));
    }

    if (o.format == "json") {
        json doc;
        doc["variants"] = json::array();
        for (const auto& v : table) {
            json jv;
            jv["name"] = v.name;
            jv["params_total"] = v.params_total;
            jv["flops_total"] = v.flops_total;
            jv["modules"] = json::array();
            for (const auto& m : v.modules)
                jv["modules"].push_back({{"module", m.module},
                                         {"params", m.params},
                                         {"flops", m.flops}});
            doc["variants"].push_back(std::move(jv));
        }
        emit(o.out, doc.dump(2) + "\n");
    } else {
        std::ostringstream s;
        s << "variant,module,params,flops\n";
        for (const auto& v : table) {
            for (const auto& m : v.modules)
                s << v.name << "," << m.module << "," << m.params << "," << m.flops << "\n";
            s << v.name << ",total," << v.params_total << "," << v.flops_total << "\n";
        }
        emit(o.out, s.str());
    }
    return kOk;
}

// ---------------------------------------------------------------------------
// bench-attn: timed kernel comparison behind a correctness gate.
// ---------------------------------------------------------------------------

struct BenchOpts {
    std::vector<int> ns{128, 256};
    std::vector<int> ds{32};
    std::vector<int> Ls{4};
    std::vector<std::string> tiles{"64x64"};
    int threads = 1;
    int reps = 30;
    uint64_t seed = 0;
    std::string format = "csv";
    std::string out = "-";
    std::string svg;
};

struct TilePair {
    int br = 0, bc = 0;
};

TilePair parse_tile(const std::string& s) {
    const size_t x = s.find('x');
    TilePair t;
    try {
        size_t a = 0, b = 0;
        if (x == std::string::npos) throw std::invalid_argument("no separator");
        t.br = std::stoi(s.substr(0, x), &a);
        t.bc = std::stoi(s.substr(x + 1), &b);
        if (a != x || b != s.size() - x - 1) throw std::invalid_argument("trailing data");
    } catch (const std::exception&) {
        throw y12::config_error("tiles: expected <Br>x<Bc>, got '" + s + "'");
    }
    if (t.br < 1 || t.bc < 1) throw y12::config_error("tiles: sizes must be positive in '" + s + "'");
    return t;
}

struct BenchRecord {
    std::string kernel;
    int n = 0, d = 0, L = 0, br = 0, bc = 0;
    uint64_t flops = 0;
    int64_t peak_scratch = 0;
    double med = 0, p10 = 0, p90 = 0;
    int threads = 1;
};

int cmd_bench(const BenchOpts& o) {
    if (o.threads != 1)
        throw y12::config_error(
            "threads: kernels in this build run single-threaded; only --threads 1 is supported");
    if (o.reps < 30)
        throw y12::config_error("reps: the timing protocol requires at least 30 repetitions");
    std::vector<TilePair> tiles;
    for (const auto& t : o.tiles) tiles.push_back(parse_tile(t));

    struct Config {
        int n, d, L;
        TilePair tile;
    };
    std::vector<Config> grid;
    for (int n : o.ns)
        for (int d : o.ds)
            for (int L : o.Ls)
                for (const auto& t : tiles) {
                    if (n < 1 || d < 1 || L < 1)
                        throw y12::config_error("bench: n, d and L must be positive");
                    if (n % L != 0)
                        throw y12::config_error("bench: token count " + std::to_string(n) +
                                                " not divisible by area count " +
                                                std::to_string(L));
                    grid.push_back({n, d, L, t});
                }

    const bool corrupt = std::getenv("Y12_BENCH_CORRUPT") != nullptr;

    // The correctness gate covers every configuration before anything is
    // timed; a failure leaves no report behind.
    std::vector<std::array<y12::Tensor, 3>> inputs;
    inputs.reserve(grid.size());
    for (size_t i = 0; i < grid.size(); ++i) {
        const auto& c = grid[i];
        y12::Rng rng(o.seed ^ (0x9e3779b97f4a7c15ull * (i + 1)));
        std::array<y12::Tensor, 3> qkv = {y12::Tensor({c.n, c.d}), y12::Tensor({c.n, c.d}),
                                          y12::Tensor({c.n, c.d})};
        for (auto& t : qkv)
            for (auto& v : t.data) v = rng.uniform_f(-1.0f, 1.0f);

        y12::attn::AttentionConfig acfg;
        acfg.head_dim = c.d;
        acfg.num_areas = c.L;
        acfg.tile_rows = c.tile.br;
        acfg.tile_cols = c.tile.bc;
        const auto want = y12::attn::sdpa(qkv[0], qkv[1], qkv[2]);
        auto got = y12::attn::tiled_attention(qkv[0], qkv[1], qkv[2], acfg);
        if (corrupt && !got.data.empty()) got.data[0] += 1e-2f;  // fault injection hook
        float diff = 0;
        for (size_t j = 0; j < got.data.size(); ++j)
            diff = std::max(diff, std::fabs(got.data[j] - want.data[j]));
        if (diff > 1e-5f) {
            std::cerr << "verification failed: tiled vs naive max |diff| = " << diff << " at n="
                      << c.n << " d=" << c.d << " tiles=" << c.tile.br << "x" << c.tile.bc
                      << "; no timings reported\n";
            return kVerificationFailure;
        }
        inputs.push_back(std::move(qkv));
    }

    std::vector<BenchRecord> records;
    for (size_t i = 0; i < grid.size(); ++i) {
        const auto& c = grid[i];
        const auto& qkv = inputs[i];
        y12::attn::AttentionConfig acfg;
        acfg.head_dim = c.d;
        acfg.num_areas = c.L;
        acfg.tile_rows = c.tile.br;
        acfg.tile_cols = c.tile.bc;

        const std::pair<const char*, std::function<y12::Tensor()>> kernels[] = {
            {"naive", [&] { return y12::attn::sdpa(qkv[0], qkv[1], qkv[2]); }},
            {"area", [&] { return y12::attn::area_attention(qkv[0], qkv[1], qkv[2], acfg); }},
            {"tiled", [&] { return y12::attn::tiled_attention(qkv[0], qkv[1], qkv[2], acfg); }},
        };
        for (const auto& [name, run] : kernels) {
            BenchRecord r;
            r.kernel = name;
            r.n = c.n;
            r.d = c.d;
            r.L = c.L;
            r.br = c.tile.br;
            r.bc = c.tile.bc;
            r.threads = 1;
            y12::OpMeter meter;
            {
                y12::MeterScope scope(meter);
                run();
            }
            r.flops = meter.flops;
            r.peak_scratch = meter.scratch_peak;
            for (int w = 0; w < 5; ++w) run();
            std::vector<double> ns_samples;
            ns_samples.reserve(static_cast<size_t>(o.reps));
            for (int rep = 0; rep < o.reps; ++rep) {
                const auto t0 = std::chrono::steady_clock::now();
                run();
                const auto t1 = std::chrono::steady_clock::now();
                ns_samples.push_back(
                    std::chrono::duration<double, std::nano>(t1 - t0).count());
            }
            std::sort(ns_samples.begin(), ns_samples.end());
            r.med = percentile_sorted(ns_samples, 0.5);
            r.p10 = percentile_sorted(ns_samples, 0.1);
            r.p90 = percentile_sorted(ns_samples, 0.9);
            records.push_back(std::move(r));
        }
    }

    if (o.format == "json") {
        json doc;
        doc["records"] = json::array();
        for (const auto& r : records)
            doc["records"].push_back({{"kernel", r.kernel},
                                      {"n", r.n},
                                      {"d", r.d},
                                      {"L", r.L},
                                      {"Br", r.br},
                                      {"Bc", r.bc},
                                      {"flops", r.flops},
                                      {"peak_scratch_elements", r.peak_scratch},
                                      {"wall_ns_median", r.med},
                                      {"wall_ns_p10", r.p10},
                                      {"wall_ns_p90", r.p90},
                                      {"thread_count", r.threads}});
        emit(o.out, doc.dump(2) + "\n");
    } else {
        std::ostringstream s;
        s << "kernel,n,d,L,Br,Bc,flops,peak_scratch_elements,wall_ns_median,wall_ns_p10,"
             "wall_ns_p90,thread_count\n";
        for (const auto& r : records) {
            char line[256];
            std::snprintf(line, sizeof line, "%s,%d,%d,%d,%d,%d,%llu,%lld,%.1f,%.1f,%.1f,%d\n",
                          r.kernel.c_str(), r.n, r.d, r.L, r.br, r.bc,
                          static_cast<unsigned long long>(r.flops),
                          static_cast<long long>(r.peak_scratch), r.med, r.p10, r.p90, r.threads);
            s << line;
        }
        emit(o.out, s.str());
    }

    if (!o.svg.empty()) {
        std::vector<SvgSeries> series = {{"naive", {}}, {"area", {}}, {"tiled", {}}};
        for (const auto& r : records)
            for (auto& s : series)
                if (s.name == r.kernel)
                    s.pts.push_back({static_cast<double>(r.n), r.med / 1e6});
        for (auto& s : series) std::sort(s.pts.begin(), s.pts.end());
        write_file(o.svg, svg_plot("attention wall time", "tokens n", "median ms", series, true));
    }
    return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck: pass/fail table over every primitive and block.
// ---------------------------------------------------------------------------

struct GradcheckOpts {
    uint64_t seed = 0;
    std::string out;
};

int cmd_gradcheck(const GradcheckOpts& o) {
    constexpr double tol = 1e-4;
    const auto rows = y12::gc::run_gradcheck_suite(o.seed, tol);
    std::printf("%-20s %12s  %s\n", "case", "max_rel_err", "status");
    std::vector<std::string> failures;
    for (const auto& r : rows) {
        std::printf("%-20s %12.3e  %s\n", r.name.c_str(), r.max_rel_err,
                    r.pass ? "pass" : "FAIL");
        if (!r.pass) failures.push_back(r.name);
    }
    if (!o.out.empty()) {
        json doc;
        doc["seed"] = o.seed;
        doc["tolerance"] = tol;
        doc["entries"] = json::array();
        for (const auto& r : rows)
            doc["entries"].push_back(
                {{"name", r.name}, {"max_rel_err", r.max_rel_err}, {"pass", r.pass}});
        write_file(o.out, doc.dump(2) + "\n");
    }
    if (!failures.empty()) {
        std::cerr << "gradcheck failed:";
        for (const auto& f : failures) std::cerr << " " << f;
        std::cerr << "\n";
        return kVerificationFailure;
    }
    return kOk;
}

// ---------------------------------------------------------------------------
// train: fit a model on an on-disk dataset, checkpointing every epoch.
// ---------------------------------------------------------------------------

struct TrainOpts {
    std::string config;
    std::string data;
    std::string out;
    y12::train::TrainSchedule sched;
};

int cmd_train(const TrainOpts& o) {
    auto [cfg, model_seed] = y12::ModelConfig::from_text(read_file(o.config));
    y12::Model model(cfg, model_seed);
    const auto ds = y12::data::load_dataset(o.data);

    std::error_code ec;
    fs::create_directories(o.out, ec);
    if (ec) throw y12::io_error("cannot create " + o.out);
    const std::string metrics_path = o.out + "/metrics.ndjson";
    std::ofstream metrics(metrics_path);
    if (!metrics) throw y12::io_error("cannot open " + metrics_path + " for writing");

    const auto log = y12::train::train(
        model, ds, o.sched, [&](const y12::train::EpochMetrics& m, y12::Model& snapshot) {
            metrics << y12::train::metrics_json_line(m) << "\n";
            metrics.flush();
            if (!metrics) throw y12::io_error("short write to " + metrics_path);
            char name[32];
            std::snprintf(name, sizeof name, "epoch_%03d.ckpt", m.epoch);
            y12::save_checkpoint(snapshot, o.out + "/" + name);
        });
    y12::save_checkpoint(model, o.out + "/model.ckpt");
    std::printf("trained %zu epochs; final loss %.6g; artifacts in %s\n", log.size(),
                log.back().loss, o.out.c_str());
    return kOk;
}

// ---------------------------------------------------------------------------
// eval: checkpoint -> decode/NMS/mAP plus per-image latency statistics.
// ---------------------------------------------------------------------------

struct EvalOpts {
    std::string config;
    std::string data;
    std::vector<std::string> ckpts;
    float conf = 0.25f;
    double nms_iou = 0.5;
    std::string out = "-";
    std::string svg;
};

int cmd_eval(const EvalOpts& o) {
    const auto ds = y12::data::load_dataset(o.data);
    json results = json::array();
    std::vector<SvgSeries> frontier;

    for (const auto& ckpt : o.ckpts) {
        y12::Model model = [&] {
            if (o.config.empty()) return y12::load_checkpoint(ckpt);
            auto [cfg, seed] = y12::ModelConfig::from_text(read_file(o.config));
            y12::Model m(cfg, seed);
            y12::load_checkpoint_into(m, ckpt);
            return m;
        }();
        const auto& cfg = model.config();
        const int64_t s = cfg.input_size;

        std::vector<std::vector<y12::det::Detection>> dets;
        std::vector<std::vector<y12::det::GroundTruthBox>> gts;
        std::vector<double> lat;
        for (const auto& item : ds) {
            if (item.image.rank() != 3 || item.image.dim(1) != s || item.image.dim(2) != s)
                throw y12::dim_error("eval: image size does not match the model input size");
            y12::Tensor x({1, 3, s, s}, item.image.data);
            const auto t0 = std::chrono::steady_clock::now();
            auto heads = model.forward(x);
            std::array<y12::Tensor, 3> single;
            for (int sc = 0; sc < 3; ++sc) {
                y12::Tensor& h = heads[static_cast<size_t>(sc)];
                single[static_cast<size_t>(sc)] =
                    y12::ops::reshape(h, {h.dim(1), h.dim(2), h.dim(3)});
            }
            auto kept = y12::det::nms(y12::det::decode(single, o.conf), o.nms_iou);
            const auto t1 = std::chrono::steady_clock::now();
            lat.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
            dets.push_back(std::move(kept));
            gts.push_back(item.boxes);
        }
        const auto r = y12::det::mean_average_precision(dets, gts, cfg.num_classes);

        // Per-class exclusion does not depend on the IoU threshold, so the
        // sentinel survives averaging across thresholds untouched.
        size_t i50 = 0;
        for (size_t i = 0; i < r.thresholds.size(); ++i)
            if (std::abs(r.thresholds[i] - 0.5) < 1e-9) i50 = i;
        std::vector<double> ap50 = r.per_class[i50];
        std::vector<double> ap50_95(ap50.size(), 0.0);
        for (size_t c = 0; c < ap50.size(); ++c) {
            if (ap50[c] < 0) {
                ap50_95[c] = -1.0;
                continue;
            }
            double total = 0;
            for (const auto& row : r.per_class) total += row[c];
            ap50_95[c] = total / static_cast<double>(r.per_class.size());
        }
        std::sort(lat.begin(), lat.end());
        json jr;
        jr["checkpoint"] = ckpt;
        jr["variant"] = cfg.variant.name;
        jr["images"] = ds.size();
        jr["map50"] = r.map50;
        jr["map50_95"] = r.map50_95;
        jr["per_class_ap50"] = ap50;
        jr["per_class_ap50_95"] = ap50_95;
        jr["latency_ns"] = {{"median", percentile_sorted(lat, 0.5)},
                            {"p10", percentile_sorted(lat, 0.1)},
                            {"p90", percentile_sorted(lat, 0.9)},
                            {"samples", lat.size()}};
        results.push_back(std::move(jr));
        frontier.push_back(
            {cfg.variant.name, {{percentile_sorted(lat, 0.5) / 1e6, r.map50}}});
    }

    json doc;
    doc["results"] = std::move(results);
    emit(o.out, doc.dump(2) + "\n");
    if (!o.svg.empty())
        write_file(o.svg, svg_plot("latency vs mAP@50", "median ms per image", "mAP@50",
                                   frontier, false));
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"detector workbench: describe, bench-attn, gradcheck, train, eval"};
    app.require_subcommand(1);

    DescribeOpts dopt;
    auto* d = app.add_subcommand("describe", "parameter and FLOP tables for the four variants");
    d->add_option("--config", dopt.config, "model config file (variant key is overridden)");
    d->add_option("--format", dopt.format, "csv or json")
        ->check(CLI::IsMember({"csv", "json"}));
    d->add_option("--out", dopt.out, "output path, - for stdout");

    BenchOpts bopt;
    auto* b = app.add_subcommand("bench-attn", "attention kernel micro-benchmarks");
    b->add_option("--n", bopt.ns, "token counts")->delimiter(',');
    b->add_option("--d", bopt.ds, "head widths")->delimiter(',');
    b->add_option("--L", bopt.Ls, "area counts")->delimiter(',');
    b->add_option("--tiles", bopt.tiles, "tile shapes as <Br>x<Bc>")->delimiter(',');
    b->add_option("--threads", bopt.threads, "thread count (this build: 1)");
    b->add_option("--reps", bopt.reps, "timed repetitions per kernel (>= 30)");
    b->add_option("--seed", bopt.seed, "input seed");
    b->add_option("--format", bopt.format, "csv or json")
        ->check(CLI::IsMember({"csv", "json"}));
    b->add_option("--out", bopt.out, "report path, - for stdout");
    b->add_option("--svg", bopt.svg, "optional wall-time scatter plot");

    GradcheckOpts gopt;
    auto* g = app.add_subcommand("gradcheck", "finite-difference table over all blocks");
    g->add_option("--seed", gopt.seed, "input seed");
    g->add_option("--out", gopt.out, "optional JSON report path");

    TrainOpts topt;
    auto* t = app.add_subcommand("train", "train on an on-disk dataset");
    t->add_option("--config", topt.config, "model config file")->required();
    t->add_option("--data", topt.data, "dataset directory")->required();
    t->add_option("--out", topt.out, "output directory for checkpoints and metrics")->required();
    t->add_option("--epochs", topt.sched.epochs, "training epochs");
    t->add_option("--batch", topt.sched.batch_size, "batch size");
    t->add_option("--lr", topt.sched.base_lr, "peak learning rate");
    t->add_option("--lr-min", topt.sched.lr_min, "cosine floor");
    t->add_option("--warmup", topt.sched.warmup_steps, "linear warmup steps");
    t->add_option("--mosaic-p", topt.sched.mosaic_p, "mosaic probability");
    t->add_option("--mixup-p", topt.sched.mixup_p, "mixup probability");
    t->add_option("--mixup-beta", topt.sched.mixup_beta, "mixup beta parameter");
    t->add_option("--grad-clip", topt.sched.grad_clip, "global gradient norm ceiling");
    t->add_option("--seed", topt.sched.seed, "shuffling and augmentation seed");

    EvalOpts eopt;
    auto* e = app.add_subcommand("eval", "evaluate checkpoints on an on-disk dataset");
    e->add_option("--data", eopt.data, "dataset directory")->required();
    e->add_option("--ckpt", eopt.ckpts, "checkpoint path (repeatable)")->required();
    e->add_option("--config", eopt.config, "optional config the checkpoint must match");
    e->add_option("--conf", eopt.conf, "decode confidence threshold");
    e->add_option("--nms-iou", eopt.nms_iou, "NMS suppression threshold");
    e->add_option("--out", eopt.out, "result JSON path, - for stdout");
    e->add_option("--svg", eopt.svg, "optional latency vs mAP plot");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        return rc == 0 ? kOk : kUsageError;
    }

    try {
        if (d->parsed()) return cmd_describe(dopt);
        if (b->parsed()) return cmd_bench(bopt);
        if (g->parsed()) return cmd_gradcheck(gopt);
        if (t->parsed()) return cmd_train(topt);
        if (e->parsed()) return cmd_eval(eopt);
    } catch (const y12::io_error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kIoError;
    } catch (const y12::format_error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kIoError;
    } catch (const y12::contract_error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kVerificationFailure;
    } catch (const y12::error& err) {
        // config, dimension and compatibility failures are usage errors
        std::cerr << "error: " << err.what() << "\n";
        return kUsageError;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kVerificationFailure;
    }
    return kUsageError;
}
