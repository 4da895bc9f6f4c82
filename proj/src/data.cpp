#include "y12/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

namespace y12::data {

namespace {

double normal_draw(Rng& rng) {
    const double u1 = std::max(rng.uniform(), 0x1.0p-53);
    const double u2 = rng.uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi_v<double> * u2);
}

// Marsaglia-Tsang squeeze method; the alpha < 1 case boosts through alpha + 1.
double sample_gamma(double alpha, Rng& rng) {
    if (alpha < 1.0) {
        const double u = std::max(rng.uniform(), 0x1.0p-53);
        return sample_gamma(alpha + 1.0, rng) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal_draw(rng);
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = std::max(rng.uniform(), 0x1.0p-53);
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

}  // namespace

double sample_beta(double beta, Rng& rng) {
    if (!(beta > 0)) throw config_error("sample_beta: beta must be positive");
    const double x = sample_gamma(beta, rng);
    const double y = sample_gamma(beta, rng);
    if (x + y <= 0) return 0.5;
    return x / (x + y);
}

namespace {

struct PaintRect {
    int64_t x0, y0, w, h;
};

bool rects_clash(const PaintRect& a, const PaintRect& b) {
    return a.x0 < b.x0 + b.w + 1 && b.x0 < a.x0 + a.w + 1 && a.y0 < b.y0 + b.h + 1 &&
           b.y0 < a.y0 + a.h + 1;
}

struct Extent {
    int64_t min_x = INT64_MAX, max_x = INT64_MIN, min_y = INT64_MAX, max_y = INT64_MIN;
    void add(int64_t x, int64_t y) {
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
    }
    bool empty() const { return max_x < min_x; }
};

void paint(Tensor& img, int64_t x, int64_t y, const float rgb[3]) {
    const int64_t s = img.dim(1);
    for (int64_t c = 0; c < 3; ++c)
        img.data[static_cast<size_t>((c * s + y) * s + x)] = rgb[c];
}

}  // namespace

Dataset synth_dataset(int n_images, int image_size, uint64_t seed) {
    if (n_images < 0) throw config_error("synth_dataset: n_images must be non-negative");
    if (image_size < 16) throw config_error("synth_dataset: image_size must be at least 16");
    const int64_t s = image_size;
    Rng rng(seed);
    // A shuffled deck keeps class frequencies balanced while the order stays
    // seed-random.
    std::vector<int> deck;
    auto next_class = [&]() {
        if (deck.empty()) {
            deck = {0, 1, 2};
            for (size_t i = deck.size(); i-- > 1;)
                std::swap(deck[i], deck[static_cast<size_t>(rng.uniform_int(
                                       static_cast<int64_t>(i) + 1))]);
        }
        const int c = deck.back();
        deck.pop_back();
        return c;
    };

    Dataset ds;
    ds.reserve(static_cast<size_t>(n_images));
    const int64_t min_px = std::max<int64_t>(12, s / 6);
    const int64_t max_px = std::max(min_px + 1, (s * 42) / 100);
    for (int i = 0; i < n_images; ++i) {
        LabeledImage item;
        item.image = Tensor({3, s, s});
        // Mid-band noise: shape pixels (>= 0.75 in their own channel, <= 0.25
        // elsewhere) stay outside the background range in every channel.
        for (auto& v : item.image.data) v = rng.uniform_f(0.3f, 0.7f);

        const int64_t want = 1 + rng.uniform_int(4);
        std::vector<PaintRect> placed;
        for (int64_t k = 0; k < want; ++k) {
            const int cls = next_class();
            PaintRect r{};
            bool ok = false;
            for (int attempt = 0; attempt < 12 && !ok; ++attempt) {
                r.w = min_px + rng.uniform_int(max_px - min_px + 1);
                r.h = (cls == 2) ? min_px + rng.uniform_int(max_px - min_px + 1) : r.w;
                r.x0 = 1 + rng.uniform_int(s - r.w - 2);
                r.y0 = 1 + rng.uniform_int(s - r.h - 2);
                ok = true;
                for (const PaintRect& p : placed)
                    if (rects_clash(r, p)) {
                        ok = false;
                        break;
                    }
            }
            if (!ok) continue;
            placed.push_back(r);

            float rgb[3];
            for (int c = 0; c < 3; ++c)
                rgb[c] = (c == cls) ? rng.uniform_f(0.75f, 1.0f) : rng.uniform_f(0.0f, 0.25f);

            Extent e;
            if (cls == 0) {  // circle
                const double cx = static_cast<double>(r.x0) + (static_cast<double>(r.w) - 1) / 2.0;
                const double cy = static_cast<double>(r.y0) + (static_cast<double>(r.h) - 1) / 2.0;
                const double rad = static_cast<double>(r.w) / 2.0 - 0.1;
                for (int64_t y = r.y0; y < r.y0 + r.h; ++y)
                    for (int64_t x = r.x0; x < r.x0 + r.w; ++x) {
                        const double dx = static_cast<double>(x) - cx;
                        const double dy = static_cast<double>(y) - cy;
                        if (dx * dx + dy * dy <= rad * rad) {
                            paint(item.image, x, y, rgb);
                            e.add(x, y);
                        }
                    }
            } else if (cls == 1) {  // square
                for (int64_t y = r.y0; y < r.y0 + r.h; ++y)
                    for (int64_t x = r.x0; x < r.x0 + r.w; ++x) {
                        paint(item.image, x, y, rgb);
                        e.add(x, y);
                    }
            } else {  // triangle: apex centered on the top row, full base
                const double cx = static_cast<double>(r.x0) + (static_cast<double>(r.w) - 1) / 2.0;
                for (int64_t y = r.y0; y < r.y0 + r.h; ++y) {
                    const double t =
                        (static_cast<double>(y - r.y0) + 0.5) / static_cast<double>(r.h);
                    const double half = t * static_cast<double>(r.w) / 2.0;
                    bool any = false;
                    for (int64_t x = r.x0; x < r.x0 + r.w; ++x) {
                        if (std::abs(static_cast<double>(x) - cx) <= half) {
                            paint(item.image, x, y, rgb);
                            e.add(x, y);
                            any = true;
                        }
                    }
                    if (!any) {  // keep the apex row so the box stays tight
                        const int64_t x = static_cast<int64_t>(std::lround(cx));
                        paint(item.image, x, y, rgb);
                        e.add(x, y);
                    }
                }
            }
            if (e.empty()) continue;
            const int64_t bw = e.max_x - e.min_x + 1;
            const int64_t bh = e.max_y - e.min_y + 1;
            if (bw < 4 || bh < 4) continue;
            det::GroundTruthBox box;
            box.class_id = cls;
            box.cx = static_cast<float>(static_cast<double>(e.min_x + e.max_x + 1) /
                                        (2.0 * static_cast<double>(s)));
            box.cy = static_cast<float>(static_cast<double>(e.min_y + e.max_y + 1) /
                                        (2.0 * static_cast<double>(s)));
            box.w = static_cast<float>(static_cast<double>(bw) / static_cast<double>(s));
            box.h = static_cast<float>(static_cast<double>(bh) / static_cast<double>(s));
            item.boxes.push_back(box);
        }
        ds.push_back(std::move(item));
    }
    return ds;
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (a.rank() != 3 || a.dim(0) != 3) throw dim_error(std::string(who) + ": images must be [3, H, W]");
    if (a.shape != b.shape) throw dim_error(std::string(who) + ": image sizes differ");
}

}  // namespace

LabeledImage mosaic_at(const std::array<const LabeledImage*, 4>& src, int64_t center_x,
                       int64_t center_y) {
    for (const auto* s : src) check_same_shape(src[0]->image, s->image, "mosaic");
    const int64_t h = src[0]->image.dim(1), w = src[0]->image.dim(2);
    if (center_x < 0 || center_x > w || center_y < 0 || center_y > h)
        throw config_error("mosaic: center outside the canvas");

    LabeledImage out;
    out.image = Tensor({3, h, w});
    // Quadrant bounds [x0, x1) x [y0, y1), one source each, same-position crops.
    const int64_t qx[4][2] = {{0, center_x}, {center_x, w}, {0, center_x}, {center_x, w}};
    const int64_t qy[4][2] = {{0, center_y}, {0, center_y}, {center_y, h}, {center_y, h}};
    for (int q = 0; q < 4; ++q) {
        const Tensor& in = src[static_cast<size_t>(q)]->image;
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = qy[q][0]; y < qy[q][1]; ++y)
                for (int64_t x = qx[q][0]; x < qx[q][1]; ++x)
                    out.image.data[static_cast<size_t>((c * h + y) * w + x)] =
                        in.data[static_cast<size_t>((c * h + y) * w + x)];
    }
    for (int q = 0; q < 4; ++q) {
        const double gx0 = static_cast<double>(qx[q][0]) / static_cast<double>(w);
        const double gx1 = static_cast<double>(qx[q][1]) / static_cast<double>(w);
        const double gy0 = static_cast<double>(qy[q][0]) / static_cast<double>(h);
        const double gy1 = static_cast<double>(qy[q][1]) / static_cast<double>(h);
        for (const det::GroundTruthBox& b : src[static_cast<size_t>(q)]->boxes) {
            const double bx0 = std::max(static_cast<double>(b.cx) - b.w / 2.0, gx0);
            const double bx1 = std::min(static_cast<double>(b.cx) + b.w / 2.0, gx1);
            const double by0 = std::max(static_cast<double>(b.cy) - b.h / 2.0, gy0);
            const double by1 = std::min(static_cast<double>(b.cy) + b.h / 2.0, gy1);
            if (bx1 <= bx0 || by1 <= by0) continue;
            const double kept = (bx1 - bx0) * (by1 - by0);
            const double orig = static_cast<double>(b.w) * static_cast<double>(b.h);
            if (kept < 0.1 * orig) continue;
            det::GroundTruthBox nb = b;
            nb.cx = static_cast<float>((bx0 + bx1) / 2.0);
            nb.cy = static_cast<float>((by0 + by1) / 2.0);
            nb.w = static_cast<float>(bx1 - bx0);
            nb.h = static_cast<float>(by1 - by0);
            out.boxes.push_back(nb);
        }
    }
    return out;
}

LabeledImage mosaic(const std::array<const LabeledImage*, 4>& src, Rng& rng) {
    for (const auto* s : src) check_same_shape(src[0]->image, s->image, "mosaic");
    const int64_t h = src[0]->image.dim(1), w = src[0]->image.dim(2);
    // Center confined to the middle half so no quadrant degenerates.
    const int64_t cx = w / 4 + rng.uniform_int(w / 2 + 1);
    const int64_t cy = h / 4 + rng.uniform_int(h / 2 + 1);
    return mosaic_at(src, cx, cy);
}

LabeledImage mosaic(const std::array<const LabeledImage*, 4>& src, uint64_t seed) {
    Rng rng(seed);
    return mosaic(src, rng);
}

LabeledImage mixup_with(const LabeledImage& a, const LabeledImage& b, double lambda) {
    check_same_shape(a.image, b.image, "mixup");
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw config_error("mixup: lambda must lie in [0, 1]");
    LabeledImage out;
    if (lambda == 1.0) {
        out.image = a.image;
        out.boxes = a.boxes;
        return out;
    }
    if (lambda == 0.0) {
        out.image = b.image;
        out.boxes = b.boxes;
        return out;
    }
    const float l = static_cast<float>(lambda);
    out.image = Tensor(a.image.shape);
    for (size_t i = 0; i < out.image.data.size(); ++i)
        out.image.data[i] = l * a.image.data[i] + (1.0f - l) * b.image.data[i];
    for (det::GroundTruthBox box : a.boxes) {
        box.weight *= l;
        if (box.weight > 0) out.boxes.push_back(box);
    }
    for (det::GroundTruthBox box : b.boxes) {
        box.weight *= 1.0f - l;
        if (box.weight > 0) out.boxes.push_back(box);
    }
    return out;
}

LabeledImage mixup(const LabeledImage& a, const LabeledImage& b, double beta, Rng& rng) {
    return mixup_with(a, b, sample_beta(beta, rng));
}

LabeledImage mixup(const LabeledImage& a, const LabeledImage& b, double beta, uint64_t seed) {
    Rng rng(seed);
    return mixup(a, b, beta, rng);
}

void write_ppm(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw dim_error("write_ppm: image must be [3, H, W]");
    const int64_t h = image.dim(1), w = image.dim(2);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("write_ppm: cannot open " + path);
    f << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                const float v = std::clamp(
                    image.data[static_cast<size_t>((c * h + y) * w + x)], 0.0f, 1.0f);
                row[static_cast<size_t>(x * 3 + c)] =
                    static_cast<unsigned char>(std::lround(v * 255.0f));
            }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw io_error("write_ppm: short write to " + path);
}

namespace {

// Reads one whitespace-delimited PPM header token, skipping '#' comments.
std::string ppm_token(std::istream& in) {
    std::string t;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!t.empty()) return t;
            continue;
        }
        t.push_back(static_cast<char>(ch));
    }
    return t;
}

}  // namespace

Tensor read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("read_ppm: cannot open " + path);
    if (ppm_token(f) != "P6") throw format_error("read_ppm: not a binary PPM: " + path);
    int64_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoll(ppm_token(f));
        h = std::stoll(ppm_token(f));
        maxval = std::stoll(ppm_token(f));
    } catch (const std::exception&) {
        throw format_error("read_ppm: malformed header: " + path);
    }
    if (w <= 0 || h <= 0) throw format_error("read_ppm: bad dimensions: " + path);
    if (maxval != 255) throw format_error("read_ppm: unsupported max value: " + path);
    std::vector<unsigned char> raw(static_cast<size_t>(w) * static_cast<size_t>(h) * 3);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (f.gcount() != static_cast<std::streamsize>(raw.size()))
        throw format_error("read_ppm: truncated pixel data: " + path);
    Tensor img({3, h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                img.data[static_cast<size_t>((c * h + y) * w + x)] =
                    static_cast<float>(raw[static_cast<size_t>((y * w + x) * 3 + c)]) / 255.0f;
    return img;
}

void write_labels(const std::string& path, const std::vector<det::GroundTruthBox>& boxes) {
    std::ofstream f(path);
    if (!f) throw io_error("write_labels: cannot open " + path);
    char line[160];
    for (const det::GroundTruthBox& b : boxes) {
        std::snprintf(line, sizeof(line), "%d %.9g %.9g %.9g %.9g\n", b.class_id,
                      static_cast<double>(b.cx), static_cast<double>(b.cy),
                      static_cast<double>(b.w), static_cast<double>(b.h));
        f << line;
    }
    if (!f) throw io_error("write_labels: short write to " + path);
}

std::vector<det::GroundTruthBox> read_labels(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error("read_labels: cannot open " + path);
    std::vector<det::GroundTruthBox> boxes;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream is(line);
        det::GroundTruthBox b;
        if (!(is >> b.class_id >> b.cx >> b.cy >> b.w >> b.h))
            throw format_error("read_labels: bad line " + std::to_string(lineno) + " in " + path);
        std::string rest;
        if (is >> rest)
            throw format_error("read_labels: trailing data on line " + std::to_string(lineno) +
                               " in " + path);
        if (b.class_id < 0 || !(b.w > 0) || !(b.h > 0))
            throw format_error("read_labels: invalid box on line " + std::to_string(lineno) +
                               " in " + path);
        boxes.push_back(b);
    }
    return boxes;
}

namespace {

std::string item_stem(const std::string& dir, size_t i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu", i);
    return dir + "/" + name;
}

}  // namespace

void save_dataset(const std::string& dir, const Dataset& ds) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw io_error("save_dataset: cannot create " + dir);
    for (size_t i = 0; i < ds.size(); ++i) {
        write_ppm(item_stem(dir, i) + ".ppm", ds[i].image);
        write_labels(item_stem(dir, i) + ".txt", ds[i].boxes);
    }
}

Dataset load_dataset(const std::string& dir) {
    if (!std::filesystem::is_directory(dir)) throw io_error("load_dataset: no directory " + dir);
    Dataset ds;
    for (size_t i = 0;; ++i) {
        const std::string stem = item_stem(dir, i);
        if (!std::filesystem::exists(stem + ".ppm")) break;
        LabeledImage item;
        item.image = read_ppm(stem + ".ppm");
        item.boxes = read_labels(stem + ".txt");
        ds.push_back(std::move(item));
    }
    return ds;
}

}  // namespace y12::data
