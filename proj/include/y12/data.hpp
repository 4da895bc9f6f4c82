#pragma once

#include <string>

#include "y12/detect.hpp"

namespace y12::data {

struct LabeledImage {
    Tensor image;  // [3, H, W], values in [0, 1]
    std::vector<det::GroundTruthBox> boxes;
};

using Dataset = std::vector<LabeledImage>;

/// Mid-band noise backgrounds with 1-4 solid shapes: red circles, green
/// squares, blue triangles (class 0/1/2). Labels are tight boxes around the
/// painted pixels, never thinner than 6 pixels. Fully determined by the seed.
Dataset synth_dataset(int n_images, int image_size, uint64_t seed);

/// Splits the canvas at a random interior point; each quadrant is filled by
/// the same-positioned crop of one input. Labels are clipped to their
/// quadrant; boxes keeping under 10% of their area are dropped.
LabeledImage mosaic(const std::array<const LabeledImage*, 4>& src, Rng& rng);
LabeledImage mosaic(const std::array<const LabeledImage*, 4>& src, uint64_t seed);
/// Deterministic core with an explicit split point (pixel coordinates).
LabeledImage mosaic_at(const std::array<const LabeledImage*, 4>& src, int64_t center_x,
                       int64_t center_y);

/// Convex blend of two images with lambda ~ Beta(beta, beta); the union of
/// the labels carries weights lambda and 1-lambda. Zero-weight boxes vanish.
LabeledImage mixup(const LabeledImage& a, const LabeledImage& b, double beta, Rng& rng);
LabeledImage mixup(const LabeledImage& a, const LabeledImage& b, double beta, uint64_t seed);
/// Deterministic core with an explicit blend factor in [0, 1].
LabeledImage mixup_with(const LabeledImage& a, const LabeledImage& b, double lambda);

double sample_beta(double beta, Rng& rng);

void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

void write_labels(const std::string& path, const std::vector<det::GroundTruthBox>& boxes);
std::vector<det::GroundTruthBox> read_labels(const std::string& path);

/// Numbered pairs NNNNNN.ppm / NNNNNN.txt under a directory.
void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

}  // namespace y12::data
