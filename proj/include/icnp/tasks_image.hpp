#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "icnp/rng.hpp"
#include "icnp/task.hpp"

namespace icnp {

// Labeled 28x28 grayscale images, indexed by label for matched sampling.
struct LabeledImages {
    std::size_t count = 0;
    std::size_t rows = 28, cols = 28;
    std::vector<std::uint8_t> pixels;  // count * rows * cols
    std::vector<std::uint8_t> labels;  // count, values 0..9
    std::vector<std::vector<std::size_t>> by_label;

    void index_labels();
};

// Big-endian IDX ingestion: image magic 0x00000803 with dims [count, 28, 28],
// label magic 0x00000801. Rejects wrong magic, truncation, non-28x28 images
// and mismatched counts.
LabeledImages load_idx(const std::string& images_path, const std::string& labels_path);
void write_idx(const std::string& images_path, const std::string& labels_path, const LabeledImages& data);

// Procedurally rendered digit-like glyphs (per-label stroke patterns with
// random affine jitter, blur and noise). Stand-in corpus for environments
// without a real handwritten-digit dataset; same format and label structure.
LabeledImages make_digit_corpus(std::size_t per_label, Rng& rng);

// Mean and standard deviation of intensities mapped to [0, 1].
std::pair<double, double> intensity_stats(const LabeledImages& data);

// Image-completion tasks: pixels of one image split into context and target
// (covering the image), in-context datasets sampled from other images with
// the same label.
struct ImageTaskConfig {
    std::size_t n_ic_min = 0, n_ic_max = 3;
    double y_mean = 0.0;  // training-split standardization
    double y_std = 1.0;
};

Task sample_image_task(const ImageTaskConfig& cfg, const LabeledImages& data, Rng& rng);

}  // namespace icnp
