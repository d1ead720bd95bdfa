#include "icnp/tasks_image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace icnp {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(std::istream& f, const std::string& path) {
    unsigned char b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4)) throw DataError("idx: truncated header in '" + path + "'");
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

void write_be32(std::ostream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    f.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

void LabeledImages::index_labels() {
    by_label.assign(10, {});
    for (std::size_t i = 0; i < count; ++i) {
        if (labels[i] > 9) throw DataError("idx: label out of range 0..9");
        by_label[labels[i]].push_back(i);
    }
}

LabeledImages load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream fi(images_path, std::ios::binary);
    if (!fi) throw DataError("idx: cannot open '" + images_path + "'");
    if (const auto magic = read_be32(fi, images_path); magic != kImageMagic)
        throw DataError("idx: bad image magic in '" + images_path + "'");
    const std::uint32_t count = read_be32(fi, images_path);
    const std::uint32_t rows = read_be32(fi, images_path);
    const std::uint32_t cols = read_be32(fi, images_path);
    if (rows != 28 || cols != 28)
        throw DataError("idx: expected 28x28 images, got " + std::to_string(rows) + "x" +
                        std::to_string(cols));

    LabeledImages data;
    data.count = count;
    data.rows = rows;
    data.cols = cols;
    data.pixels.resize(std::size_t(count) * rows * cols);
    if (!fi.read(reinterpret_cast<char*>(data.pixels.data()),
                 static_cast<std::streamsize>(data.pixels.size())))
        throw DataError("idx: truncated image payload in '" + images_path + "'");

    std::ifstream fl(labels_path, std::ios::binary);
    if (!fl) throw DataError("idx: cannot open '" + labels_path + "'");
    if (const auto magic = read_be32(fl, labels_path); magic != kLabelMagic)
        throw DataError("idx: bad label magic in '" + labels_path + "'");
    const std::uint32_t label_count = read_be32(fl, labels_path);
    if (label_count != count)
        throw DataError("idx: image count " + std::to_string(count) + " != label count " +
                        std::to_string(label_count));
    data.labels.resize(count);
    if (!fl.read(reinterpret_cast<char*>(data.labels.data()), static_cast<std::streamsize>(count)))
        throw DataError("idx: truncated label payload in '" + labels_path + "'");

    data.index_labels();
    return data;
}

void write_idx(const std::string& images_path, const std::string& labels_path, const LabeledImages& data) {
    std::ofstream fi(images_path, std::ios::binary);
    if (!fi) throw DataError("idx: cannot open '" + images_path + "' for writing");
    write_be32(fi, kImageMagic);
    write_be32(fi, static_cast<std::uint32_t>(data.count));
    write_be32(fi, static_cast<std::uint32_t>(data.rows));
    write_be32(fi, static_cast<std::uint32_t>(data.cols));
    fi.write(reinterpret_cast<const char*>(data.pixels.data()),
             static_cast<std::streamsize>(data.pixels.size()));

    std::ofstream fl(labels_path, std::ios::binary);
    if (!fl) throw DataError("idx: cannot open '" + labels_path + "' for writing");
    write_be32(fl, kLabelMagic);
    write_be32(fl, static_cast<std::uint32_t>(data.count));
    fl.write(reinterpret_cast<const char*>(data.labels.data()), static_cast<std::streamsize>(data.count));
    if (!fi || !fl) throw DataError("idx: write failed");
}

namespace {

struct Seg {
    double x0, y0, x1, y1;
};

// Seven-segment-style strokes per digit in unit coordinates, plus diagonals
// where they help the shape.
const std::vector<Seg>& digit_segments(int digit) {
    static const double L = 0.22, R = 0.78, T = 0.12, M = 0.5, B = 0.88;
    static const std::vector<std::vector<Seg>> table = {
        /*0*/ {{L, T, R, T}, {L, T, L, B}, {R, T, R, B}, {L, B, R, B}},
        /*1*/ {{0.5, T, 0.5, B}, {0.35, T + 0.12, 0.5, T}},
        /*2*/ {{L, T, R, T}, {R, T, R, M}, {R, M, L, B}, {L, B, R, B}},
        /*3*/ {{L, T, R, T}, {R, T, R, B}, {L, M, R, M}, {L, B, R, B}},
        /*4*/ {{L, T, L, M}, {L, M, R, M}, {R, T, R, B}},
        /*5*/ {{R, T, L, T}, {L, T, L, M}, {L, M, R, M}, {R, M, R, B}, {R, B, L, B}},
        /*6*/ {{R, T, L, T}, {L, T, L, B}, {L, B, R, B}, {R, B, R, M}, {R, M, L, M}},
        /*7*/ {{L, T, R, T}, {R, T, 0.45, B}},
        /*8*/ {{L, T, R, T}, {L, T, L, B}, {R, T, R, B}, {L, M, R, M}, {L, B, R, B}},
        /*9*/ {{L, M, L, T}, {L, T, R, T}, {R, T, R, B}, {L, M, R, M}, {R, B, L, B}},
    };
    return table[digit];
}

double point_segment_dist(double px, double py, const Seg& s) {
    const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double cx = s.x0 + t * dx, cy = s.y0 + t * dy;
    return std::sqrt((px - cx) * (px - cx) + (py - cy) * (py - cy));
}

}  // namespace

LabeledImages make_digit_corpus(std::size_t per_label, Rng& rng) {
    LabeledImages data;
    data.count = per_label * 10;
    data.pixels.resize(data.count * 28 * 28);
    data.labels.resize(data.count);

    std::size_t idx = 0;
    for (int digit = 0; digit < 10; ++digit) {
        for (std::size_t rep = 0; rep < per_label; ++rep, ++idx) {
            data.labels[idx] = static_cast<std::uint8_t>(digit);
            const double scale = rng.uniform(0.82, 1.12);
            const double rot = rng.uniform(-0.14, 0.14);
            const double tx = rng.uniform(-0.06, 0.06);
            const double ty = rng.uniform(-0.06, 0.06);
            const double width = rng.uniform(0.055, 0.085);
            const double bright = rng.uniform(0.75, 1.0);
            const double c = std::cos(rot), s = std::sin(rot);

            const auto& segs = digit_segments(digit);
            for (std::size_t r = 0; r < 28; ++r) {
                for (std::size_t col = 0; col < 28; ++col) {
                    // Map pixel center back into glyph coordinates.
                    double gx = (static_cast<double>(col) + 0.5) / 28.0;
                    double gy = (static_cast<double>(r) + 0.5) / 28.0;
                    gx = (gx - 0.5 - tx) / scale;
                    gy = (gy - 0.5 - ty) / scale;
                    const double ux = c * gx + s * gy + 0.5;
                    const double uy = -s * gx + c * gy + 0.5;

                    double intensity = 0.0;
                    for (const auto& seg : segs) {
                        const double d = point_segment_dist(ux, uy, seg);
                        intensity = std::max(intensity, std::clamp(1.5 * (width - d) / width, 0.0, 1.0));
                    }
                    intensity = std::clamp(intensity * bright + 0.03 * rng.normal(), 0.0, 1.0);
                    data.pixels[idx * 784 + r * 28 + col] = static_cast<std::uint8_t>(intensity * 255.0);
                }
            }
        }
    }
    data.index_labels();
    return data;
}

std::pair<double, double> intensity_stats(const LabeledImages& data) {
    double s = 0.0, s2 = 0.0;
    for (std::uint8_t p : data.pixels) {
        const double v = static_cast<double>(p) / 255.0;
        s += v;
        s2 += v * v;
    }
    const double n = static_cast<double>(data.pixels.size());
    const double mean = s / n;
    const double var = std::max(s2 / n - mean * mean, 1e-12);
    return {mean, std::sqrt(var)};
}

namespace {

// Sample `k` distinct indices from {0..n-1} (partial Fisher-Yates).
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(n - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

}  // namespace

Task sample_image_task(const ImageTaskConfig& cfg, const LabeledImages& data, Rng& rng) {
    const std::size_t n_pixels = data.rows * data.cols;  // 784
    const auto label = static_cast<std::size_t>(rng.uniform_int(10));
    const auto n_ic = static_cast<std::size_t>(rng.uniform_range(static_cast<std::int64_t>(cfg.n_ic_min),
                                                                 static_cast<std::int64_t>(cfg.n_ic_max)));
    const auto& candidates = data.by_label.at(label);
    if (candidates.size() < n_ic + 1)
        throw DataError("image task: label " + std::to_string(label) + " has " +
                        std::to_string(candidates.size()) + " images, need " + std::to_string(n_ic + 1));

    const auto picks = sample_without_replacement(candidates.size(), n_ic + 1, rng);

    auto pixel_xy = [&](std::size_t p, std::vector<double>& xs) {
        const double row = static_cast<double>(p / data.cols);
        const double col = static_cast<double>(p % data.cols);
        xs.push_back(2.0 * row / static_cast<double>(data.rows - 1) - 1.0);
        xs.push_back(2.0 * col / static_cast<double>(data.cols - 1) - 1.0);
    };
    auto pixel_y = [&](std::size_t image, std::size_t p) {
        const double v = static_cast<double>(data.pixels[image * n_pixels + p]) / 255.0;
        return (v - cfg.y_mean) / cfg.y_std;
    };

    Task task;
    task.d_x = 2;
    task.d_y = 1;

    const std::size_t ctx_image = candidates[picks[0]];
    const auto n_c = static_cast<std::size_t>(rng.uniform_range(
        static_cast<std::int64_t>(n_pixels / 100), static_cast<std::int64_t>(n_pixels / 5)));
    std::vector<std::size_t> ctx_pix = sample_without_replacement(n_pixels, n_c, rng);
    std::vector<bool> in_ctx(n_pixels, false);
    for (std::size_t p : ctx_pix) in_ctx[p] = true;

    task.context.d_x = 2;
    task.context.n = n_c;
    for (std::size_t p : ctx_pix) {
        pixel_xy(p, task.context.x);
        task.context.y.push_back(pixel_y(ctx_image, p));
    }
    task.n_t = n_pixels - n_c;
    for (std::size_t p = 0; p < n_pixels; ++p) {
        if (in_ctx[p]) continue;
        pixel_xy(p, task.target_x);
        task.target_y.push_back(pixel_y(ctx_image, p));
    }

    for (std::size_t j = 0; j < n_ic; ++j) {
        const std::size_t image = candidates[picks[j + 1]];
        Dataset d;
        d.d_x = 2;
        d.n = static_cast<std::size_t>(rng.uniform_range(static_cast<std::int64_t>(n_pixels / 100),
                                                         static_cast<std::int64_t>(n_pixels / 2)));
        for (std::size_t p : sample_without_replacement(n_pixels, d.n, rng)) {
            pixel_xy(p, d.x);
            d.y.push_back(pixel_y(image, p));
        }
        task.in_context.push_back(std::move(d));
    }

    validate_task(task);
    return task;
}

}  // namespace icnp
