#include "gradfeat/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

#include "gradfeat/error.hpp"

namespace gradfeat {

const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset d;
    d.images = images.gather_rows(indices);
    for (auto i : indices) d.labels.push_back(labels.at(i));
    d.split = split;
    d.num_classes = num_classes;
    return d;
}

void Dataset::validate() const {
    if (labels.empty()) throw InputError("dataset is empty");
    if (images.rank() != 4 || images.dim(0) != labels.size())
        throw DimensionError("dataset images " + shape_str(images.shape()) + " do not match " +
                             std::to_string(labels.size()) + " labels");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
            throw InputError("label " + std::to_string(y) + " outside [0," + std::to_string(num_classes) + ")");
}

namespace {

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), {}};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& file, const char* what) {
    if (off + 4 > b.size())
        throw FormatError("'" + file + "' truncated at offset " + std::to_string(off) + " reading " + what);
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
    out.write(b, 4);
}

} // namespace

Tensor load_idx_images(const std::filesystem::path& path) {
    const auto b = read_all(path);
    const std::string file = path.string();
    const auto magic = be32(b, 0, file, "magic");
    if (magic != 0x00000803u) throw FormatError("'" + file + "' bad IDX image magic at offset 0");
    const std::size_t n = be32(b, 4, file, "image count");
    const std::size_t rows = be32(b, 8, file, "row count");
    const std::size_t cols = be32(b, 12, file, "column count");
    if (n == 0 || rows == 0 || cols == 0) throw FormatError("'" + file + "' zero dimension in header at offset 4");
    const std::size_t need = 16 + n * rows * cols;
    if (b.size() < need)
        throw FormatError("'" + file + "' truncated at offset " + std::to_string(b.size()) + ": expected " +
                          std::to_string(need) + " bytes");
    Tensor t({n, 1, rows, cols});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(b[16 + i]) / 255.0f;
    return t;
}

std::vector<int> load_idx_labels(const std::filesystem::path& path) {
    const auto b = read_all(path);
    const std::string file = path.string();
    const auto magic = be32(b, 0, file, "magic");
    if (magic != 0x00000801u) throw FormatError("'" + file + "' bad IDX label magic at offset 0");
    const std::size_t n = be32(b, 4, file, "label count");
    if (n == 0) throw FormatError("'" + file + "' zero label count at offset 4");
    if (b.size() < 8 + n)
        throw FormatError("'" + file + "' truncated at offset " + std::to_string(b.size()) + ": expected " +
                          std::to_string(8 + n) + " bytes");
    return {b.begin() + 8, b.begin() + 8 + static_cast<std::ptrdiff_t>(n)};
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, Split split) {
    Dataset d;
    d.images = load_idx_images(images);
    d.labels = load_idx_labels(labels);
    if (d.labels.size() != d.images.dim(0))
        throw FormatError("IDX image count " + std::to_string(d.images.dim(0)) + " differs from label count " +
                          std::to_string(d.labels.size()));
    d.split = split;
    d.num_classes = static_cast<std::size_t>(*std::max_element(d.labels.begin(), d.labels.end())) + 1;
    d.validate();
    return d;
}

void write_idx_images(const std::filesystem::path& path, const Tensor& images) {
    if (images.rank() != 4 || images.dim(1) != 1) throw DimensionError("IDX images must be [N,1,H,W]");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    put_be32(out, 0x00000803u);
    put_be32(out, static_cast<std::uint32_t>(images.dim(0)));
    put_be32(out, static_cast<std::uint32_t>(images.dim(2)));
    put_be32(out, static_cast<std::uint32_t>(images.dim(3)));
    for (float v : images.values()) {
        const long q = std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f);
        out.put(static_cast<char>(q));
    }
}

void write_idx_labels(const std::filesystem::path& path, std::span<const int> labels) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    put_be32(out, 0x00000801u);
    put_be32(out, static_cast<std::uint32_t>(labels.size()));
    for (int y : labels) out.put(static_cast<char>(y));
}

Dataset load_cifar_binary(const std::filesystem::path& path, Split split) {
    constexpr std::size_t kRecord = 1 + 3072;
    const auto b = read_all(path);
    if (b.empty()) throw FormatError("'" + path.string() + "' is empty (offset 0)");
    if (b.size() % kRecord != 0)
        throw FormatError("'" + path.string() + "' length " + std::to_string(b.size()) +
                          " is not a multiple of 3073; partial record at offset " +
                          std::to_string(b.size() / kRecord * kRecord));
    const std::size_t n = b.size() / kRecord;
    Dataset d;
    d.images = Tensor({n, 3, 32, 32});
    d.labels.resize(n);
    int max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned char* rec = b.data() + i * kRecord;
        d.labels[i] = rec[0];
        max_label = std::max(max_label, d.labels[i]);
        for (std::size_t j = 0; j < 3072; ++j) d.images[i * 3072 + j] = static_cast<float>(rec[1 + j]) / 255.0f;
    }
    d.split = split;
    d.num_classes = std::max<std::size_t>(10, static_cast<std::size_t>(max_label) + 1);
    d.validate();
    return d;
}

nlohmann::json to_json(const SyntheticSpec& s) {
    return {{"classes", s.classes},
            {"per_class", s.per_class},
            {"size", s.size},
            {"cone_degrees", s.cone_degrees},
            {"direction_jitter", s.direction_jitter},
            {"position_jitter", s.position_jitter},
            {"stroke_length", s.stroke_length},
            {"stroke_width", s.stroke_width},
            {"distractors", s.distractors},
            {"noise", s.noise}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    try {
        s.classes = j.value("classes", s.classes);
        s.per_class = j.value("per_class", s.per_class);
        s.size = j.value("size", s.size);
        s.cone_degrees = j.value("cone_degrees", s.cone_degrees);
        s.direction_jitter = j.value("direction_jitter", s.direction_jitter);
        s.position_jitter = j.value("position_jitter", s.position_jitter);
        s.stroke_length = j.value("stroke_length", s.stroke_length);
        s.stroke_width = j.value("stroke_width", s.stroke_width);
        s.distractors = j.value("distractors", s.distractors);
        s.noise = j.value("noise", s.noise);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad synthetic dataset spec: ") + e.what());
    }
    if (s.classes < 2 || s.per_class == 0 || s.size < 4) throw ConfigError("synthetic spec needs >= 2 classes, >= 1 sample, size >= 4");
    return s;
}

namespace {

// Renders a stroke from `tail` along `angle` (radians, counter-clockwise from +x with
// y pointing down) whose intensity ramps from `dim` at the tail to `bright` at the head.
void draw_stroke(float* img, std::size_t size, double cx, double cy, double angle, double length, double width,
                 double dim, double bright) {
    const double dx = std::cos(angle), dy = -std::sin(angle);
    const double tx = cx - 0.5 * length * dx, ty = cy - 0.5 * length * dy;
    const double inv2w2 = 1.0 / (2.0 * width * width);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const double px = static_cast<double>(x) - tx, py = static_cast<double>(y) - ty;
            const double t = std::clamp((px * dx + py * dy) / length, 0.0, 1.0);
            const double ex = px - t * length * dx, ey = py - t * length * dy;
            const double v = (dim + (bright - dim) * t) * std::exp(-(ex * ex + ey * ey) * inv2w2);
            float& p = img[y * size + x];
            p = std::max(p, static_cast<float>(v));
        }
}

} // namespace

Dataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed, Split split) {
    if (spec.classes < 2 || spec.per_class == 0 || spec.size < 4)
        throw InputError("synthetic spec needs >= 2 classes, >= 1 sample per class, size >= 4");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t n = spec.classes * spec.per_class, s = spec.size;
    constexpr double deg = std::numbers::pi / 180.0;
    const double centre = 0.5 * static_cast<double>(s - 1);

    Dataset d;
    d.images = Tensor({n, 1, s, s});
    d.labels.resize(n);
    d.split = split;
    d.num_classes = spec.classes;
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % spec.classes);
        d.labels[i] = label;
        float* img = d.images.data() + i * s * s;
        for (std::size_t k = 0; k < spec.distractors; ++k) {
            const double ax = unit(rng) * static_cast<double>(s - 1), ay = unit(rng) * static_cast<double>(s - 1);
            const double angle = unit(rng) * 2.0 * std::numbers::pi;
            draw_stroke(img, s, ax, ay, angle, 0.5 * spec.stroke_length, spec.stroke_width, 0.25, 0.5);
        }
        const double class_dir =
            -0.5 * spec.cone_degrees + (static_cast<double>(label) + 0.5) * spec.cone_degrees / static_cast<double>(spec.classes);
        const double angle = (class_dir + spec.direction_jitter * normal(rng)) * deg;
        const double cx = centre + (2.0 * unit(rng) - 1.0) * spec.position_jitter;
        const double cy = centre + (2.0 * unit(rng) - 1.0) * spec.position_jitter;
        draw_stroke(img, s, cx, cy, angle, spec.stroke_length, spec.stroke_width, 0.3, 1.0);
        for (std::size_t p = 0; p < s * s; ++p)
            img[p] = std::clamp(static_cast<float>(img[p] + spec.noise * normal(rng)), 0.0f, 1.0f);
    }
    return d;
}

Tensor rotate_quarter(const Tensor& images, int quarter_turns) {
    if (images.rank() != 4 || images.dim(2) != images.dim(3))
        throw DimensionError("rotation needs square [N,C,H,W] images, got " + shape_str(images.shape()));
    const int q = ((quarter_turns % 4) + 4) % 4;
    if (q == 0) return images;
    const std::size_t planes = images.dim(0) * images.dim(1), s = images.dim(2);
    Tensor out(images.shape());
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const float* in = images.data() + pl * s * s;
        float* o = out.data() + pl * s * s;
        for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x) {
                std::size_t sy = y, sx = x;
                switch (q) {
                case 1: sy = x; sx = s - 1 - y; break;         // counter-clockwise quarter turn
                case 2: sy = s - 1 - y; sx = s - 1 - x; break;
                case 3: sy = s - 1 - x; sx = y; break;
                }
                o[y * s + x] = in[sy * s + sx];
            }
    }
    return out;
}

} // namespace gradfeat
