#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gradfeat/tensor.hpp"

namespace gradfeat {

enum class Split { train, test };

const char* to_string(Split s);

/// Labeled images in [0,1], shape [N,C,H,W].
struct Dataset {
    Tensor images;
    std::vector<int> labels;
    Split split = Split::train;
    std::size_t num_classes = 0;

    std::size_t size() const { return labels.size(); }
    Dataset subset(std::span<const std::size_t> indices) const;
    /// Checks N >= 1, label range and image/label count agreement.
    void validate() const;
};

/// IDX image file (magic 0x00000803) plus IDX label file (magic 0x00000801).
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, Split split = Split::train);
Tensor load_idx_images(const std::filesystem::path& path);
std::vector<int> load_idx_labels(const std::filesystem::path& path);
void write_idx_images(const std::filesystem::path& path, const Tensor& images);
void write_idx_labels(const std::filesystem::path& path, std::span<const int> labels);

/// CIFAR-10 binary batch: records of one label byte followed by 3072 pixel bytes
/// (1024 R, 1024 G, 1024 B, row-major).
Dataset load_cifar_binary(const std::filesystem::path& path, Split split = Split::train);

/// Oriented "comet" strokes: each class is a stroke direction inside a cone
/// pointing right, with a bright head, so rotating an image by a quarter turn is
/// detectable from the stroke alone. Distractor strokes have random directions.
struct SyntheticSpec {
    std::size_t classes = 6;
    std::size_t per_class = 200;
    std::size_t size = 16;
    double cone_degrees = 120.0;
    double direction_jitter = 6.0;  // degrees, std-dev
    double position_jitter = 2.0;   // pixels, uniform half-width
    double stroke_length = 9.0;
    double stroke_width = 0.8;
    std::size_t distractors = 2;
    double noise = 0.08;
};

nlohmann::json to_json(const SyntheticSpec& s);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

Dataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed, Split split = Split::train);

/// Rotates square images counter-clockwise by quarter_turns * 90 degrees.
Tensor rotate_quarter(const Tensor& images, int quarter_turns);

} // namespace gradfeat
