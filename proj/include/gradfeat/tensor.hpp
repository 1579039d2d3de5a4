#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace gradfeat {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major float32 array. The universal value type for activations,
/// parameters, tangents and gradients.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::span<float> values() { return data_; }
    std::span<const float> values() const { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    /// Same data, new shape. Throws DimensionError if element counts differ.
    Tensor reshaped(Shape shape) const&;
    Tensor reshaped(Shape shape) &&;

    /// Rows [begin, end) along the leading dimension.
    Tensor slice_rows(std::size_t begin, std::size_t end) const;
    /// Gathers rows along the leading dimension.
    Tensor gather_rows(std::span<const std::size_t> rows) const;

    bool all_finite() const;

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    std::vector<float> data_;
};

// Elementwise helpers used by optimizers and tangent arithmetic.
void axpy(float alpha, const Tensor& x, Tensor& y);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scaled(const Tensor& a, float alpha);
double dot64(const Tensor& a, const Tensor& b);
double norm64(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

/// FNV-1a over the raw bytes; used for frozen-parameter checks.
std::uint64_t checksum(const Tensor& t);

} // namespace gradfeat
