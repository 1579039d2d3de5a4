#include "gradfeat/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <sstream>

#include "gradfeat/error.hpp"

namespace gradfeat {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    for (auto d : shape_)
        if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape_));
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto d : shape_)
        if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape_));
    if (data_.size() != shape_numel(shape_))
        throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_str(shape_));
}

Tensor Tensor::reshaped(Shape shape) const& {
    Tensor copy = *this;
    return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
    if (shape_numel(shape) != data_.size())
        throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    shape_ = std::move(shape);
    return std::move(*this);
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
    if (rank() == 0 || begin >= end || end > shape_[0])
        throw DimensionError("bad row slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                             shape_str(shape_));
    const std::size_t row = numel() / shape_[0];
    Shape s = shape_;
    s[0] = end - begin;
    std::vector<float> d(data_.begin() + static_cast<std::ptrdiff_t>(begin * row),
                         data_.begin() + static_cast<std::ptrdiff_t>(end * row));
    return Tensor(std::move(s), std::move(d));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> rows) const {
    if (rank() == 0 || rows.empty()) throw DimensionError("gather_rows needs a non-empty row list");
    const std::size_t row = numel() / shape_[0];
    Shape s = shape_;
    s[0] = rows.size();
    Tensor out(std::move(s));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= shape_[0]) throw DimensionError("row index out of range");
        std::memcpy(out.data() + i * row, data_.data() + rows[i] * row, row * sizeof(float));
    }
    return out;
}

bool Tensor::all_finite() const {
    for (float v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

static void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void axpy(float alpha, const Tensor& x, Tensor& y) {
    require_same_shape(x, y, "axpy");
    float* yd = y.data();
    const float* xd = x.data();
    for (std::size_t i = 0; i < y.numel(); ++i) yd[i] += alpha * xd[i];
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
    return out;
}

Tensor scaled(const Tensor& a, float alpha) {
    Tensor out = a;
    for (auto& v : out.values()) v *= alpha;
    return out;
}

double dot64(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

double norm64(const Tensor& a) { return std::sqrt(dot64(a, a)); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

std::uint64_t checksum(const Tensor& t) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* p, std::size_t n) {
        auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (auto d : t.shape()) {
        std::uint64_t v = d;
        mix(&v, sizeof v);
    }
    mix(t.data(), t.numel() * sizeof(float));
    return h;
}

} // namespace gradfeat
