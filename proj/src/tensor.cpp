#include "ucmt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "ucmt/errors.hpp"

namespace ucmt {

std::size_t shape_volume(const Shape& shape) noexcept {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_volume(shape_) != data_.size()) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_string(shape_));
    }
}

std::span<double> Tensor::item(std::size_t b) {
    const std::size_t stride = data_.size() / shape_.at(0);
    return std::span<double>(data_).subspan(b * stride, stride);
}

std::span<const double> Tensor::item(std::size_t b) const {
    const std::size_t stride = data_.size() / shape_.at(0);
    return std::span<const double>(data_).subspan(b * stride, stride);
}

void Tensor::fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor one_hot(const LabelMap& labels, std::size_t classes) {
    Tensor out({labels.batch, classes, labels.height, labels.width});
    const std::size_t plane = labels.plane();
    for (std::size_t b = 0; b < labels.batch; ++b) {
        for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t c = labels.labels[b * plane + p];
            if (c >= classes) {
                throw ShapeError("label " + std::to_string(c) + " out of range for " + std::to_string(classes) +
                                 " classes");
            }
            out[(b * classes + c) * plane + p] = 1.0;
        }
    }
    return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
}

}  // namespace ucmt
