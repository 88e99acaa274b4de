#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ucmt {

using Shape = std::vector<std::size_t>;

std::size_t shape_volume(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
    [[nodiscard]] std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    [[nodiscard]] std::span<double> values() noexcept { return data_; }
    [[nodiscard]] std::span<const double> values() const noexcept { return data_; }
    [[nodiscard]] double* data() noexcept { return data_.data(); }
    [[nodiscard]] const double* data() const noexcept { return data_.data(); }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    // 4-D accessors for [B, C, H, W] tensors.
    double& at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) noexcept {
        return data_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }
    double at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const noexcept {
        return data_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }

    // View of item b along axis 0.
    [[nodiscard]] std::span<double> item(std::size_t b);
    [[nodiscard]] std::span<const double> item(std::size_t b) const;

    void fill(double value) noexcept;
    [[nodiscard]] bool all_finite() const noexcept;

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Integer class map with shape [B, H, W].
struct LabelMap {
    std::size_t batch = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> labels;

    LabelMap() = default;
    LabelMap(std::size_t b, std::size_t h, std::size_t w, std::uint8_t fill = 0)
        : batch(b), height(h), width(w), labels(b * h * w, fill) {}

    [[nodiscard]] std::size_t plane() const noexcept { return height * width; }
    std::uint8_t& at(std::size_t b, std::size_t y, std::size_t x) noexcept {
        return labels[(b * height + y) * width + x];
    }
    std::uint8_t at(std::size_t b, std::size_t y, std::size_t x) const noexcept {
        return labels[(b * height + y) * width + x];
    }
    [[nodiscard]] std::span<const std::uint8_t> item(std::size_t b) const {
        return std::span<const std::uint8_t>(labels).subspan(b * plane(), plane());
    }
    [[nodiscard]] std::span<std::uint8_t> item(std::size_t b) {
        return std::span<std::uint8_t>(labels).subspan(b * plane(), plane());
    }

    bool operator==(const LabelMap&) const = default;
};

// [B, H, W] labels -> [B, C, H, W] one-hot. Throws ShapeError on labels >= C.
Tensor one_hot(const LabelMap& labels, std::size_t classes);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace ucmt
