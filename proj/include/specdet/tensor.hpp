#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "specdet/common.hpp"

namespace specdet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

/// Dense row-major array of doubles.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
        check_shape();
    }

    Tensor(Shape shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape();
        if (data_.size() != shape_size(shape_))
            throw DataError("tensor data length " + std::to_string(data_.size()) +
                            " does not match shape " + shape_string(shape_));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }
    std::span<double> span() { return data_; }
    std::span<const double> span() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // (c, y, x) access for rank-3 tensors.
    double& at(std::size_t c, std::size_t y, std::size_t x) {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }
    double at(std::size_t c, std::size_t y, std::size_t x) const {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    void check_shape() const {
        for (auto d : shape_)
            if (d == 0) throw DataError("tensor shape has a zero dimension: " + shape_string(shape_));
    }

    Shape shape_;
    std::vector<double> data_;
};

/// Channel-major image with pixels in [0, 1].
class Image {
public:
    Image() = default;

    Image(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0)
        : t_({channels, height, width}, fill) {
        validate();
    }

    Image(std::size_t channels, std::size_t height, std::size_t width, std::vector<double> pixels)
        : t_({channels, height, width}, std::move(pixels)) {
        validate();
    }

    /// Wraps a rank-3 tensor; throws if any value is outside [0, 1].
    explicit Image(Tensor t) : t_(std::move(t)) {
        if (t_.rank() != 3) throw DataError("image tensor must be rank 3, got " + shape_string(t_.shape()));
        validate();
    }

    std::size_t channels() const { return t_.dim(0); }
    std::size_t height() const { return t_.dim(1); }
    std::size_t width() const { return t_.dim(2); }
    std::size_t plane() const { return height() * width(); }
    std::size_t size() const { return t_.size(); }

    double at(std::size_t c, std::size_t y, std::size_t x) const { return t_.at(c, y, x); }
    double operator[](std::size_t i) const { return t_[i]; }
    const std::vector<double>& pixels() const { return t_.data(); }
    std::span<const double> channel(std::size_t c) const {
        return std::span<const double>(t_.data()).subspan(c * plane(), plane());
    }

    const Tensor& tensor() const { return t_; }

    friend bool operator==(const Image&, const Image&) = default;

private:
    void validate() const {
        for (double v : t_.data())
            if (!(v >= 0.0 && v <= 1.0)) throw DataError("image pixel outside [0,1]");
    }

    Tensor t_;
};

inline double linf_distance(const Image& a, const Image& b) {
    if (a.tensor().shape() != b.tensor().shape()) throw DataError("linf_distance: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Rounds every pixel to the nearest of the 256 8-bit levels.
inline Image quantize_8bit(const Image& img) {
    std::vector<double> px(img.pixels());
    for (auto& v : px) v = std::round(v * 255.0) / 255.0;
    return Image(img.channels(), img.height(), img.width(), std::move(px));
}

/// Images with class labels in [0, class_count).
struct LabeledImages {
    std::vector<Image> images;
    std::vector<int> labels;
    int class_count = 0;

    std::size_t size() const { return images.size(); }

    void validate() const {
        if (images.size() != labels.size())
            throw DataError("labeled images: " + std::to_string(images.size()) + " images but " +
                            std::to_string(labels.size()) + " labels");
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] < 0 || labels[i] >= class_count)
                throw DataError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                                " outside [0," + std::to_string(class_count) + ")");
    }
};

}  // namespace specdet
