#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace splatloc {

/// Dense row-major raster of doubles with interleaved channels.
class Image {
public:
    Image() = default;
    Image(int width, int height, int channels, double fill = 0.0);

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
    bool empty() const { return data_.empty(); }

    double& at(int row, int col, int ch) { return data_[index(row, col, ch)]; }
    double at(int row, int col, int ch) const { return data_[index(row, col, ch)]; }

    std::span<double> pixel(int row, int col) {
        return {data_.data() + index(row, col, 0), static_cast<std::size_t>(channels_)};
    }
    std::span<const double> pixel(int row, int col) const {
        return {data_.data() + index(row, col, 0), static_cast<std::size_t>(channels_)};
    }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Image& o) const {
        return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t index(int row, int col, int ch) const {
        return (static_cast<std::size_t>(row) * width_ + col) * channels_ + ch;
    }

    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

/// Throws ShapeMismatch naming `what` if the shapes differ.
void require_same_shape(const Image& a, const Image& b, const char* what);

}  // namespace splatloc
