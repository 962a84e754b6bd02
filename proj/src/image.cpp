#include "splatloc/image.hpp"

#include <string>

#include "splatloc/errors.hpp"

namespace splatloc {

Image::Image(int width, int height, int channels, double fill)
    : width_(width), height_(height), channels_(channels) {
    if (width < 0 || height < 0 || channels < 0) {
        throw InvalidInput("image dimensions must be non-negative");
    }
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeMismatch(std::string(what) + ": shape mismatch (" + std::to_string(a.width()) + "x" +
                            std::to_string(a.height()) + "x" + std::to_string(a.channels()) + " vs " +
                            std::to_string(b.width()) + "x" + std::to_string(b.height()) + "x" +
                            std::to_string(b.channels()) + ")");
    }
}

}  // namespace splatloc
