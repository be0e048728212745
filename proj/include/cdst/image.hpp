#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cdst {

enum class ColorSpace { SRGB, LinearRGB, HSV, LAB, YUV, Grey };

inline int channels_of(ColorSpace s) { return s == ColorSpace::Grey ? 1 : 3; }

const char* to_string(ColorSpace s);

// Interleaved raster. sRGB channels live in [0,1]; HSV uses H in degrees
// [0,360) with S,V in [0,1]; LAB and YUV keep their native ranges.
struct ImageBuffer {
    int width = 0;
    int height = 0;
    ColorSpace space = ColorSpace::SRGB;
    std::vector<float> data;

    ImageBuffer() = default;
    ImageBuffer(int w, int h, ColorSpace s)
        : width(w), height(h), space(s),
          data(static_cast<size_t>(w) * h * channels_of(s), 0.0f) {
        if (w <= 0 || h <= 0) throw std::invalid_argument("ImageBuffer: non-positive dimensions");
    }

    int channels() const { return channels_of(space); }
    size_t pixel_count() const { return static_cast<size_t>(width) * height; }
    bool empty() const { return data.empty(); }

    float* pixel(int x, int y) {
        return data.data() + (static_cast<size_t>(y) * width + x) * channels();
    }
    const float* pixel(int x, int y) const {
        return data.data() + (static_cast<size_t>(y) * width + x) * channels();
    }
};

// Binary edge raster, same dimensions as its source image.
struct EdgeMap {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> data;  // values in {0,1}

    EdgeMap() = default;
    EdgeMap(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * h, 0) {}

    uint8_t at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
    uint8_t& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
};

}  // namespace cdst
