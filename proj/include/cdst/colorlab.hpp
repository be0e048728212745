#pragma once

#include <array>
#include <string>
#include <vector>

#include "cdst/image.hpp"

namespace cdst {

// 180-entry LAB palette built from a 12x15 HSV grid.
struct Palette {
    std::vector<std::array<double, 3>> entries;
    std::string version;
};

// Probability vector over a Palette's entries.
struct ColorHistogram {
    std::vector<double> bins;  // length 180, nonnegative, sums to 1
    std::string palette_version;
};

// Pixel-wise color space conversion. Supported routes: sRGB<->HSV,
// sRGB->LinearRGB, sRGB->LAB (D65), sRGB<->YUV (BT.601 full range),
// sRGB->Grey. Converting to the source space is the identity.
ImageBuffer convert(const ImageBuffer& img, ColorSpace target);

// BT.601 luma of an sRGB image: Y = 0.299 R + 0.587 G + 0.114 B.
ImageBuffer greyscale(const ImageBuffer& img);

// Known versions: "rayleigh-12x15-v1" (alias "default").
Palette build_palette(const std::string& version);

// Hard nearest-neighbor assignment in LAB, lowest index wins ties,
// normalized by pixel count.
ColorHistogram extract_histogram(const ImageBuffer& img, const Palette& palette);

// L2 distance between histograms sharing a palette version.
double color_distance(const ColorHistogram& a, const ColorHistogram& b);

// Scalar conversion helpers (double precision; also used by extract_histogram
// so bin assignment does not depend on float storage rounding).
std::array<double, 3> srgb_to_lab(double r, double g, double b);
std::array<double, 3> hsv_to_srgb(double h, double s, double v);

}  // namespace cdst
