#pragma once

#include "cdst/image.hpp"

namespace cdst {

struct CannyParams {
    double low = 0.1;    // on max-normalized gradient magnitude
    double high = 0.2;
    double blur_sigma = 1.0;
};

// Gaussian blur -> Sobel -> non-maximum suppression -> hysteresis
// (8-connected). Thresholds apply to gradient magnitude normalized by its
// image-wide maximum.
EdgeMap canny(const ImageBuffer& img, const CannyParams& params = {});

}  // namespace cdst
