#pragma once

#include <array>

#include "cdst/image.hpp"

namespace cdst {

// Population mean / standard deviation per channel.
struct ChannelStats {
    std::array<double, 3> mean{};
    std::array<double, 3> std{};
};

ChannelStats channel_stats(const ImageBuffer& yuv);

// YUV mean/variance matching of I against reference R, blended by alpha and
// clamped to valid sRGB after back-conversion. Channels of I with near-zero
// deviation (< 1e-8) are shift-matched only.
ImageBuffer global_color_calibration(const ImageBuffer& I, const ImageBuffer& R, double alpha);

// The matching step alone: blended YUV result before back-conversion and
// clamping. global_color_calibration is convert(this) + clamp.
ImageBuffer global_color_calibration_yuv(const ImageBuffer& I, const ImageBuffer& R, double alpha);

}  // namespace cdst
