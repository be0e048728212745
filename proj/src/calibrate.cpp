#include "cdst/calibrate.hpp"

#include <algorithm>
#include <cmath>

#include "cdst/colorlab.hpp"

namespace cdst {

ChannelStats channel_stats(const ImageBuffer& yuv) {
    if (yuv.empty()) throw std::invalid_argument("channel_stats: empty image");
    if (yuv.space != ColorSpace::YUV)
        throw std::invalid_argument("channel_stats: expects a YUV image");
    ChannelStats st;
    size_t n = yuv.pixel_count();
    for (size_t i = 0; i < n; ++i) {
        const float* p = yuv.data.data() + 3 * i;
        for (int c = 0; c < 3; ++c) st.mean[c] += p[c];
    }
    for (int c = 0; c < 3; ++c) st.mean[c] /= static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {
        const float* p = yuv.data.data() + 3 * i;
        for (int c = 0; c < 3; ++c) {
            double d = p[c] - st.mean[c];
            st.std[c] += d * d;
        }
    }
    for (int c = 0; c < 3; ++c) st.std[c] = std::sqrt(st.std[c] / static_cast<double>(n));
    return st;
}

ImageBuffer global_color_calibration_yuv(const ImageBuffer& I, const ImageBuffer& R, double alpha) {
    if (I.empty() || R.empty())
        throw std::invalid_argument("global_color_calibration: empty image");
    if (I.space != ColorSpace::SRGB || R.space != ColorSpace::SRGB)
        throw std::invalid_argument("global_color_calibration: expects sRGB images");
    if (alpha < 0.0 || alpha > 1.0)
        throw std::invalid_argument("global_color_calibration: alpha outside [0,1]");

    ImageBuffer iy = convert(I, ColorSpace::YUV);
    ChannelStats si = channel_stats(iy);
    ChannelStats sr = channel_stats(convert(R, ColorSpace::YUV));

    double gain[3], shift[3];
    for (int c = 0; c < 3; ++c) {
        gain[c] = si.std[c] < 1e-8 ? 1.0 : sr.std[c] / si.std[c];
        shift[c] = sr.mean[c] - gain[c] * si.mean[c];
    }

    size_t n = iy.pixel_count();
    for (size_t i = 0; i < n; ++i) {
        float* p = iy.data.data() + 3 * i;
        for (int c = 0; c < 3; ++c) {
            double matched = gain[c] * p[c] + shift[c];
            p[c] = static_cast<float>(alpha * matched + (1.0 - alpha) * p[c]);
        }
    }
    return iy;
}

ImageBuffer global_color_calibration(const ImageBuffer& I, const ImageBuffer& R, double alpha) {
    if (alpha == 0.0) {
        if (I.empty()) throw std::invalid_argument("global_color_calibration: empty image");
        return I;
    }
    ImageBuffer out = convert(global_color_calibration_yuv(I, R, alpha), ColorSpace::SRGB);
    for (float& v : out.data) v = std::min(1.0f, std::max(0.0f, v));
    return out;
}

}  // namespace cdst
