#include "cdst/edges.hpp"

#include <cmath>
#include <vector>

#include "cdst/colorlab.hpp"

namespace cdst {

namespace {

constexpr double kTan22 = 0.41421356237309503;  // tan(22.5 deg)

std::vector<double> gaussian_blur(const std::vector<double>& in, int w, int h, double sigma) {
    int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        sum += kernel[i + radius];
    }
    for (double& k : kernel) k /= sum;

    auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
    std::vector<double> tmp(in.size()), out(in.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[i + radius] * in[y * w + clampi(x + i, 0, w - 1)];
            tmp[y * w + x] = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[i + radius] * tmp[clampi(y + i, 0, h - 1) * w + x];
            out[y * w + x] = acc;
        }
    return out;
}

}  // namespace

EdgeMap canny(const ImageBuffer& img, const CannyParams& params) {
    if (img.empty()) throw std::invalid_argument("canny: empty image");
    if (!(params.low > 0.0) || !(params.low < params.high))
        throw std::invalid_argument("canny: requires 0 < low < high");
    if (!(params.blur_sigma > 0.0)) throw std::invalid_argument("canny: blur_sigma must be > 0");

    ImageBuffer grey = img.space == ColorSpace::Grey ? img : greyscale(img);
    int w = grey.width, h = grey.height;
    std::vector<double> lum(grey.data.begin(), grey.data.end());
    std::vector<double> blurred = gaussian_blur(lum, w, h, params.blur_sigma);

    auto at = [&](int x, int y) {
        x = x < 0 ? 0 : (x >= w ? w - 1 : x);
        y = y < 0 ? 0 : (y >= h ? h - 1 : y);
        return blurred[y * w + x];
    };

    std::vector<double> gx(lum.size()), gy(lum.size()), mag(lum.size());
    double max_mag = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double dx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)) -
                        (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            double dy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)) -
                        (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            gx[y * w + x] = dx;
            gy[y * w + x] = dy;
            mag[y * w + x] = std::sqrt(dx * dx + dy * dy);
            max_mag = std::max(max_mag, mag[y * w + x]);
        }

    EdgeMap result(w, h);
    if (max_mag <= 0.0) return result;
    for (double& m : mag) m /= max_mag;

    // Non-maximum suppression along the quantized gradient direction.
    // Ties keep the pixel (>= both sides) so the pass commutes with rot90.
    std::vector<uint8_t> cls(lum.size(), 0);  // 0 none, 1 weak, 2 strong
    auto magc = [&](int x, int y) {
        if (x < 0 || x >= w || y < 0 || y >= h) return 0.0;
        return mag[y * w + x];
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double m = mag[y * w + x];
            if (m < params.low) continue;
            double ax = std::fabs(gx[y * w + x]);
            double ay = std::fabs(gy[y * w + x]);
            int dx, dy;
            if (ay <= kTan22 * ax) {
                dx = 1; dy = 0;
            } else if (ax <= kTan22 * ay) {
                dx = 0; dy = 1;
            } else if ((gx[y * w + x] > 0) == (gy[y * w + x] > 0)) {
                dx = 1; dy = 1;
            } else {
                dx = 1; dy = -1;
            }
            if (m >= magc(x + dx, y + dy) && m >= magc(x - dx, y - dy))
                cls[y * w + x] = m >= params.high ? 2 : 1;
        }

    // Hysteresis: flood from strong pixels through 8-connected weak ones.
    std::vector<size_t> stack;
    for (size_t i = 0; i < cls.size(); ++i)
        if (cls[i] == 2) {
            result.data[i] = 1;
            stack.push_back(i);
        }
    while (!stack.empty()) {
        size_t i = stack.back();
        stack.pop_back();
        int x = static_cast<int>(i % w), y = static_cast<int>(i / w);
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                int nx = x + dx, ny = y + dy;
                if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                size_t j = static_cast<size_t>(ny) * w + nx;
                if (cls[j] == 1 && !result.data[j]) {
                    result.data[j] = 1;
                    stack.push_back(j);
                }
            }
    }
    return result;
}

}  // namespace cdst
