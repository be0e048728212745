#include "cdst/colorlab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cdst {

const char* to_string(ColorSpace s) {
    switch (s) {
        case ColorSpace::SRGB: return "srgb";
        case ColorSpace::LinearRGB: return "linear-rgb";
        case ColorSpace::HSV: return "hsv";
        case ColorSpace::LAB: return "lab";
        case ColorSpace::YUV: return "yuv";
        case ColorSpace::Grey: return "grey";
    }
    return "?";
}

namespace {

double srgb_decode(double c) {
    return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

// sRGB -> XYZ (D65), standard primaries.
constexpr double kM[3][3] = {
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
};
// White point taken as the matrix row sums so that (1,1,1) maps to L=100, a=b=0.
constexpr double kWhite[3] = {
    kM[0][0] + kM[0][1] + kM[0][2],
    kM[1][0] + kM[1][1] + kM[1][2],
    kM[2][0] + kM[2][1] + kM[2][2],
};

double lab_f(double t) {
    constexpr double d = 6.0 / 29.0;
    return t > d * d * d ? std::cbrt(t) : t / (3.0 * d * d) + 4.0 / 29.0;
}

void srgb_to_hsv(double r, double g, double b, double* out) {
    double mx = std::max({r, g, b});
    double mn = std::min({r, g, b});
    double c = mx - mn;
    double h = 0.0;
    if (c > 0.0) {
        if (mx == r)
            h = std::fmod((g - b) / c, 6.0);
        else if (mx == g)
            h = (b - r) / c + 2.0;
        else
            h = (r - g) / c + 4.0;
        h *= 60.0;
        if (h < 0.0) h += 360.0;
    }
    out[0] = h;
    out[1] = mx > 0.0 ? c / mx : 0.0;
    out[2] = mx;
}

// BT.601 "analog" YUV; grey inputs give U = V = 0 exactly.
void srgb_to_yuv(double r, double g, double b, double* out) {
    double y = 0.299 * r + 0.587 * g + 0.114 * b;
    out[0] = y;
    out[1] = 0.492 * (b - y);
    out[2] = 0.877 * (r - y);
}

void yuv_to_srgb(double y, double u, double v, double* out) {
    double r = y + v / 0.877;
    double b = y + u / 0.492;
    double g = (y - 0.299 * r - 0.114 * b) / 0.587;
    out[0] = r;
    out[1] = g;
    out[2] = b;
}

}  // namespace

std::array<double, 3> srgb_to_lab(double r, double g, double b) {
    double lin[3] = {srgb_decode(r), srgb_decode(g), srgb_decode(b)};
    double xyz[3];
    for (int i = 0; i < 3; ++i)
        xyz[i] = kM[i][0] * lin[0] + kM[i][1] * lin[1] + kM[i][2] * lin[2];
    double fx = lab_f(xyz[0] / kWhite[0]);
    double fy = lab_f(xyz[1] / kWhite[1]);
    double fz = lab_f(xyz[2] / kWhite[2]);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

std::array<double, 3> hsv_to_srgb(double h, double s, double v) {
    h = std::fmod(h, 360.0);
    if (h < 0.0) h += 360.0;
    double c = v * s;
    double x = c * (1.0 - std::fabs(std::fmod(h / 60.0, 2.0) - 1.0));
    double m = v - c;
    double r = 0, g = 0, b = 0;
    if (h < 60)      { r = c; g = x; }
    else if (h < 120){ r = x; g = c; }
    else if (h < 180){ g = c; b = x; }
    else if (h < 240){ g = x; b = c; }
    else if (h < 300){ r = x; b = c; }
    else             { r = c; b = x; }
    return {r + m, g + m, b + m};
}

ImageBuffer convert(const ImageBuffer& img, ColorSpace target) {
    if (img.empty()) throw std::invalid_argument("convert: empty image");
    if (img.space == target) return img;

    auto unsupported = [&]() -> ImageBuffer {
        throw std::invalid_argument(std::string("convert: unsupported conversion ") +
                                    to_string(img.space) + " -> " + to_string(target));
    };

    if (target == ColorSpace::Grey) {
        if (img.space != ColorSpace::SRGB) return unsupported();
        return greyscale(img);
    }
    if (img.channels() != 3) return unsupported();

    ImageBuffer out(img.width, img.height, target);
    size_t n = img.pixel_count();
    const float* src = img.data.data();
    float* dst = out.data.data();

    for (size_t i = 0; i < n; ++i, src += 3, dst += 3) {
        double a = src[0], b = src[1], c = src[2];
        double o[3];
        if (img.space == ColorSpace::SRGB) {
            switch (target) {
                case ColorSpace::LinearRGB:
                    o[0] = srgb_decode(a); o[1] = srgb_decode(b); o[2] = srgb_decode(c);
                    break;
                case ColorSpace::HSV:
                    srgb_to_hsv(a, b, c, o);
                    break;
                case ColorSpace::LAB: {
                    auto lab = srgb_to_lab(a, b, c);
                    o[0] = lab[0]; o[1] = lab[1]; o[2] = lab[2];
                    break;
                }
                case ColorSpace::YUV:
                    srgb_to_yuv(a, b, c, o);
                    break;
                default:
                    return unsupported();
            }
        } else if (img.space == ColorSpace::HSV && target == ColorSpace::SRGB) {
            auto rgb = hsv_to_srgb(a, b, c);
            o[0] = rgb[0]; o[1] = rgb[1]; o[2] = rgb[2];
        } else if (img.space == ColorSpace::YUV && target == ColorSpace::SRGB) {
            yuv_to_srgb(a, b, c, o);
        } else {
            return unsupported();
        }
        dst[0] = static_cast<float>(o[0]);
        dst[1] = static_cast<float>(o[1]);
        dst[2] = static_cast<float>(o[2]);
    }
    return out;
}

ImageBuffer greyscale(const ImageBuffer& img) {
    if (img.empty()) throw std::invalid_argument("greyscale: empty image");
    if (img.space == ColorSpace::Grey) return img;
    if (img.space != ColorSpace::SRGB)
        throw std::invalid_argument("greyscale: expects an sRGB image");
    ImageBuffer out(img.width, img.height, ColorSpace::Grey);
    size_t n = img.pixel_count();
    for (size_t i = 0; i < n; ++i) {
        const float* p = img.data.data() + 3 * i;
        out.data[i] = static_cast<float>(0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]);
    }
    return out;
}

Palette build_palette(const std::string& version) {
    if (version != "default" && version != "rayleigh-12x15-v1")
        throw std::invalid_argument("build_palette: unknown version '" + version + "'");
    Palette p;
    p.version = "rayleigh-12x15-v1";
    const double sats[5] = {0.2, 0.4, 0.6, 0.8, 1.0};
    const double vals[3] = {1.0 / 3.0, 2.0 / 3.0, 1.0};
    for (int hi = 0; hi < 12; ++hi) {
        double h = 360.0 * hi / 12.0;
        for (double s : sats)
            for (double v : vals) {
                auto rgb = hsv_to_srgb(h, s, v);
                p.entries.push_back(srgb_to_lab(rgb[0], rgb[1], rgb[2]));
            }
    }
    return p;
}

ColorHistogram extract_histogram(const ImageBuffer& img, const Palette& palette) {
    if (img.empty()) throw std::invalid_argument("extract_histogram: empty image");
    if (img.space != ColorSpace::SRGB)
        throw std::invalid_argument("extract_histogram: expects an sRGB image");
    ColorHistogram h;
    h.palette_version = palette.version;
    h.bins.assign(palette.entries.size(), 0.0);
    size_t n = img.pixel_count();
    for (size_t i = 0; i < n; ++i) {
        const float* px = img.data.data() + 3 * i;
        auto lab = srgb_to_lab(px[0], px[1], px[2]);
        size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (size_t k = 0; k < palette.entries.size(); ++k) {
            const auto& e = palette.entries[k];
            double d0 = lab[0] - e[0], d1 = lab[1] - e[1], d2 = lab[2] - e[2];
            double d = d0 * d0 + d1 * d1 + d2 * d2;
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        h.bins[best] += 1.0;
    }
    for (double& b : h.bins) b /= static_cast<double>(n);
    return h;
}

double color_distance(const ColorHistogram& a, const ColorHistogram& b) {
    if (a.palette_version != b.palette_version)
        throw std::invalid_argument("color_distance: palette version mismatch");
    if (a.bins.size() != b.bins.size())
        throw std::invalid_argument("color_distance: bin count mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.bins.size(); ++i) {
        double d = a.bins[i] - b.bins[i];
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace cdst
