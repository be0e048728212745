#include <array>
#include <cmath>
#include <random>

#include "cdst/colorlab.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace cdst;

namespace {

// Independent CIE route used as oracle: sRGB -> XYZ(D65) -> LAB, written
// against the published formulas rather than the library code.
std::array<double, 3> oracle_lab(double r, double g, double b) {
    auto dec = [](double c) {
        return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
    };
    double rl = dec(r), gl = dec(g), bl = dec(b);
    double x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
    double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
    double z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
    double xn = 0.4124564 + 0.3575761 + 0.1804375;
    double yn = 0.2126729 + 0.7151522 + 0.0721750;
    double zn = 0.0193339 + 0.1191920 + 0.9503041;
    auto f = [](double t) {
        return t > std::pow(6.0 / 29.0, 3) ? std::cbrt(t)
                                           : t / (3.0 * std::pow(6.0 / 29.0, 2)) + 4.0 / 29.0;
    };
    double fx = f(x / xn), fy = f(y / yn), fz = f(z / zn);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

ImageBuffer solid(int w, int h, float r, float g, float b) {
    ImageBuffer img(w, h, ColorSpace::SRGB);
    for (size_t i = 0; i < img.pixel_count(); ++i) {
        img.data[3 * i] = r;
        img.data[3 * i + 1] = g;
        img.data[3 * i + 2] = b;
    }
    return img;
}

ImageBuffer random_image(int w, int h, uint64_t seed) {
    std::mt19937_64 eng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    ImageBuffer img(w, h, ColorSpace::SRGB);
    for (float& v : img.data) v = u(eng);
    return img;
}

// Exhaustive nearest-neighbor assignment, all 180 distances per pixel.
ColorHistogram oracle_histogram(const ImageBuffer& img, const Palette& pal) {
    ColorHistogram h;
    h.palette_version = pal.version;
    h.bins.assign(pal.entries.size(), 0.0);
    for (size_t i = 0; i < img.pixel_count(); ++i) {
        const float* px = img.data.data() + 3 * i;
        auto lab = oracle_lab(px[0], px[1], px[2]);
        size_t best = 0;
        double best_d = 1e300;
        for (size_t k = 0; k < pal.entries.size(); ++k) {
            double d = 0.0;
            for (int c = 0; c < 3; ++c) {
                double diff = lab[c] - pal.entries[k][c];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        h.bins[best] += 1.0;
    }
    for (double& b : h.bins) b /= static_cast<double>(img.pixel_count());
    return h;
}

}  // namespace

TEST_CASE("convert: white point and grey chroma") {
    ImageBuffer white = solid(2, 2, 1, 1, 1);
    ImageBuffer lab = convert(white, ColorSpace::LAB);
    CHECK(std::fabs(lab.data[0] - 100.0) < 1e-6);
    CHECK(std::fabs(lab.data[1]) < 1e-6);
    CHECK(std::fabs(lab.data[2]) < 1e-6);

    ImageBuffer grey = solid(3, 1, 0.37f, 0.37f, 0.37f);
    ImageBuffer yuv = convert(grey, ColorSpace::YUV);
    CHECK(yuv.data[1] == 0.0f);
    CHECK(yuv.data[2] == 0.0f);
}

TEST_CASE("convert: pure red matches independent CIE evaluation") {
    auto got = srgb_to_lab(1.0, 0.0, 0.0);
    auto want = oracle_lab(1.0, 0.0, 0.0);
    for (int c = 0; c < 3; ++c) CHECK(std::fabs(got[c] - want[c]) < 1e-9);
    // and through the image path (float storage)
    ImageBuffer red = solid(1, 1, 1, 0, 0);
    ImageBuffer lab = convert(red, ColorSpace::LAB);
    for (int c = 0; c < 3; ++c) CHECK(std::fabs(lab.data[c] - want[c]) < 1e-3);
}

TEST_CASE("convert: identity and unsupported pairs") {
    ImageBuffer img = random_image(4, 4, 1);
    ImageBuffer same = convert(img, ColorSpace::SRGB);
    CHECK(same.data == img.data);
    ImageBuffer lab = convert(img, ColorSpace::LAB);
    CHECK_THROWS_AS(convert(lab, ColorSpace::HSV), std::invalid_argument);
}

TEST_CASE("convert: HSV and YUV round trips within 1e-5") {
    ImageBuffer img = random_image(100, 10, 42);  // 1000 pixels
    for (ColorSpace mid : {ColorSpace::HSV, ColorSpace::YUV}) {
        ImageBuffer back = convert(convert(img, mid), ColorSpace::SRGB);
        for (size_t i = 0; i < img.data.size(); ++i)
            CHECK(std::fabs(back.data[i] - img.data[i]) < 1e-5);
    }
}

TEST_CASE("greyscale: fixed point, weights, luma-equal pair") {
    ImageBuffer g = solid(2, 2, 0.6f, 0.6f, 0.6f);
    ImageBuffer gy = greyscale(g);
    for (float v : gy.data) CHECK(v == doctest::Approx(0.6f).epsilon(1e-7));

    ImageBuffer red = solid(1, 1, 1, 0, 0);
    CHECK(greyscale(red).data[0] == doctest::Approx(0.299).epsilon(1e-7));

    // Two colorizations sharing per-pixel luma: solve the luma equation for G.
    ImageBuffer a = random_image(8, 8, 7);
    ImageBuffer b = cdst::testsupport::luma_preserving_recolor(a, 8);
    CHECK(b.data != a.data);  // recoloring actually changed pixels
    ImageBuffer ga = greyscale(a), gb = greyscale(b);
    CHECK(ga.data == gb.data);
}

TEST_CASE("greyscale: commutes with permutation; idempotent through RGB") {
    ImageBuffer img = random_image(6, 6, 9);
    ImageBuffer gy = greyscale(img);
    // grey-as-RGB -> greyscale again is the same single-channel image
    ImageBuffer rgb(6, 6, ColorSpace::SRGB);
    for (size_t i = 0; i < gy.data.size(); ++i)
        rgb.data[3 * i] = rgb.data[3 * i + 1] = rgb.data[3 * i + 2] = gy.data[i];
    ImageBuffer gy2 = greyscale(rgb);
    for (size_t i = 0; i < gy.data.size(); ++i)
        CHECK(std::fabs(gy2.data[i] - gy.data[i]) < 1e-6f);
}

TEST_CASE("build_palette: 12x15 grid, distinct entries") {
    Palette pal = build_palette("default");
    CHECK(pal.entries.size() == 180);
    CHECK(pal.version == "rayleigh-12x15-v1");

    // Reconstruct via the independent oracle over the documented grid.
    int hue_count = 0;
    size_t idx = 0;
    double max_dev = 0.0;
    for (int hi = 0; hi < 12; ++hi) {
        ++hue_count;
        for (double s : {0.2, 0.4, 0.6, 0.8, 1.0})
            for (double v : {1.0 / 3.0, 2.0 / 3.0, 1.0}) {
                auto rgb = hsv_to_srgb(360.0 * hi / 12.0, s, v);
                auto lab = oracle_lab(rgb[0], rgb[1], rgb[2]);
                for (int c = 0; c < 3; ++c)
                    max_dev = std::max(max_dev, std::fabs(lab[c] - pal.entries[idx][c]));
                ++idx;
            }
    }
    CHECK(hue_count == 12);
    CHECK(idx == 180);
    CHECK(max_dev < 1e-9);

    // pairwise distance scan
    double min_d = 1e300;
    for (size_t i = 0; i < pal.entries.size(); ++i)
        for (size_t j = i + 1; j < pal.entries.size(); ++j) {
            double d = 0.0;
            for (int c = 0; c < 3; ++c) {
                double diff = pal.entries[i][c] - pal.entries[j][c];
                d += diff * diff;
            }
            min_d = std::min(min_d, d);
        }
    CHECK(min_d > 1e-12);

    CHECK_THROWS_AS(build_palette("no-such-version"), std::invalid_argument);
}

TEST_CASE("extract_histogram: one-hot, normalization, oracle equality") {
    Palette pal = build_palette("default");

    // a solid image at an exact palette grid color is one-hot at its index
    auto rgb = hsv_to_srgb(90.0, 0.8, 1.0);  // hue index 3, s index 3, v index 2
    size_t expect_idx = 3 * 15 + 3 * 3 + 2;
    ImageBuffer img = solid(4, 4, static_cast<float>(rgb[0]), static_cast<float>(rgb[1]),
                            static_cast<float>(rgb[2]));
    ColorHistogram h = extract_histogram(img, pal);
    CHECK(h.bins[expect_idx] == doctest::Approx(1.0));

    double total = 0.0;
    ColorHistogram hr = extract_histogram(random_image(16, 16, 3), pal);
    for (double b : hr.bins) {
        CHECK(b >= 0.0);
        total += b;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    for (uint64_t seed = 0; seed < 20; ++seed) {
        ImageBuffer r = random_image(16, 16, 1000 + seed);
        ColorHistogram got = extract_histogram(r, pal);
        ColorHistogram want = oracle_histogram(r, pal);
        CHECK(got.bins == want.bins);
    }
}

TEST_CASE("extract_histogram: invariant under pixel permutation") {
    Palette pal = build_palette("default");
    ImageBuffer img = random_image(8, 8, 5);
    ImageBuffer shuffled = img;
    std::mt19937_64 eng(6);
    for (size_t i = img.pixel_count() - 1; i > 0; --i) {
        size_t j = eng() % (i + 1);
        for (int c = 0; c < 3; ++c)
            std::swap(shuffled.data[3 * i + c], shuffled.data[3 * j + c]);
    }
    CHECK(extract_histogram(img, pal).bins == extract_histogram(shuffled, pal).bins);
}

TEST_CASE("color_distance: identity, one-hots, formula, triangle inequality") {
    Palette pal = build_palette("default");
    ColorHistogram a, b;
    a.palette_version = b.palette_version = pal.version;
    a.bins.assign(180, 0.0);
    b.bins.assign(180, 0.0);
    a.bins[3] = 1.0;
    b.bins[90] = 1.0;
    CHECK(color_distance(a, a) == 0.0);
    CHECK(color_distance(a, b) == doctest::Approx(std::sqrt(2.0)));
    CHECK(color_distance(a, b) == color_distance(b, a));

    ColorHistogram bad = b;
    bad.palette_version = "other";
    CHECK_THROWS_AS(color_distance(a, bad), std::invalid_argument);

    std::mt19937_64 eng(11);
    auto rand_hist = [&]() {
        ColorHistogram h;
        h.palette_version = pal.version;
        h.bins.assign(180, 0.0);
        double s = 0.0;
        for (double& v : h.bins) {
            v = (eng() >> 11) * 0x1.0p-53;
            s += v;
        }
        for (double& v : h.bins) v /= s;
        return h;
    };
    for (int trial = 0; trial < 50; ++trial) {
        ColorHistogram x = rand_hist(), y = rand_hist(), z = rand_hist();
        double direct = 0.0;
        for (int i = 0; i < 180; ++i) direct += (x.bins[i] - y.bins[i]) * (x.bins[i] - y.bins[i]);
        CHECK(color_distance(x, y) == doctest::Approx(std::sqrt(direct)).epsilon(1e-12));
        CHECK(color_distance(x, z) <= color_distance(x, y) + color_distance(y, z) + 1e-12);
    }
}

TEST_CASE("extract_histogram: rejects empty and non-sRGB") {
    Palette pal = build_palette("default");
    ImageBuffer img;
    CHECK_THROWS(extract_histogram(img, pal));
}
