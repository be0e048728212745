#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace cdst {

// Seeded generator with an explicit Box-Muller normal so draws do not depend
// on the standard library's unspecified normal_distribution algorithm.
class RandomSource {
 public:
    explicit RandomSource(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    double uniform() {  // [0,1)
        return (eng_() >> 11) * 0x1.0p-53;
    }

    // [lo, hi] inclusive
    int64_t uniform_int(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(eng_() % static_cast<uint64_t>(hi - lo + 1));
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform();  // (0,1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

 private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace cdst
