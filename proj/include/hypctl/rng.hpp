// Deterministic random numbers.  std::mt19937_64 is fully specified by the
// standard, but the distribution adaptors are not, so uniform / normal /
// shuffle are hand-rolled here to make every seeded run bit-identical across
// compilers and platforms.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace hypctl {

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1): 53 random mantissa bits.
    double uniform01() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double a, double b) { return a + (b - a) * uniform01(); }

    // Standard normal via Box-Muller (polar-free, fixed evaluation order).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        // avoid log(0)
        while (u1 <= 0.0) u1 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2; // 2*pi
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Uniform integer in [0, n) by rejection (unbiased, deterministic).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = eng_();
        while (x >= limit) x = eng_();
        return x % n;
    }

    // Fisher-Yates shuffle with the rejection sampler above.
    template <typename T>
    void shuffle(std::vector<T>& a) {
        for (std::size_t i = a.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(a[i - 1], a[j]);
        }
    }

  private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace hypctl
