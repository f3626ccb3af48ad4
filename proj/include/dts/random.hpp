#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "dts/autodiff.hpp"

namespace dts {

/// Seeded generator whose draws do not depend on the standard library's
/// distribution implementations, so runs replay identically everywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t bits() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n)
    {
        // rejection sampling removes modulo bias
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t r;
        do {
            r = engine_();
        } while (r >= limit);
        return static_cast<std::size_t>(r % n);
    }

    double normal(double mean = 0.0, double stddev = 1.0)
    {
        if (has_spare_) {
            has_spare_ = false;
            return mean + stddev * spare_;
        }
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& v)
    {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Derives an independent stream seed from a base seed and a tag.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag)
{
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace init {

inline ad::Tensor glorot(std::size_t out, std::size_t in, Rng& rng)
{
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<double> v(out * in);
    for (auto& x : v) x = rng.uniform(-limit, limit);
    return ad::Tensor::matrix(out, in, std::move(v));
}

inline ad::Tensor normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng)
{
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = rng.normal(0.0, stddev);
    return ad::Tensor::matrix(rows, cols, std::move(v));
}

inline ad::Tensor zeros(std::size_t n) { return ad::Tensor::zeros({n}); }
inline ad::Tensor constant(std::size_t n, double value) { return ad::Tensor({n}, std::vector<double>(n, value)); }

} // namespace init
} // namespace dts
