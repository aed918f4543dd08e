#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "kf/errors.hpp"

namespace kf {

/// Seeded generator with sampling primitives whose output depends only on
/// the mt19937_64 stream, so runs reproduce bit-for-bit across compilers
/// (std::uniform_int_distribution is implementation-defined and avoided).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // unbiased bounded draw in [0, n)
    std::uint64_t bounded(std::uint64_t n) {
        if (n == 0) throw InvalidArgument("bounded(0)");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    double uniform01() {
        return (engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// k distinct values from {0,...,n-1}, uniform without replacement
    /// (partial Fisher-Yates; order is random as well).
    std::vector<int> sample_without_replacement(int n, int k) {
        if (k < 0 || k > n) throw InvalidArgument("sample_without_replacement: k out of range");
        std::vector<int> pool(n);
        for (int i = 0; i < n; ++i) pool[i] = i;
        for (int i = 0; i < k; ++i) {
            const int j = i + static_cast<int>(bounded(static_cast<std::uint64_t>(n - i)));
            std::swap(pool[i], pool[j]);
        }
        pool.resize(k);
        return pool;
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace kf
