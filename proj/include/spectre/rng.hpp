// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace spectre {

/// Seeded generator with platform-independent derived distributions. The
/// std:: distributions are implementation-defined, so corpora built with them
/// would differ between standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform integer in [lo, hi].
    std::uint64_t uniform(std::uint64_t lo, std::uint64_t hi) {
        if (hi <= lo) return lo;
        const std::uint64_t span = hi - lo;
        if (span == ~std::uint64_t{0}) return next();
        const std::uint64_t range = span + 1;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % range);
        std::uint64_t x;
        do x = next();
        while (x >= limit);
        return lo + x % range;
    }

    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(uniform(0, static_cast<std::uint64_t>(hi - lo)));
    }

    std::size_t index(std::size_t size) { return static_cast<std::size_t>(uniform(0, size - 1)); }

    /// Uniform double in [0, 1) with 53 bits of precision.
    double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    bool chance(double p) { return unit() < p; }

    template <class T>
    const T& pick(std::span<const T> items) {
        return items[index(items.size())];
    }
    template <class T>
    const T& pick(const std::vector<T>& items) {
        return items[index(items.size())];
    }

    /// `count` distinct indices from [0, size), in draw order.
    std::vector<std::size_t> sample_indices(std::size_t size, std::size_t count) {
        std::vector<std::size_t> idx(size);
        for (std::size_t i = 0; i < size; ++i) idx[i] = i;
        if (count > size) count = size;
        for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + index(size - i)]);
        idx.resize(count);
        return idx;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace spectre
