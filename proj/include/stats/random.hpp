#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "stats/tensor.hpp"

namespace stats {

/// Counter-based SplitMix64 stream.
///
/// Draw n (1-based) is mix(seed + n * 0x9E3779B97F4A7C15) where mix is
///
///     z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///     z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///     z =  z ^ (z >> 31)
///
/// The integer stream is bit-identical on every platform. Uniform doubles take
/// the top 53 bits. Normals use Box-Muller on two uniforms, emitting the cosine
/// branch then the sine branch of the same pair.
///
/// Child streams: split(k) seeds a new source with mix(seed + (k + 1) * 0xD1B54A32D192ED03).
class RandomSource {
public:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
    static constexpr std::uint64_t kSplitGamma = 0xD1B54A32D192ED03ULL;
    static constexpr const char* kAlgorithm = "splitmix64-counter/box-muller";

    explicit RandomSource(std::uint64_t seed = 0) : seed_(seed) {}

    static constexpr std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t counter() const noexcept { return counter_; }

    std::uint64_t next_u64() {
        ++counter_;
        return mix(seed_ + counter_ * kGamma);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n == 0) throw ContractViolation("uniform_index: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t r;
        do r = next_u64();
        while (r >= limit);
        return r % n;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        // (k + 0.5) * 2^-53 keeps u1 away from zero.
        const double u1 = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
        const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    RandomSource split(std::uint64_t stream) const { return RandomSource(mix(seed_ + (stream + 1) * kSplitGamma)); }

    /// In-place Fisher-Yates using this stream (portable, unlike std::shuffle).
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// i.i.d. N(0, 1) entries drawn in row-major order.
inline Tensor sample_standard_normal(RandomSource& source, const Shape& shape) {
    if (shape.empty()) throw ContractViolation("sample_standard_normal: empty shape");
    Tensor out(shape);
    for (double& v : out.values()) v = source.normal();
    return out;
}

}  // namespace stats
