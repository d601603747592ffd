#pragma once

#include <cstdint>

namespace signdamp {

/// splitmix64 finalizer (Steele, Lea, Flood 2014).
constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

/// Random-access stream: the word for index n under a given seed.
///
/// word(seed, n) = mix(mix(seed) + (uint64)n * golden). Negative n wraps
/// through two's complement, so every signed cell index has its own word.
constexpr std::uint64_t keyed_word(std::uint64_t seed, std::int64_t n) noexcept {
    return splitmix64_mix(splitmix64_mix(seed) + static_cast<std::uint64_t>(n) * kGolden);
}

/// Top 53 bits of a word mapped to [0, 1).
constexpr double unit_double(std::uint64_t w) noexcept {
    return static_cast<double>(w >> 11) * 0x1.0p-53;
}

/// Sequential splitmix64 generator. Satisfies UniformRandomBitGenerator.
class SplitMix64 {
public:
    using result_type = std::uint64_t;

    explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    constexpr result_type operator()() noexcept {
        state_ += kGolden;
        return splitmix64_mix(state_);
    }
    constexpr double uniform() noexcept { return unit_double((*this)()); }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }

private:
    std::uint64_t state_;
};

/// Seed of the i-th member of an ensemble derived from a base seed.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept {
    return splitmix64_mix(base ^ splitmix64_mix(index + 0xD1B54A32D192ED03ULL));
}

}  // namespace signdamp
