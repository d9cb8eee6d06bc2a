// SPDX-License-Identifier: Apache-2.0
//
// Seeded randomness. One fixed generator (xoshiro256** seeded through
// splitmix64) so identical seeds reproduce identical sample sequences on
// every platform. Sampling recipes, all deterministic given the stream:
//
//   u64      : raw xoshiro256** output
//   uniform01: (u64 >> 11) * 2^-53, giving a double in [0, 1)
//   uniform  : lo + (hi - lo) * uniform01
//   gaussian : Box-Muller, z = sqrt(-2 ln(1 - u1)) * cos(2 pi * u2),
//              consuming two uniforms per sample
//   bernoulli: uniform01 < keep_prob
//
// Child streams for submodules derive as
//   child_seed = splitmix64(root_seed ^ fnv1a64(label))
// so independent components never share a stream.

#pragma once

#include <cstdint>
#include <string_view>

namespace loralab {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view s);

/// Deterministic child-stream seed for a named submodule.
std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view label);

class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    double uniform01();
    double uniform(double lo, double hi);     // lo < hi required
    double gaussian(double mean, double std); // std > 0 required
    bool bernoulli(double keep_prob);         // 0 < keep_prob <= 1 required

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t s_[4];
};

}  // namespace loralab
