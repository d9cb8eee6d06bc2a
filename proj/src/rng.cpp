// SPDX-License-Identifier: Apache-2.0

#include "loralab/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace loralab {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view label) {
    return splitmix64(root_seed ^ fnv1a64(label));
}

Rng::Rng(std::uint64_t seed) : seed_(seed) {
    // xoshiro state must not be all-zero; splitmix64 expansion guarantees it.
    std::uint64_t x = seed;
    for (auto& s : s_) {
        x = splitmix64(x);
        s = x;
    }
}

namespace {
inline std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}
}  // namespace

std::uint64_t Rng::next_u64() {
    // xoshiro256**
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    if (!(lo < hi)) throw std::invalid_argument("Rng::uniform: requires lo < hi");
    return lo + (hi - lo) * uniform01();
}

double Rng::gaussian(double mean, double std) {
    if (!(std > 0.0)) throw std::invalid_argument("Rng::gaussian: requires std > 0");
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log1p(-u1));  // 1 - u1 in (0, 1], no log(0)
    const double z = r * std::cos(2.0 * std::numbers::pi * u2);
    return mean + std * z;
}

bool Rng::bernoulli(double keep_prob) {
    if (!(keep_prob > 0.0) || keep_prob > 1.0)
        throw std::invalid_argument("Rng::bernoulli: requires 0 < keep_prob <= 1");
    return uniform01() < keep_prob;
}

}  // namespace loralab
