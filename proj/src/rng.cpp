#include "rfl/rng.hpp"

#include <cmath>

namespace rfl {
namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

RngStream::RngStream(std::uint64_t seed) : RngStream(seed, 0) {}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_tag) : seed_(seed) {
    std::uint64_t sm = seed ^ rotl(stream_tag, 17) ^ 0xD1B54A32D192ED03ULL;
    for (auto& s : state_) s = splitmix64(sm);
}

RngStream RngStream::substream(std::string_view label) const {
    return RngStream(seed_, fnv1a64(label));
}

std::uint64_t RngStream::next_u64() {
    // xoshiro256** (Blackman & Vigna, public domain reference).
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double RngStream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Marsaglia polar method: only sqrt/log, deterministic given the stream.
    double u, v, s;
    do {
        u = 2.0 * uniform() - 1.0;
        v = 2.0 * uniform() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
}

double RngStream::truncated_normal(double sigma) {
    double z;
    do {
        z = normal();
    } while (z < -2.0 || z > 2.0);
    return z * sigma;
}

std::vector<std::uint32_t> RngStream::permutation(std::uint32_t n) {
    std::vector<std::uint32_t> idx(n);
    for (std::uint32_t i = 0; i < n; ++i) idx[i] = i;
    for (std::uint32_t i = 0; i + 1 < n; ++i) {
        const std::uint32_t j = i + static_cast<std::uint32_t>(next_u64() % (n - i));
        std::swap(idx[i], idx[j]);
    }
    return idx;
}

}  // namespace rfl
