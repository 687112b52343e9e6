#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace rfl {

/// Deterministic random stream with named substreams. The same
/// (seed, label, draw index) triple yields the same value on every run;
/// no platform RNG is involved anywhere. Substreams are independent, so
/// consuming draws from one never shifts another.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed);

    // Derive an independent stream for a named stage ("init", "attack",
    // "data-shuffle", ...). Derivation does not consume draws from *this.
    RngStream substream(std::string_view label) const;

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64();
    double uniform();                         // [0, 1)
    double uniform(double lo, double hi);     // [lo, hi)
    double normal();                          // standard normal (polar method)
    double truncated_normal(double sigma);    // resample outside 2 sigma

    // Fisher-Yates permutation of 0..n-1.
    std::vector<std::uint32_t> permutation(std::uint32_t n);

private:
    RngStream(std::uint64_t seed, std::uint64_t stream_tag);

    std::uint64_t seed_;
    std::uint64_t state_[4];  // xoshiro256**
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace rfl
