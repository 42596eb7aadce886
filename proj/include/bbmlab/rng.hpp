#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace bbmlab {

/// Philox4x32-10 block function. Counter-based: output depends only on (counter, key).
inline std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                                  std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
    constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
    for (int r = 0; r < 10; ++r) {
        if (r > 0) {
            key[0] += W0;
            key[1] += W1;
        }
        const std::uint64_t p0 = std::uint64_t(M0) * ctr[0];
        const std::uint64_t p1 = std::uint64_t(M1) * ctr[2];
        const auto hi0 = std::uint32_t(p0 >> 32), lo0 = std::uint32_t(p0);
        const auto hi1 = std::uint32_t(p1 >> 32), lo1 = std::uint32_t(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Deterministic stream keyed by (seed, stream_id).
///
/// The key is the seed, the upper half of the counter is the stream id and the lower half
/// counts blocks, so distinct stream ids never share a block. Satisfies
/// UniformRandomBitGenerator, so Boost.Random distributions accept it.
class RngStream {
public:
    using result_type = std::uint64_t;

    RngStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_(stream_id) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        if (pos_ == 2) refill();
        return buf_[pos_++];
    }

    /// Uniform on the open interval (0, 1).
    double uniform() { return (double((*this)() >> 11) + 0.5) * 0x1.0p-53; }

    double normal();
    double exponential();

    /// Independent child stream. Children of distinct (stream, child) pairs do not collide
    /// with each other with overwhelming probability.
    RngStream split(std::uint64_t child) const {
        return RngStream(seed_, splitmix64(stream_ ^ splitmix64(child + 0x632BE59BD9B4E019ull)));
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_; }
    std::uint64_t blocks_used() const { return block_; }

private:
    void refill() {
        const auto out = philox4x32_10(
            {std::uint32_t(block_), std::uint32_t(block_ >> 32), std::uint32_t(stream_),
             std::uint32_t(stream_ >> 32)},
            {std::uint32_t(seed_), std::uint32_t(seed_ >> 32)});
        ++block_;
        buf_[0] = (std::uint64_t(out[1]) << 32) | out[0];
        buf_[1] = (std::uint64_t(out[3]) << 32) | out[2];
        pos_ = 0;
    }

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t block_ = 0;
    std::array<std::uint64_t, 2> buf_{};
    int pos_ = 2;
};

}  // namespace bbmlab
