#pragma once

#include <array>
#include <cstdint>

namespace conewalk {

namespace detail {

struct PhiloxState {
    std::array<std::uint64_t, 4> counter;
    std::array<std::uint64_t, 2> key;
};

inline std::uint64_t mulhi64(std::uint64_t a, std::uint64_t b) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(a) * b) >> 64);
}

/// One block of Philox4x64-10 (Random123 constants and round order).
inline std::array<std::uint64_t, 4> philox4x64_10(
    std::array<std::uint64_t, 4> ctr, std::array<std::uint64_t, 2> key) {
    constexpr std::uint64_t m0 = 0xD2E7470EE14C6C93ULL;
    constexpr std::uint64_t m1 = 0xCA5A826395121157ULL;
    constexpr std::uint64_t w0 = 0x9E3779B97F4A7C15ULL;
    constexpr std::uint64_t w1 = 0xBB67AE8584CAA73BULL;
    for (int round = 0;; ++round) {
        const std::uint64_t hi0 = mulhi64(m0, ctr[0]);
        const std::uint64_t lo0 = m0 * ctr[0];
        const std::uint64_t hi1 = mulhi64(m1, ctr[2]);
        const std::uint64_t lo1 = m1 * ctr[2];
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        if (round == 9) break;
        key[0] += w0;
        key[1] += w1;
    }
    return ctr;
}

/// SplitMix64 finalizer, used to decorrelate derived stream keys.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace detail

/// Counter-based random stream (Philox4x64-10).
///
/// A stream is a pure function of (seed, stream, lane): the key holds
/// (seed, stream) and the counter holds (block index, lane). Draw i of
/// lane L is therefore reproducible under any scheduling, which is the
/// replay contract the walk engine relies on. Lanes are the per-trajectory
/// substreams; they never share state.
class RandomStream {
  public:
    explicit RandomStream(std::uint64_t seed, std::uint64_t stream = 0,
                          std::uint64_t lane = 0)
        : key_{seed, stream}, lane_(lane) {}

    /// Substream for one trajectory (or other parallel task) of this base
    /// stream. Independent of all other lanes of the same base.
    RandomStream lane_stream(std::uint64_t lane) const {
        return RandomStream(key_[0], key_[1], lane);
    }

    /// Fresh base stream derived from this one; `tag` distinguishes
    /// consumers (estimators, batches) sharing a master seed.
    RandomStream derived(std::uint64_t tag) const {
        return RandomStream(key_[0], detail::mix64(key_[1] ^ detail::mix64(tag)));
    }

    std::uint64_t seed() const { return key_[0]; }
    std::uint64_t stream_id() const { return key_[1]; }
    std::uint64_t lane() const { return lane_; }

    std::uint64_t next_u64() {
        if (pos_ == 4) refill();
        return buf_[pos_++];
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in [a, b).
    double next_uniform(double a, double b) {
        return a + (b - a) * next_uniform();
    }

  private:
    void refill() {
        buf_ = detail::philox4x64_10({block_++, lane_, 0, 0}, key_);
        pos_ = 0;
    }

    std::array<std::uint64_t, 2> key_;
    std::uint64_t lane_ = 0;
    std::uint64_t block_ = 0;
    std::array<std::uint64_t, 4> buf_{};
    int pos_ = 4;
};

}  // namespace conewalk
