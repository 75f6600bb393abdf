#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace esmap {

/// Identifies one independent random stream: (seed, cell, sample).
///
/// The triple is mapped injectively onto the key and counter space of a
/// Philox4x64-10 generator, so every stream can be regenerated on its own,
/// in any order and on any thread, with bit-identical output.
struct StreamKey {
    std::uint64_t seed = 0;
    std::uint64_t cell_index = 0;
    std::uint64_t sample_index = 0;

    friend bool operator==(const StreamKey&, const StreamKey&) = default;
};

inline constexpr StreamKey make_stream(std::uint64_t seed, std::uint64_t cell_index,
                                       std::uint64_t sample_index) noexcept {
    return StreamKey{seed, cell_index, sample_index};
}

/// Philox4x64 with 10 rounds (Salmon et al., SC'11). One call to `block`
/// is a pure function of (key, counter).
class Philox4x64 {
public:
    using Counter = std::array<std::uint64_t, 4>;
    using Key = std::array<std::uint64_t, 2>;

    static constexpr Counter block(Counter ctr, Key key) noexcept {
        ctr = round(ctr, key);
        for (int r = 1; r < 10; ++r) {
            key[0] += kWeyl0;
            key[1] += kWeyl1;
            ctr = round(ctr, key);
        }
        return ctr;
    }

private:
    static constexpr std::uint64_t kMul0 = 0xD2E7470EE14C6C93ULL;
    static constexpr std::uint64_t kMul1 = 0xCA5A826395121157ULL;
    static constexpr std::uint64_t kWeyl0 = 0x9E3779B97F4A7C15ULL;
    static constexpr std::uint64_t kWeyl1 = 0xBB67AE8584CAA73BULL;

    static constexpr void mulhilo(std::uint64_t a, std::uint64_t b, std::uint64_t& hi,
                                  std::uint64_t& lo) noexcept {
        const unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
        hi = static_cast<std::uint64_t>(p >> 64);
        lo = static_cast<std::uint64_t>(p);
    }

    static constexpr Counter round(const Counter& c, const Key& k) noexcept {
        std::uint64_t hi0 = 0, lo0 = 0, hi1 = 0, lo1 = 0;
        mulhilo(kMul0, c[0], hi0, lo0);
        mulhilo(kMul1, c[2], hi1, lo1);
        return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }
};

/// UniformRandomBitGenerator over one stream. Key = (seed, cell), counter =
/// (block, sample, 0, 0); words are consumed four per block.
class StreamEngine {
public:
    using result_type = std::uint64_t;

    explicit StreamEngine(const StreamKey& key) noexcept
        : key_{key.seed, key.cell_index}, sample_(key.sample_index) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept {
        return std::numeric_limits<result_type>::max();
    }

    result_type operator()() noexcept {
        if (pos_ == 4) {
            buf_ = Philox4x64::block({block_++, sample_, 0, 0}, key_);
            pos_ = 0;
        }
        return buf_[pos_++];
    }

    /// Uniform double in the open interval (0, 1), 53-bit resolution.
    double uniform_open() noexcept {
        return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
    }

private:
    Philox4x64::Key key_;
    std::uint64_t sample_;
    std::uint64_t block_ = 0;
    Philox4x64::Counter buf_{};
    int pos_ = 4;
};

}  // namespace esmap
