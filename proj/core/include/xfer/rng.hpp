#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace xfer {

/// Counter-based 64-bit generator.
///
/// Output i of a stream with key `k` is `mix64(k + i * 0x9E3779B97F4A7C15)`,
/// the SplitMix64 finalizer applied to a Weyl sequence, so a stream is fully
/// described by (key, position). `split(tag)` derives an independent child key
/// by mixing the parent key with the tag; it does not advance the parent.
///
/// Normal variates use Box-Muller on two consecutive uniforms; integer draws
/// use rejection so they are unbiased. Nothing here depends on the standard
/// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept;

  std::uint64_t seed() const noexcept { return key_; }
  std::uint64_t position() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Uniform integer on [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n) noexcept;
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }
  bool bernoulli(double p) noexcept { return uniform() < p; }

  Rng split(std::uint64_t tag) const noexcept;

  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(i));
      std::swap(items[i - 1], items[j]);
    }
  }
  template <typename T>
  void shuffle(std::vector<T>& items) noexcept {
    shuffle(std::span<T>(items));
  }

  /// Indices 0..n-1 in random order.
  std::vector<std::size_t> permutation(std::size_t n) noexcept;

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

/// Tags for deriving per-component streams from a run seed.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kData = 2;
inline constexpr std::uint64_t kMask = 3;
inline constexpr std::uint64_t kDropout = 4;
inline constexpr std::uint64_t kHead = 5;
inline constexpr std::uint64_t kSplit = 6;
inline constexpr std::uint64_t kSubset = 7;
inline constexpr std::uint64_t kMapping = 8;
inline constexpr std::uint64_t kSample = 9;
inline constexpr std::uint64_t kNoise = 10;
inline constexpr std::uint64_t kReembed = 11;
}  // namespace stream

}  // namespace xfer
