#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace ifprobe {

/// SplitMix64 (Steele, Lea & Flood). Every seeded choice in the toolkit
/// (split shuffles, synthetic representations, random directions) draws from
/// this generator so results are reproducible across implementations.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept;

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;

  /// Standard normal via one Box-Muller transform per call (two draws, the
  /// sine branch is discarded).
  double gaussian() noexcept;

  /// Index in [0, bound) computed as next() % bound. The slight modulo bias is
  /// part of the pinned algorithm.
  std::uint64_t below(std::uint64_t bound) noexcept;

 private:
  std::uint64_t state_;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

/// Derives a stream seed from a base seed and a string key.
std::uint64_t derive_seed(std::uint64_t base, std::string_view key) noexcept;

/// Fisher-Yates, walking i from n-1 down to 1 and swapping with below(i + 1).
template <typename T>
void shuffle(std::span<T> items, SplitMix64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

}  // namespace ifprobe
