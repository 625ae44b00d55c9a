#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace abnet {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds from one base seed.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept {
  return mix_seed(base ^ mix_seed(stream));
}

// Stream tags. Keep stable: they are part of the reproducibility contract.
namespace stream {
inline constexpr std::uint64_t kSynthetic = 1;
inline constexpr std::uint64_t kFolds = 2;
inline constexpr std::uint64_t kGateInit = 3;
inline constexpr std::uint64_t kExpertInit = 4;
inline constexpr std::uint64_t kEPhaseShuffle = 5;
inline constexpr std::uint64_t kMPhaseShuffle = 6;
inline constexpr std::uint64_t kBaseNet = 7;
inline constexpr std::uint64_t kKMeans = 8;
inline constexpr std::uint64_t kGatePretrain = 9;
inline constexpr std::uint64_t kBaseline = 10;
inline constexpr std::uint64_t kLogistic = 11;
inline constexpr std::uint64_t kRotation = 12;
}  // namespace stream

}  // namespace abnet
