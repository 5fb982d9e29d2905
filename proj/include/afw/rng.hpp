#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace afw {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to decorrelate derived seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives a child seed from a base seed and a path of integer labels, so that
/// e.g. (seed, worker 3) and (seed, worker 4) never share a stream.
inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t s = mix64(base);
  for (auto p : path) s = mix64(s ^ mix64(p + 0x632be59bd9b4e019ULL));
  return s;
}

// Stream labels. Keeping them distinct means the minibatch stream and the
// compute-time stream of a worker never coincide even with equal base seeds.
namespace stream {
inline constexpr std::uint64_t kSampling = 1;
inline constexpr std::uint64_t kLmo = 2;
inline constexpr std::uint64_t kComputeTime = 3;
inline constexpr std::uint64_t kStart = 4;
inline constexpr std::uint64_t kInjectedDelay = 5;
}  // namespace stream

}  // namespace afw
