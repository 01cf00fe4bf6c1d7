#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedlm {

/// Engine used for every sampling step (ground truth, data, probes).
using Engine = std::mt19937_64;

/// SplitMix64 finalizer. Bijective on 64-bit words.
inline std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based seed derivation: folds `path` into `master` so that every
/// (seed index, role, node, ...) tuple gets an independent 64-bit subseed.
/// Adding a new path never changes the subseed of an existing one.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) noexcept;

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit word.
inline double to_unit(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Stateless uniform draw number `index` of the stream named by `seed`.
/// Used for dither so a receiver can regenerate any coordinate's draw
/// from the payload seed alone.
inline double counter_uniform(std::uint64_t seed, std::uint64_t index) noexcept {
  return to_unit(mix64(seed + 0x9e3779b97f4a7c15ULL * (index + 1)));
}

/// Role tags for derive_seed paths.
enum class SeedRole : std::uint64_t {
  ground_truth = 1,
  perturbation = 2,
  node_data = 3,
  probes = 4,
  dither = 5,
  calibration = 6,
  test = 7,
  oracle = 8,
  score_dither = 9,
};

inline std::uint64_t tag(SeedRole r) noexcept { return static_cast<std::uint64_t>(r); }

}  // namespace fedlm
