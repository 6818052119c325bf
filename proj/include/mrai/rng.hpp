#pragma once

#include <cstdint>
#include <random>

namespace mrai {

using Rng = std::mt19937_64;

// SplitMix64 finalizer. Used to derive independent sub-seeds from a master
// seed: derive_seed(master, stream) mixes the stream index into the master
// value, so no two cells or components share a random stream.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master,
                                    std::uint64_t stream) noexcept {
  return splitmix64(splitmix64(master) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

// Three-level variant for (master, cell, component) style derivations.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                                    std::uint64_t b) noexcept {
  return derive_seed(derive_seed(master, a), b);
}

}  // namespace mrai
