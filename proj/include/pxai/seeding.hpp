#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace pxai {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent RNG streams.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t hash_values(std::span<const double> values);

// Stream seed for a (seed, tag, salt) triple. Tags name the consumer
// ("shap", "lime", "tree", ...); salt distinguishes instances or trees.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t salt = 0);

// 16 lowercase hex digits.
std::string hex_digest(std::string_view bytes);

}  // namespace pxai
