#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace vcediff {

std::uint64_t splitmix64(std::uint64_t x);

/// Seed of the named sub-stream: splitmix64(splitmix64(master) ^ fnv1a64(name)).
std::uint64_t derive_seed(std::uint64_t master, std::string_view name);

/// Folds further keys (video, frame, epoch, ...) into a seed, one splitmix64
/// round per key.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

/// Independent generators for each stochastic part of training.
struct RngStreams {
  std::uint64_t master = 0;
  std::mt19937_64 init;
  std::mt19937_64 sampler;
  std::mt19937_64 augment;
  std::mt19937_64 mixup;
  std::mt19937_64 dropout;
};

RngStreams seed_all(std::uint64_t seed);

}  // namespace vcediff
