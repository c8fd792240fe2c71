#include "vcediff/rng.hpp"

#include "vcediff/checkpoint.hpp"

namespace vcediff {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view name) {
  return splitmix64(splitmix64(master) ^ fnv1a64(std::span(reinterpret_cast<const unsigned char*>(name.data()), name.size())));
}

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  for (std::uint64_t k : keys) seed = splitmix64(seed ^ splitmix64(k));
  return seed;
}

RngStreams seed_all(std::uint64_t seed) {
  RngStreams s;
  s.master = seed;
  s.init.seed(derive_seed(seed, "init"));
  s.sampler.seed(derive_seed(seed, "sampler"));
  s.augment.seed(derive_seed(seed, "augment"));
  s.mixup.seed(derive_seed(seed, "mixup"));
  s.dropout.seed(derive_seed(seed, "dropout"));
  return s;
}

}  // namespace vcediff
