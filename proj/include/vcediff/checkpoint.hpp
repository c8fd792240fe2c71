#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vcediff/gradcheck.hpp"

namespace vcediff {

/// Flat binary container of named float64 tensors.
///
/// Layout (all integers little-endian):
///   "VCEDCKPT" | u32 version (1) | u64 metadata bytes | metadata (UTF-8)
///   | u32 tensor count | per tensor: u32 name bytes, name, u32 rank,
///   u64 extents[rank], f64 values[numel]
///
/// A sidecar `<path>.manifest` lists one tensor per line:
///   name<TAB>extents joined by 'x'<TAB>fnv1a64 of the value bytes (hex)
struct Checkpoint {
  std::string metadata;
  std::vector<NamedTensor> tensors;

  const Tensor* find(const std::string& name) const;
};

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t tensor_checksum(const Tensor& t);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace vcediff
