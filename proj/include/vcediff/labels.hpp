#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>

namespace vcediff {

inline constexpr std::size_t kNumClasses = 17;

/// Canonical class order used by every file format and table.
inline constexpr std::array<std::string_view, kNumClasses> kLabelNames = {
    "mouth",       "esophagus",   "stomach",  "small intestine", "colon",
    "z-line",      "pylorus",     "ileocecal valve", "active bleeding", "angiectasia",
    "blood",       "erosion",     "erythema", "hematin",         "lymphangioectasis",
    "polyp",       "ulcer"};

inline std::optional<std::size_t> label_index(std::string_view name) {
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (kLabelNames[i] == name) return i;
  }
  return std::nullopt;
}

}  // namespace vcediff
