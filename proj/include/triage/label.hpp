#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace triage {

/// Ticket category. The numeric order is fixed and indexes every per-class
/// array in the project (class weights, confusion matrices, model outputs).
enum class Label : std::size_t { Change = 0, Problem = 1, Request = 2 };

inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<Label, kNumClasses> kAllLabels{Label::Change, Label::Problem,
                                                           Label::Request};

template <typename T>
using PerClass = std::array<T, kNumClasses>;

constexpr std::size_t index_of(Label l) noexcept { return static_cast<std::size_t>(l); }
constexpr Label label_at(std::size_t i) noexcept { return static_cast<Label>(i); }

std::string_view label_name(Label l) noexcept;   // "Change", "Problem", "Request"
std::string_view label_slug(Label l) noexcept;   // "change", "problem", "request"

/// Case-insensitive parse with surrounding whitespace trimmed.
std::optional<Label> parse_label(std::string_view text) noexcept;

/// Index of the largest element; ties go to the lowest index.
template <typename T>
constexpr std::size_t argmax_lowest(const PerClass<T>& v) noexcept {
  std::size_t best = 0;
  for (std::size_t c = 1; c < kNumClasses; ++c)
    if (v[c] > v[best]) best = c;
  return best;
}

}  // namespace triage
