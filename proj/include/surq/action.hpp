#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

namespace surq {

// Lateral high-level actions. Lane indices increase leftward (rightmost lane is 0),
// so `left` moves to lane + 1 and `right` to lane - 1.
enum class Action : std::uint8_t {
  keep = 0,
  left = 1,
  right = 2,
  none = 255,  // sentinel for masked-out participants
};

inline constexpr std::size_t kActionCount = 3;
inline constexpr std::array<Action, kActionCount> kAllActions = {Action::keep, Action::left,
                                                                 Action::right};

constexpr std::size_t action_index(Action a) { return static_cast<std::size_t>(a); }

constexpr bool is_lane_change(Action a) { return a == Action::left || a == Action::right; }

constexpr int lane_offset(Action a) {
  switch (a) {
    case Action::left:
      return 1;
    case Action::right:
      return -1;
    default:
      return 0;
  }
}

constexpr std::string_view to_string(Action a) {
  switch (a) {
    case Action::keep:
      return "keep";
    case Action::left:
      return "left";
    case Action::right:
      return "right";
    case Action::none:
      return "none";
  }
  return "?";
}

// Actions eligible for selection; keep is always eligible.
using ActionMask = std::array<bool, kActionCount>;
inline constexpr ActionMask kAnyAction = {true, true, true};

// Lane changes whose target lane exists on a road with `lanes` lanes.
constexpr ActionMask lane_mask(int lane, int lanes) { return {true, lane + 1 < lanes, lane > 0}; }

inline std::optional<Action> action_from_index(std::size_t i) {
  if (i >= kActionCount) return std::nullopt;
  return static_cast<Action>(i);
}

}  // namespace surq
