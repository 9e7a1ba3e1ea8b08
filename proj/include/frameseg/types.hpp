#pragma once

#include <cstdint>
#include <limits>

namespace frameseg {

/// Sentinel class id excluded from losses and metrics.
inline constexpr std::uint16_t kIgnoreLabel = 65535;

/// Four-class structural label space.
enum StructuralClass : std::uint16_t {
  kWall = 0,
  kFloor = 1,
  kCeiling = 2,
  kNonStructural = 3,
};
inline constexpr std::uint16_t kStructuralClassCount = 4;

struct Point {
  float x = 0.0f;
  float y = 0.0f;
  float z = 0.0f;
  float intensity = 0.0f;

  friend bool operator==(const Point&, const Point&) = default;
};

}  // namespace frameseg
