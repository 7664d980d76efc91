#pragma once

#include <string>

namespace plunder {

/// Physical dimension as integer exponents over length and time.
struct Dimension {
  int length = 0;
  int time = 0;

  constexpr Dimension() = default;
  constexpr Dimension(int l, int t) : length(l), time(t) {}

  constexpr bool dimensionless() const { return length == 0 && time == 0; }
  constexpr Dimension inverse() const { return {-length, -time}; }

  friend constexpr bool operator==(Dimension, Dimension) = default;
  friend constexpr Dimension operator*(Dimension a, Dimension b) {
    return {a.length + b.length, a.time + b.time};
  }
  friend constexpr Dimension operator/(Dimension a, Dimension b) {
    return {a.length - b.length, a.time - b.time};
  }

  /// e.g. "m/s^2", "1" for dimensionless.
  std::string to_string() const;
};

namespace dim {
inline constexpr Dimension none{0, 0};
inline constexpr Dimension length{1, 0};
inline constexpr Dimension time{0, 1};
inline constexpr Dimension velocity{1, -1};
inline constexpr Dimension acceleration{1, -2};
}  // namespace dim

}  // namespace plunder
