#pragma once

#include <cmath>

namespace keyloco {

inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr double kTwoPi = 2.0 * kPi;

// Wrap angle to (-pi, pi]. wrap_pi(pi) == pi, wrap_pi(-pi) == pi.
template <typename T>
inline T wrap_pi(T a) {
  T r = std::fmod(a, static_cast<T>(kTwoPi));
  if (r > static_cast<T>(kPi)) {
    r -= static_cast<T>(kTwoPi);
  } else if (r <= static_cast<T>(-kPi)) {
    r += static_cast<T>(kTwoPi);
  }
  return r;
}

template <typename T>
inline T rad_to_deg(T a) {
  return a * static_cast<T>(180.0 / kPi);
}

template <typename T>
inline T deg_to_rad(T a) {
  return a * static_cast<T>(kPi / 180.0);
}

// Rotate a planar vector by angle a.
template <typename T>
inline void rotate2(T a, T x, T y, T& ox, T& oy) {
  const T c = std::cos(a);
  const T s = std::sin(a);
  ox = c * x - s * y;
  oy = s * x + c * y;
}

}  // namespace keyloco
