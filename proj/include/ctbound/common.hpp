#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace ctbound {

// Exit-code contract used by the CLI: 2 config, 3 input, 4 numeric.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

inline double wrap_angle(double phi) {
  double w = std::fmod(phi, kTwoPi);
  if (w < 0) w += kTwoPi;
  return w;
}

// Maps an angle difference into (-pi, pi].
inline double wrap_angle_diff(double d) {
  double w = std::fmod(d, kTwoPi);
  if (w <= -kPi) w += kTwoPi;
  if (w > kPi) w -= kTwoPi;
  return w;
}

// splitmix64; used to derive independent per-sample seeds from a master seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace ctbound
