#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace findep {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kEulerGamma = 0.57721566490153286;

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Counter-based uniform stream. Every draw is keyed by
// (seed, replication, unit, period, draw index), so simulation output is
// independent of evaluation order and safe to parallelize.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t key_mix(std::uint64_t h, std::uint64_t k) {
  return splitmix64(h ^ (k + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

inline double u01(std::uint64_t seed, std::uint64_t rep, std::uint64_t unit,
                  std::uint64_t period, std::uint64_t draw) {
  std::uint64_t h = splitmix64(seed);
  h = key_mix(h, rep);
  h = key_mix(h, unit);
  h = key_mix(h, period);
  h = key_mix(h, draw);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace findep
