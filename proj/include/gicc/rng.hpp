#ifndef GICC_RNG_HPP
#define GICC_RNG_HPP

#include <cstdint>
#include <cmath>

#include "gicc/normal.hpp"

// Counter-derived random streams. Every consumer gets its own stream keyed
// by (seed, id...), so results are bit-identical no matter how work is
// scheduled across threads. Generator is xoshiro256++ seeded via splitmix64;
// normals come from the quantile transform, keeping draws platform-stable.

namespace gicc {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& s) {
  std::uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
inline std::uint64_t rotl(std::uint64_t v, int k) {
  return (v << k) | (v >> (64 - k));
}
} // namespace detail

class RngStream {
public:
  explicit RngStream(std::uint64_t seed, std::uint64_t id0 = 0,
                     std::uint64_t id1 = 0, std::uint64_t id2 = 0) {
    std::uint64_t s = seed;
    s ^= detail::splitmix64(s) + 0x632be59bd9b4e019ULL * id0;
    s ^= detail::splitmix64(s) + 0x9e3779b97f4a7c15ULL * id1;
    s ^= detail::splitmix64(s) + 0xd1b54a32d192ed03ULL * id2;
    for (auto& w : state_) w = detail::splitmix64(s);
    if (!(state_[0] | state_[1] | state_[2] | state_[3])) state_[0] = 1;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = detail::rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  // uniform on (0,1), both endpoints excluded
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() { return norm_quantile(uniform()); }

  double exponential() { return -std::log(uniform()); }

private:
  std::uint64_t state_[4];
};

} // namespace gicc

#endif
