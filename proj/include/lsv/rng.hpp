// lsv/rng.hpp
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef LSV_RNG_HPP_
#define LSV_RNG_HPP_

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "lsv/common.hpp"

namespace lsv {

// Deterministic stream generator: xoshiro256++ with state derived from
// (seed, stream-id) via FNV-1a and splitmix64.  The algorithm is fixed so
// that a given (seed, stream-id, draw sequence) reproduces bit-identical
// values on every platform; std::mt19937 distributions are not portable
// across standard library implementations, so nothing here uses <random>.
//
// Gaussian draws use the Box-Muller transform.  The second value of each
// pair is cached, and the cache is part of the serializable state.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view stream_id) {
    std::uint64_t x = seed ^ Fnv1a64(stream_id);
    for (auto& w : state_) w = SplitMix64(x);
    // xoshiro must not start from the all-zero state.
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[3] = 1;
  }

  std::uint64_t NextU64() {
    const std::uint64_t result = Rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = Rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 significant bits.
  double NextUnit() { return static_cast<double>(NextU64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).  The modulo bias at 64-bit range is far below
  // anything observable here; what matters is determinism.
  std::uint64_t NextBelow(std::uint64_t n) { return n == 0 ? 0 : NextU64() % n; }

  // Standard normal via Box-Muller on (0,1] uniforms.
  double NextGaussian() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = 1.0 - NextUnit();  // (0, 1], keeps log() finite
    double u2 = NextUnit();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  struct State {
    std::array<std::uint64_t, 4> words;
    bool has_cached;
    double cached;
  };

  State Save() const { return State{state_, has_cached_, cached_}; }
  void Restore(const State& s) {
    state_ = s.words;
    has_cached_ = s.has_cached;
    cached_ = s.cached;
  }

  static std::uint64_t Fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return h;
  }

  static std::uint64_t SplitMix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  static std::uint64_t Rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_{};
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace lsv

#endif  // LSV_RNG_HPP_
