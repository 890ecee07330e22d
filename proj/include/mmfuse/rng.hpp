#ifndef MMFUSE_RNG_HPP_
#define MMFUSE_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <vector>

namespace mmfuse {

// PCG32 with an explicit, serializable two-word state. The standard library
// distributions are implementation-defined, so every random draw in the
// project goes through this class to keep runs bit-reproducible across
// toolchains. Checkpoints persist (state, inc) verbatim.
class Rng {
 public:
  Rng() : Rng(0x853c49e6748fea9bULL) {}

  explicit Rng(uint64_t seed, uint64_t stream = 0xda3e39cb94b95bdbULL)
      : state_(0), inc_((stream << 1u) | 1u) {
    next_u32();
    state_ += splitmix64(seed);
    next_u32();
  }

  uint32_t next_u32() {
    uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
    uint32_t rot = static_cast<uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
  }

  uint64_t next_u64() {
    uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  // Uniform integer in [0, n). Lemire multiply-shift; the ~2^-32 bias is
  // irrelevant at desk scale and keeps the draw count fixed.
  uint32_t below(uint32_t n) {
    return static_cast<uint32_t>((static_cast<uint64_t>(next_u32()) * n) >> 32);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller without the cached second value, so the generator state is the
  // whole story when serializing.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Independent child stream; advances this generator by one draw.
  Rng split() {
    Rng child;
    child.state_ = 0;
    child.inc_ = (splitmix64(next_u64()) << 1u) | 1u;
    child.next_u32();
    child.state_ += next_u64();
    child.next_u32();
    return child;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    // Fisher-Yates, explicit so the permutation is toolchain-independent.
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = below(static_cast<uint32_t>(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  uint64_t state() const { return state_; }
  uint64_t inc() const { return inc_; }
  void restore(uint64_t state, uint64_t inc) {
    state_ = state;
    inc_ = inc;
  }

  static uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  uint64_t state_;
  uint64_t inc_;
};

}  // namespace mmfuse

#endif  // MMFUSE_RNG_HPP_
