#pragma once

#include <cmath>
#include <cstdint>

namespace hicospec {

// splitmix64: the per-site generator. Streams are keyed by hashing the
// (master seed, call seed, site) tuple, so realizations are independent of
// window placement and iteration order.
struct SplitMix64 {
  uint64_t s;

  explicit SplitMix64(uint64_t seed) : s(seed) {}

  uint64_t next() {
    uint64_t z = (s += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  // uniform in [0,1)
  double uniform() { return (next() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }
  // standard exponential via inversion; uniform() < 1 keeps the log finite
  double exponential() { return -std::log1p(-uniform()); }
};

inline uint64_t mix_u64(uint64_t a, uint64_t b) {
  SplitMix64 g(a ^ (0x9e3779b97f4a7c15ull + (b << 1)));
  g.next();
  return g.next() ^ b;
}

// zigzag Z -> N and Szudzik pairing N^2 -> N; gives every lattice site a
// window-independent nonnegative label
inline uint64_t zigzag(int64_t v) {
  return v >= 0 ? uint64_t(v) * 2 : uint64_t(-v) * 2 - 1;
}
inline int64_t pair_label(int64_t kx, int64_t ky) {
  const uint64_t a = zigzag(kx), b = zigzag(ky);
  const uint64_t p = a >= b ? a * a + a + b : b * b + a;
  return int64_t(p);
}
inline int64_t pair_label(int64_t kx) { return int64_t(zigzag(kx)); }

}  // namespace hicospec
