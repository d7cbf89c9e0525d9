#include "fedbilevel/random.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace fedbilevel {

namespace {

// Philox 4x32 round and key constants (Salmon et al. counter-based RNG).
constexpr std::uint32_t kPhiloxW32A = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW32B = 0xBB67AE85u;
constexpr std::uint32_t kPhiloxM4x32A = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM4x32B = 0xCD9E8D57u;

struct Counter4 {
  std::uint32_t v[4];
};

struct Key2 {
  std::uint32_t v[2];
};

inline void mul_hilo(std::uint32_t a, std::uint32_t b, std::uint32_t* hi,
                     std::uint32_t* lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  *hi = static_cast<std::uint32_t>(p >> 32);
  *lo = static_cast<std::uint32_t>(p);
}

inline Counter4 philox_round(Counter4 c, Key2 k) {
  std::uint32_t hi0, lo0, hi1, lo1;
  mul_hilo(kPhiloxM4x32A, c.v[0], &hi0, &lo0);
  mul_hilo(kPhiloxM4x32B, c.v[2], &hi1, &lo1);
  return Counter4{{hi1 ^ c.v[1] ^ k.v[0], lo1, hi0 ^ c.v[3] ^ k.v[1], lo0}};
}

inline Key2 raise_key(Key2 k) {
  return Key2{{k.v[0] + kPhiloxW32A, k.v[1] + kPhiloxW32B}};
}

// One 128-bit block: ten rounds keyed by the stream seed, counter laid out as
// (counter lo, counter hi, stream lo, stream hi).
inline Counter4 philox_block(const RandomStream& s) {
  Counter4 c{{static_cast<std::uint32_t>(s.counter),
              static_cast<std::uint32_t>(s.counter >> 32),
              static_cast<std::uint32_t>(s.stream_id),
              static_cast<std::uint32_t>(s.stream_id >> 32)}};
  Key2 k{{static_cast<std::uint32_t>(s.seed),
          static_cast<std::uint32_t>(s.seed >> 32)}};
  for (int round = 0; round < 10; ++round) {
    c = philox_round(c, k);
    k = raise_key(k);
  }
  return c;
}

inline std::uint64_t join64(std::uint32_t hi, std::uint32_t lo) {
  return (static_cast<std::uint64_t>(hi) << 32) | lo;
}

// Map a u64 to (0, 1): take the top 53 bits and center within the bin so the
// result is never exactly 0 or 1 (log() stays finite in Box-Muller).
inline double u64_to_open01(std::uint64_t x) {
  return (static_cast<double>(x >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

double uniform01(RandomStream& s) {
  const Counter4 b = philox_block(s);
  s.counter += 1;
  return u64_to_open01(join64(b.v[0], b.v[1]));
}

double gaussian(RandomStream& s) {
  const Counter4 b = philox_block(s);
  s.counter += 1;
  const double u1 = u64_to_open01(join64(b.v[0], b.v[1]));
  const double u2 = u64_to_open01(join64(b.v[2], b.v[3]));
  constexpr double two_pi = 6.283185307179586476925286766559;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

Vec gaussian_vec(RandomStream& s, Eigen::Index dim, double std) {
  if (dim < 0) {
    throw std::invalid_argument("gaussian_vec: dim must be non-negative");
  }
  if (std < 0.0) {
    throw std::invalid_argument("gaussian_vec: std must be non-negative");
  }
  Vec out(dim);
  if (std == 0.0) {
    out.setZero();
    skip_draws(s, static_cast<std::uint64_t>(dim));
    return out;
  }
  for (Eigen::Index i = 0; i < dim; ++i) {
    out[i] = std * gaussian(s);
  }
  return out;
}

std::uint64_t uniform_index(RandomStream& s, std::uint64_t n) {
  if (n == 0) {
    throw std::invalid_argument("uniform_index: n must be positive");
  }
  const Counter4 b = philox_block(s);
  s.counter += 1;
  // Fixed-point multiply keeps the map unbiased to within 2^-64.
  const std::uint64_t x = join64(b.v[0], b.v[1]);
  return static_cast<std::uint64_t>(
      (static_cast<unsigned __int128>(x) * n) >> 64);
}

}  // namespace fedbilevel
