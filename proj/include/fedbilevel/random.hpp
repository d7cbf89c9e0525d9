#pragma once

#include <cstdint>

#include "fedbilevel/types.hpp"

namespace fedbilevel {

// Counter-based random stream (Philox 4x32-10 under the hood).
//
// Every draw is a pure function of (seed, stream_id, counter), so a copied
// stream replays the exact same values and independent streams never share
// state. Devices get stream_id = device index; auxiliary consumers (problem
// generation, warm starts) use reserved ids well above any device count.
//
// RandomStream is a plain value type: copy it to snapshot a position, pass it
// by reference to consume draws. Each scalar draw advances `counter` by one.
struct RandomStream {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
  std::uint64_t counter = 0;
};

// Uniform double in (0, 1). Advances the counter by 1.
double uniform01(RandomStream& s);

// Standard normal draw (Box-Muller on one counter block). Advances by 1.
double gaussian(RandomStream& s);

// Vector of independent N(0, std^2) entries. Advances the counter by dim,
// also when std == 0 so that replay alignment does not depend on noise level.
Vec gaussian_vec(RandomStream& s, Eigen::Index dim, double std);

// Uniform index in [0, n). n must be positive. Advances the counter by 1.
std::uint64_t uniform_index(RandomStream& s, std::uint64_t n);

// Advance without producing values (used by oracles whose sampled quantity
// is deterministic but whose draw budget must stay aligned across calls).
inline void skip_draws(RandomStream& s, std::uint64_t n) { s.counter += n; }

}  // namespace fedbilevel
