#pragma once

#include <functional>

#include "fedbilevel/types.hpp"

namespace fedbilevel {

// Default central-difference step: 1e-5 * (1 + ||point||_inf).
double default_fd_step(const Vec& point);

// Central-difference gradient of a scalar function. Used as the independent
// reference when checking analytically assembled gradients; it deliberately
// shares no code with any derivative path. h must be positive.
Vec finite_diff_grad(const std::function<double(const Vec&)>& fn,
                     const Vec& point, double h);

inline Vec finite_diff_grad(const std::function<double(const Vec&)>& fn,
                            const Vec& point) {
  return finite_diff_grad(fn, point, default_fd_step(point));
}

}  // namespace fedbilevel
