#ifndef QLOSS_COMMON_HPP
#define QLOSS_COMMON_HPP

#include <cmath>
#include <limits>
#include <numbers>

namespace qloss {

// Vacuum permittivity [F/m].
inline constexpr double eps0 = 8.8541878128e-12;

inline constexpr double pi = std::numbers::pi;

inline bool approx_rel(double a, double b, double tol) {
    double scale = std::max(std::abs(a), std::abs(b));
    if (scale == 0.0) return true;
    return std::abs(a - b) <= tol * scale;
}

} // namespace qloss

#endif
